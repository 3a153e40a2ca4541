#pragma once

#include <functional>
#include <span>
#include <vector>

#include "rmflow/autodiff.hpp"
#include "rmflow/flow.hpp"
#include "rmflow/nets.hpp"
#include "rmflow/rng.hpp"
#include "rmflow/tensor.hpp"

namespace rmflow {

struct LossConfig {
  double lambda1 = 0.0;   // likelihood term
  double lambda2 = 0.0;   // guidance embedding penalty
  double m = 0.5;         // adaptive weight exponent
  double eps_w = 1e-3;
  double rl_weight = 0.0;

  void validate() const;
  bool operator==(const LossConfig&) const = default;
};

struct LossReport {
  double total = 0.0;
  double cmfm = 0.0;
  double nll = 0.0;
  double guidance_reg = 0.0;
  double rl = 0.0;
  double grad_norm = 0.0;
};

/// Per-sample reward r(x̂) for the policy-gradient term, shape [B].
using RewardFn = std::function<Tensor(const Tensor& samples)>;

// Graph builders. `bound` is net.params() bound on the tape that owns every
// Var argument. The net's NFE counter is not touched.

/// Weighted mean-flow regression with the JVP target under stop-gradient.
/// `xt` may depend on trainable parameters; its tangent is replaced by v_cond.
ad::Var cmfm_loss(const VelocityNet& net, std::span<const ad::Var> bound, ad::Var xt, const Tensor& v_cond,
                  const Tensor& t, const Tensor& r, const LossConfig& cfg);
ad::Var cmfm_loss(const VelocityNet& net, std::span<const ad::Var> bound, const FlowBatch& batch,
                  const LossConfig& cfg);
/// Weighted instantaneous flow matching: û_{t,t}(x_t) regressed on v_cond.
ad::Var cfm_loss(const VelocityNet& net, std::span<const ad::Var> bound, const FlowBatch& batch,
                 const LossConfig& cfg);

/// x0 + kGenerationSign·net(x0, 1, 0): the one-step transport as a graph.
ad::Var generate_graph(const VelocityNet& net, std::span<const ad::Var> bound, ad::Var x0);

/// mean ||(x_data + σ_min·ε) − (x0 + û(x0))||².
ad::Var nll_loss(const VelocityNet& net, std::span<const ad::Var> bound, ad::Var x0, const Tensor& x_data,
                 const Tensor& eps, const InterpolantConfig& interp);
ad::Var nll_loss(const VelocityNet& net, std::span<const ad::Var> bound, ad::Var x0, const Tensor& x_data, Rng& rng,
                 const InterpolantConfig& interp);

/// mean ||φ||² over the batch of embeddings.
ad::Var guidance_reg(ad::Var embeddings);
ad::Var guidance_reg(const GuidanceEncoder& enc, std::span<const ad::Var> bound, ad::Var context);

/// Per-sample Gaussian log-density of x_tgt under the refined one-step
/// sampler, shape [B]. Throws ConfigError unless σ < σ_min.
ad::Var log_likelihood(const VelocityNet& net, std::span<const ad::Var> bound, ad::Var x0, const Tensor& x_tgt,
                       const InterpolantConfig& interp);
Tensor log_likelihood(const VelocityNet& net, const Tensor& x_tgt, const Tensor& x0, const InterpolantConfig& interp);
/// The additive constant −(d/2)·log(2π(σ_min² − σ²)).
double log_likelihood_constant(std::size_t d, const InterpolantConfig& interp);

/// −mean(log p(x_tgt | x0)·reward) with the reward held constant.
ad::Var rl_loss(const VelocityNet& net, std::span<const ad::Var> bound, ad::Var x0, const Tensor& x_tgt,
                const Tensor& reward, const InterpolantConfig& interp);

/// Every random quantity one training step consumes. Given these the joint
/// objective is a pure function of the parameters.
struct TrainingDraws {
  Tensor x_data;       // [B×d]
  Tensor context;      // [B×c]; empty shape when unguided
  Tensor prior_noise;  // standard normal, [B×d]
  Tensor path_noise;   // ε of the interpolant
  Tensor nll_noise;    // ε of the smoothed target
  Tensor refine_noise; // ε₂ for the policy-gradient samples
  Tensor t;            // network times
  Tensor r;
};

struct RmflowResult {
  LossReport report;
  std::vector<Tensor> net_grads;  // empty when gradients were not requested
  std::vector<Tensor> enc_grads;
};

/// Joint objective cmfm + λ₁·nll + λ₂·reg + rl_weight·rl. `enc` non-null
/// selects guided mode: x0 = φ(c) + σ_c·ε, else x0 = ε. Terms with zero
/// weight are still reported (value only) but never enter the graph, so
/// λ₁ = λ₂ = rl_weight = 0 yields total == cmfm bitwise.
RmflowResult rmflow_loss(const VelocityNet& net, const GuidanceEncoder* enc, const TrainingDraws& draws,
                         const LossConfig& cfg, const InterpolantConfig& interp, bool want_grads = true,
                         const RewardFn& reward = {});

/// Value of cmfm_loss without gradients, for held-out monitoring.
double cmfm_value(const VelocityNet& net, const FlowBatch& batch, const LossConfig& cfg);

}  // namespace rmflow
