#pragma once

#include <cstddef>
#include <functional>

#include "rmflow/autodiff.hpp"
#include "rmflow/rng.hpp"
#include "rmflow/tensor.hpp"

namespace rmflow {

// Two clocks are in play.
//
// Path time s runs from the prior (s = 0) to the data (s = 1):
//   x_s = s·x1 + (1 − s)·x0 + γ(s)·ε,   γ(s) = η(1 − s).
//
// Network time t = 1 − s is what the velocity net and the (t, r) sampler see.
// Training pairs satisfy r ≤ t, and the net learns the average velocity
// û_{t,r}(x_t) = (x_r − x_t)/(r − t) in network time. Generating data from the
// prior therefore runs network time from 1 down to 0. A full-span step is
//   x_data = x_prior + (0 − 1)·û_{1,0}(x_prior),
// so the public one-step field is kGenerationSign·net(x, 1, 0).
inline constexpr double kGenerationSign = -1.0;

[[nodiscard]] inline double path_time(double network_t) noexcept { return 1.0 - network_t; }

struct InterpolantConfig {
  double eta = 5e-2;
  double sigma_min = 1e-3;
  double sigma = 5e-4;
  double sigma_c = 1e-3;
  double t_clamp = 1.0 - 1e-5;  // cap on path time s when eta > 0

  void validate() const;
  /// σ_min² − σ², the variance of the refinement noise. Factored so that
  /// σ = σ_min gives exactly zero.
  [[nodiscard]] double refinement_variance() const noexcept { return (sigma_min - sigma) * (sigma_min + sigma); }
  bool operator==(const InterpolantConfig&) const = default;
};

enum class TimeDistribution { linear, uniform };  // p(t) = 2t, or U[0,1]

struct TimeSamplerConfig {
  double q = 0.25;  // probability that r ≠ t
  TimeDistribution distribution = TimeDistribution::linear;

  void validate() const;
  bool operator==(const TimeSamplerConfig&) const = default;
};

struct TimePair {
  Tensor t;  // [B]
  Tensor r;  // r ≤ t, [B]
};

/// t = √u (or u), then r ~ U[0, t) with probability q and r = t otherwise.
/// Path time: the density 2t favours the data end.
TimePair sample_times(Rng& rng, const TimeSamplerConfig& cfg, std::size_t batch);

/// Path pair (t, r), r ≤ t, to the network pair (1 − r, 1 − t). The net input
/// sits at the prior-side end r and the span runs to t; for r = t this is the
/// instantaneous field at path time t.
TimePair network_times(const TimePair& path);

/// γ(s) per row; zero when η = 0.
Tensor gamma_schedule(const InterpolantConfig& cfg, const Tensor& s);

/// x_s for path times s [B] with explicit noise ε [B×d]. With η = 0 the
/// noise is ignored.
Tensor interpolate(const InterpolantConfig& cfg, const Tensor& x0, const Tensor& x1, const Tensor& s,
                   const Tensor& eps);
/// Draws ε internally (always, so the stream does not depend on η).
Tensor interpolate(Rng& rng, const InterpolantConfig& cfg, const Tensor& x0, const Tensor& x1, const Tensor& s);
/// Graph version; x0 may depend on trainable parameters (guided prior).
ad::Var interpolate(const InterpolantConfig& cfg, ad::Var x0, const Tensor& x1, const Tensor& s, const Tensor& eps);

/// u_s(x | x0, x1) = (γ̇/γ)(x − s·x1 − (1 − s)·x0) + (x1 − x0), in path time.
/// With η = 0 the first term is dropped. Throws NumericError for s > t_clamp
/// when η > 0.
Tensor conditional_velocity(const InterpolantConfig& cfg, const Tensor& x, const Tensor& x0, const Tensor& x1,
                            const Tensor& s);

/// Instantaneous velocity u(x, s) in path time.
using PathField = std::function<Tensor(const Tensor& x, double s)>;
/// The exact path s ↦ x_s.
using PathCurve = std::function<Tensor(double s)>;

/// (1/(r − t))·∫_t^r u(x_s, s) ds by composite Simpson with n_quad (odd) nodes.
/// Test oracle; times here are in whatever clock `field` and `path` use.
Tensor mean_velocity_exact(const PathField& field, const PathCurve& path, double t, double r,
                           std::size_t n_quad = 129);

struct FlowBatch {
  Tensor x0;
  Tensor x1;
  Tensor xt;
  Tensor t;       // network time
  Tensor r;
  Tensor v_cond;  // conditional velocity in network time, −u_{1−t}
  Tensor path_noise;
};

/// Clamps network t from below so the path time stays within t_clamp.
Tensor clamp_network_times(const InterpolantConfig& cfg, const Tensor& t);

/// Deterministic given the draws; `t` is clamped as above and r ≤ t kept.
FlowBatch make_flow_batch(const InterpolantConfig& cfg, const Tensor& x0, const Tensor& x1, Tensor t, Tensor r,
                          const Tensor& path_noise);
FlowBatch make_flow_batch(Rng& rng, const InterpolantConfig& cfg, const TimeSamplerConfig& times, const Tensor& x0,
                          const Tensor& x1);

}  // namespace rmflow
