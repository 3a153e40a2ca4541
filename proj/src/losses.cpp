#include "rmflow/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "rmflow/error.hpp"

namespace rmflow {
namespace {

Tensor adaptive_weights(const Tensor& sq, const LossConfig& cfg) {
  Tensor w(sq.shape());
  for (std::size_t i = 0; i < sq.size(); ++i) w[i] = std::pow(sq[i] + cfg.eps_w, -cfg.m);
  return w;
}

// mean_i sg(w_i)·||Δ_i||²
ad::Var weighted_regression(ad::Var delta, const LossConfig& cfg) {
  ad::Tape& tape = *delta.tape();
  ad::Var sq = ad::row_sqnorm(delta);
  ad::Var w = tape.constant(adaptive_weights(sq.value(), cfg));
  return ad::mean(ad::mul(w, sq));
}

void require_refinement(const InterpolantConfig& interp) {
  if (!(interp.sigma < interp.sigma_min)) {
    throw ConfigError("log-likelihood needs sigma < sigma_min (got sigma=" + std::to_string(interp.sigma) +
                      ", sigma_min=" + std::to_string(interp.sigma_min) + ")");
  }
}

Tensor sub_scalar_from(double a, const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = a - x[i];
  return out;
}

double grads_sqnorm(const std::vector<Tensor>& g) {
  double acc = 0.0;
  for (const auto& t : g) acc += squared_norm(t);
  return acc;
}

}  // namespace

void LossConfig::validate() const {
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0) || !(rl_weight >= 0.0)) {
    throw ConfigError("loss: lambda1, lambda2 and rl_weight must be >= 0");
  }
  if (!(m >= 0.0 && m < 1.0)) throw ConfigError("loss.m must lie in [0, 1)");
  if (!(eps_w > 0.0)) throw ConfigError("loss.eps_w must be > 0");
}

ad::Var cmfm_loss(const VelocityNet& net, std::span<const ad::Var> bound, ad::Var xt, const Tensor& v_cond,
                  const Tensor& t, const Tensor& r, const LossConfig& cfg) {
  ad::Tape& tape = *xt.tape();
  // One forward pass carries the JVP along (v_cond, 1, 0) over (x, t, r).
  ad::Var x = ad::seed_tangent(xt, v_cond);
  ad::Var tv = tape.constant(t, Tensor::full(t.shape(), 1.0));
  ad::Var rv = tape.constant(r);
  ad::Var out = net.apply(bound, x, tv, rv);

  ad::Var dudt = ad::stop_gradient(ad::tangent_of(out));
  ad::Var span = tape.constant(sub(r, t));
  ad::Var target = ad::stop_gradient(ad::add(tape.constant(v_cond), ad::scale_rows(dudt, span)));
  return weighted_regression(ad::sub(out, target), cfg);
}

ad::Var cmfm_loss(const VelocityNet& net, std::span<const ad::Var> bound, const FlowBatch& batch,
                  const LossConfig& cfg) {
  if (bound.empty()) throw ShapeError("cmfm_loss: no bound parameters");
  ad::Tape& tape = *bound[0].tape();
  return cmfm_loss(net, bound, tape.borrow(batch.xt), batch.v_cond, batch.t, batch.r, cfg);
}

ad::Var cfm_loss(const VelocityNet& net, std::span<const ad::Var> bound, const FlowBatch& batch,
                 const LossConfig& cfg) {
  if (bound.empty()) throw ShapeError("cfm_loss: no bound parameters");
  ad::Tape& tape = *bound[0].tape();
  ad::Var tv = tape.borrow(batch.t);
  ad::Var out = net.apply(bound, tape.borrow(batch.xt), tv, tv);
  return weighted_regression(ad::sub(out, tape.borrow(batch.v_cond)), cfg);
}

ad::Var generate_graph(const VelocityNet& net, std::span<const ad::Var> bound, ad::Var x0) {
  ad::Tape& tape = *x0.tape();
  const std::size_t b = x0.value().rows();
  ad::Var out = net.apply(bound, x0, tape.constant(Tensor::full(Shape{b}, 1.0)), tape.constant(Tensor(Shape{b})));
  return ad::add(x0, ad::scale(out, kGenerationSign));
}

ad::Var nll_loss(const VelocityNet& net, std::span<const ad::Var> bound, ad::Var x0, const Tensor& x_data,
                 const Tensor& eps, const InterpolantConfig& interp) {
  if (x_data.shape() != x0.value().shape() || eps.shape() != x_data.shape()) {
    throw ShapeError("nll_loss: x0 " + shape_str(x0.value().shape()) + ", x_data " + shape_str(x_data.shape()) +
                     ", eps " + shape_str(eps.shape()) + " disagree");
  }
  ad::Tape& tape = *x0.tape();
  Tensor smoothed = x_data;
  axpy_inplace(smoothed, interp.sigma_min, eps);
  ad::Var resid = ad::sub(tape.constant(std::move(smoothed)), generate_graph(net, bound, x0));
  return ad::mean(ad::row_sqnorm(resid));
}

ad::Var nll_loss(const VelocityNet& net, std::span<const ad::Var> bound, ad::Var x0, const Tensor& x_data, Rng& rng,
                 const InterpolantConfig& interp) {
  const Tensor eps = randn(rng, x_data.shape());
  return nll_loss(net, bound, x0, x_data, eps, interp);
}

ad::Var guidance_reg(ad::Var embeddings) { return ad::mean(ad::row_sqnorm(embeddings)); }

ad::Var guidance_reg(const GuidanceEncoder& enc, std::span<const ad::Var> bound, ad::Var context) {
  return guidance_reg(enc.apply(bound, context));
}

double log_likelihood_constant(std::size_t d, const InterpolantConfig& interp) {
  require_refinement(interp);
  return -0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi * interp.refinement_variance());
}

ad::Var log_likelihood(const VelocityNet& net, std::span<const ad::Var> bound, ad::Var x0, const Tensor& x_tgt,
                       const InterpolantConfig& interp) {
  require_refinement(interp);
  if (x_tgt.shape() != x0.value().shape()) throw ShapeError("log_likelihood: x_tgt and x0 shapes differ");
  ad::Tape& tape = *x0.tape();
  ad::Var sq = ad::row_sqnorm(ad::sub(tape.constant(x_tgt), generate_graph(net, bound, x0)));
  const double c = log_likelihood_constant(x_tgt.cols(), interp);
  return ad::add_scalar(ad::scale(sq, -0.5 / interp.refinement_variance()), c);
}

Tensor log_likelihood(const VelocityNet& net, const Tensor& x_tgt, const Tensor& x0, const InterpolantConfig& interp) {
  if (x_tgt.shape() != x0.shape() || x0.rank() != 2) throw ShapeError("log_likelihood: x_tgt and x0 shapes differ");
  constexpr std::size_t kChunk = 4096;
  const std::size_t n = x0.rows();
  Tensor out(Shape{n});
  for (std::size_t lo = 0; lo < n; lo += kChunk) {
    const std::size_t hi = std::min(n, lo + kChunk);
    ad::Tape tape;
    const auto bound = net.params().bind_constant(tape);
    const Tensor part =
        log_likelihood(net, bound, tape.constant(slice_rows(x0, lo, hi)), slice_rows(x_tgt, lo, hi), interp).value();
    std::copy(part.data().begin(), part.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(lo));
  }
  net.count_evaluation();
  return out;
}

ad::Var rl_loss(const VelocityNet& net, std::span<const ad::Var> bound, ad::Var x0, const Tensor& x_tgt,
                const Tensor& reward, const InterpolantConfig& interp) {
  if (reward.shape() != Shape{x_tgt.rows()}) {
    throw ShapeError("rl_loss: reward must be [" + std::to_string(x_tgt.rows()) + "], got " +
                     shape_str(reward.shape()));
  }
  ad::Tape& tape = *x0.tape();
  ad::Var logp = log_likelihood(net, bound, x0, x_tgt, interp);
  return ad::scale(ad::mean(ad::mul(logp, tape.constant(reward))), -1.0);
}

RmflowResult rmflow_loss(const VelocityNet& net, const GuidanceEncoder* enc, const TrainingDraws& draws,
                         const LossConfig& cfg, const InterpolantConfig& interp, bool want_grads,
                         const RewardFn& reward) {
  const Tensor& x1 = draws.x_data;
  if (x1.rank() != 2 || draws.prior_noise.shape() != x1.shape()) {
    throw ShapeError("rmflow_loss: prior noise " + shape_str(draws.prior_noise.shape()) + " vs data " +
                     shape_str(x1.shape()));
  }
  const std::size_t b = x1.rows();

  ad::Tape tape;
  const auto np = want_grads ? net.params().bind(tape) : net.params().bind_constant(tape);
  std::vector<ad::Var> ep;
  std::optional<ad::Var> phi;
  ad::Var x0;
  if (enc != nullptr) {
    ep = want_grads ? enc->params().bind(tape) : enc->params().bind_constant(tape);
    phi = enc->apply(ep, tape.borrow(draws.context));
    x0 = ad::add(*phi, tape.constant(scale(draws.prior_noise, interp.sigma_c)));
  } else {
    x0 = tape.borrow(draws.prior_noise);
  }

  Tensor t = clamp_network_times(interp, draws.t);
  Tensor r = draws.r;
  for (std::size_t i = 0; i < b; ++i) r[i] = std::min(r[i], t[i]);
  const Tensor s = sub_scalar_from(1.0, t);
  ad::Var xt = interpolate(interp, x0, x1, s, draws.path_noise);
  const Tensor v_cond = scale(conditional_velocity(interp, xt.value(), x0.value(), x1, s), -1.0);

  RmflowResult res;
  ad::Var total = cmfm_loss(net, np, xt, v_cond, t, r, cfg);
  res.report.cmfm = total.value().item();

  if (cfg.lambda1 > 0.0) {
    ad::Var nll = nll_loss(net, np, x0, x1, draws.nll_noise, interp);
    res.report.nll = nll.value().item();
    total = ad::add(total, ad::scale(nll, cfg.lambda1));
  } else {
    ad::Tape side;
    const auto cp = net.params().bind_constant(side);
    res.report.nll = nll_loss(net, cp, side.borrow(x0.value()), x1, draws.nll_noise, interp).value().item();
  }

  if (phi) {
    ad::Var reg = guidance_reg(*phi);
    res.report.guidance_reg = reg.value().item();
    if (cfg.lambda2 > 0.0) total = ad::add(total, ad::scale(reg, cfg.lambda2));
  }

  if (cfg.rl_weight > 0.0) {
    if (!reward) throw ConfigError("rmflow_loss: rl_weight > 0 needs a reward function");
    Tensor x_hat;
    {
      ad::Tape side;
      const auto cp = net.params().bind_constant(side);
      x_hat = generate_graph(net, cp, side.borrow(x0.value())).value();
    }
    axpy_inplace(x_hat, std::sqrt(interp.refinement_variance()), draws.refine_noise);
    const Tensor rw = reward(x_hat);
    ad::Var rl = rl_loss(net, np, x0, x_hat, rw, interp);
    res.report.rl = rl.value().item();
    total = ad::add(total, ad::scale(rl, cfg.rl_weight));
  }

  res.report.total = total.value().item();
  if (!all_finite(total.value())) throw NumericError("rmflow_loss: non-finite loss");

  if (want_grads) {
    std::vector<ad::Var> wrt(np.begin(), np.end());
    wrt.insert(wrt.end(), ep.begin(), ep.end());
    std::vector<Tensor> g = tape.grad(total, wrt);
    res.enc_grads.assign(std::make_move_iterator(g.begin() + static_cast<std::ptrdiff_t>(np.size())),
                         std::make_move_iterator(g.end()));
    g.resize(np.size());
    res.net_grads = std::move(g);
    res.report.grad_norm = std::sqrt(grads_sqnorm(res.net_grads) + grads_sqnorm(res.enc_grads));
  }
  return res;
}

double cmfm_value(const VelocityNet& net, const FlowBatch& batch, const LossConfig& cfg) {
  ad::Tape tape;
  const auto bound = net.params().bind_constant(tape);
  return cmfm_loss(net, bound, batch, cfg).value().item();
}

}  // namespace rmflow
