#include "rmflow/flow.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rmflow/error.hpp"

namespace rmflow {
namespace {

Tensor one_minus(const Tensor& s) {
  Tensor out(s.shape());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = 1.0 - s[i];
  return out;
}

void require_path_shapes(const Tensor& x0, const Tensor& x1, const Tensor& s, const char* op) {
  if (x0.shape() != x1.shape() || x0.rank() != 2 || s.shape() != Shape{x0.rows()}) {
    throw ShapeError(std::string(op) + ": x0 " + shape_str(x0.shape()) + ", x1 " + shape_str(x1.shape()) +
                     ", s " + shape_str(s.shape()) + " disagree");
  }
}

}  // namespace

void InterpolantConfig::validate() const {
  if (!(eta >= 0.0)) throw ConfigError("interpolant.eta must be >= 0");
  if (!(sigma >= 0.0) || !(sigma < sigma_min)) throw ConfigError("interpolant: need 0 <= sigma < sigma_min");
  if (!(sigma_c >= 0.0)) throw ConfigError("interpolant.sigma_c must be >= 0");
  if (eta > 0.0 && !(t_clamp > 0.0 && t_clamp < 1.0)) {
    throw ConfigError("interpolant.t_clamp must lie in (0, 1) when eta > 0");
  }
}

void TimeSamplerConfig::validate() const {
  if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("time_sampler.q must lie in [0, 1]");
}

TimePair sample_times(Rng& rng, const TimeSamplerConfig& cfg, std::size_t batch) {
  cfg.validate();
  TimePair out{Tensor(Shape{batch}), Tensor(Shape{batch})};
  for (std::size_t i = 0; i < batch; ++i) {
    const double u = rng.uniform();
    const double t = cfg.distribution == TimeDistribution::linear ? std::sqrt(u) : u;
    const bool split = rng.uniform() < cfg.q;
    const double v = rng.uniform();
    out.t[i] = t;
    out.r[i] = split ? v * t : t;
  }
  return out;
}

TimePair network_times(const TimePair& path) {
  return {one_minus(path.r), one_minus(path.t)};
}

Tensor gamma_schedule(const InterpolantConfig& cfg, const Tensor& s) {
  Tensor g(s.shape());
  for (std::size_t i = 0; i < s.size(); ++i) g[i] = cfg.eta * (1.0 - s[i]);
  return g;
}

Tensor interpolate(const InterpolantConfig& cfg, const Tensor& x0, const Tensor& x1, const Tensor& s,
                   const Tensor& eps) {
  require_path_shapes(x0, x1, s, "interpolate");
  Tensor xt = add(scale_rows(x1, s), scale_rows(x0, one_minus(s)));
  if (cfg.eta > 0.0) {
    if (eps.shape() != x0.shape()) throw ShapeError("interpolate: noise shape " + shape_str(eps.shape()));
    xt = add(xt, scale_rows(eps, gamma_schedule(cfg, s)));
  }
  return xt;
}

Tensor interpolate(Rng& rng, const InterpolantConfig& cfg, const Tensor& x0, const Tensor& x1, const Tensor& s) {
  const Tensor eps = randn(rng, x0.shape());
  return interpolate(cfg, x0, x1, s, eps);
}

ad::Var interpolate(const InterpolantConfig& cfg, ad::Var x0, const Tensor& x1, const Tensor& s, const Tensor& eps) {
  require_path_shapes(x0.value(), x1, s, "interpolate");
  ad::Tape& tape = *x0.tape();
  ad::Var xt = ad::add(tape.constant(scale_rows(x1, s)), ad::scale_rows(x0, tape.constant(one_minus(s))));
  if (cfg.eta > 0.0) {
    if (eps.shape() != x1.shape()) throw ShapeError("interpolate: noise shape " + shape_str(eps.shape()));
    xt = ad::add(xt, tape.constant(scale_rows(eps, gamma_schedule(cfg, s))));
  }
  return xt;
}

Tensor conditional_velocity(const InterpolantConfig& cfg, const Tensor& x, const Tensor& x0, const Tensor& x1,
                            const Tensor& s) {
  require_path_shapes(x0, x1, s, "conditional_velocity");
  if (x.shape() != x0.shape()) throw ShapeError("conditional_velocity: x shape " + shape_str(x.shape()));
  Tensor u = sub(x1, x0);
  if (cfg.eta == 0.0) return u;
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  for (std::size_t i = 0; i < n; ++i) {
    if (s[i] > cfg.t_clamp) {
      throw NumericError("conditional_velocity: path time " + std::to_string(s[i]) + " exceeds t_clamp " +
                         std::to_string(cfg.t_clamp));
    }
    const double ratio = -1.0 / (1.0 - s[i]);  // γ̇/γ for γ = η(1 − s)
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t k = i * d + j;
      const double off_path = x[k] - s[i] * x1[k] - (1.0 - s[i]) * x0[k];
      u[k] += ratio * off_path;
    }
  }
  check_finite(u, "conditional_velocity");
  return u;
}

Tensor mean_velocity_exact(const PathField& field, const PathCurve& path, double t, double r, std::size_t n_quad) {
  if (t == r) throw std::invalid_argument("mean_velocity_exact: t == r");
  if (n_quad < 3 || n_quad % 2 == 0) throw std::invalid_argument("mean_velocity_exact: n_quad must be odd and >= 3");
  const double h = (r - t) / static_cast<double>(n_quad - 1);
  Tensor acc;
  for (std::size_t k = 0; k < n_quad; ++k) {
    const double s = t + h * static_cast<double>(k);
    const double w = (k == 0 || k == n_quad - 1) ? 1.0 : (k % 2 == 1 ? 4.0 : 2.0);
    Tensor u = field(path(s), s);
    if (k == 0) {
      acc = scale(u, w);
    } else {
      axpy_inplace(acc, w, u);
    }
  }
  // ∫ ≈ (h/3)·Σ w_k u_k, then divide by (r − t) = h·(n − 1).
  return scale(acc, 1.0 / (3.0 * static_cast<double>(n_quad - 1)));
}

Tensor clamp_network_times(const InterpolantConfig& cfg, const Tensor& t) {
  if (cfg.eta == 0.0) return t;
  const double lo = 1.0 - cfg.t_clamp;
  Tensor out = t;
  for (double& v : out.data()) v = std::max(v, lo);
  return out;
}

FlowBatch make_flow_batch(const InterpolantConfig& cfg, const Tensor& x0, const Tensor& x1, Tensor t, Tensor r,
                          const Tensor& path_noise) {
  if (t.shape() != r.shape()) throw ShapeError("make_flow_batch: t and r shapes differ");
  t = clamp_network_times(cfg, t);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = std::min(r[i], t[i]);
  const Tensor s = one_minus(t);
  FlowBatch b;
  b.xt = interpolate(cfg, x0, x1, s, path_noise);
  b.v_cond = scale(conditional_velocity(cfg, b.xt, x0, x1, s), -1.0);
  b.x0 = x0;
  b.x1 = x1;
  b.t = std::move(t);
  b.r = std::move(r);
  b.path_noise = path_noise;
  return b;
}

FlowBatch make_flow_batch(Rng& rng, const InterpolantConfig& cfg, const TimeSamplerConfig& times, const Tensor& x0,
                          const Tensor& x1) {
  TimePair tr = network_times(sample_times(rng, times, x0.rows()));
  const Tensor eps = randn(rng, x0.shape());
  return make_flow_batch(cfg, x0, x1, std::move(tr.t), std::move(tr.r), eps);
}

}  // namespace rmflow
