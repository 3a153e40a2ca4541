#include "rmflow/sample.hpp"

#include <cmath>

#include "rmflow/error.hpp"

namespace rmflow {

std::string to_string(ModelKind k) { return k == ModelKind::meanflow ? "meanflow" : "rmflow"; }

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "meanflow") return ModelKind::meanflow;
  if (s == "rmflow") return ModelKind::rmflow;
  throw ConfigError("mode must be 'meanflow' or 'rmflow', got '" + s + "'");
}

void SamplerConfig::validate() const {
  if (nfe == 0) throw ConfigError("sampler.nfe must be positive");
  if (mode == ModelKind::rmflow && nfe != 1) throw ConfigError("sampler: rmflow mode requires nfe == 1");
  if (!grid.empty()) {
    if (grid.size() != nfe + 1) throw ConfigError("sampler.grid must have nfe + 1 points");
    if (grid.front() != 0.0 || grid.back() != 1.0) throw ConfigError("sampler.grid must start at 0 and end at 1");
    for (std::size_t k = 1; k < grid.size(); ++k) {
      if (!(grid[k] > grid[k - 1])) throw ConfigError("sampler.grid must be strictly increasing");
    }
  }
}

std::vector<double> SamplerConfig::resolved_grid() const {
  if (!grid.empty()) return grid;
  std::vector<double> g(nfe + 1);
  for (std::size_t k = 0; k <= nfe; ++k) g[k] = static_cast<double>(k) / static_cast<double>(nfe);
  g.back() = 1.0;
  return g;
}

Tensor transport_step(const VelocityNet& net, const Tensor& x, double a, double b) {
  const std::size_t n = x.rows();
  const Tensor t = Tensor::full(Shape{n}, path_time(a));
  const Tensor r = Tensor::full(Shape{n}, path_time(b));
  Tensor out = x;
  axpy_inplace(out, (b - a) * kGenerationSign, net.evaluate(x, t, r));
  return out;
}

Tensor sample_meanflow(const VelocityNet& net, const Tensor& x0, const SamplerConfig& cfg) {
  cfg.validate();
  const auto g = cfg.resolved_grid();
  Tensor x = x0;
  for (std::size_t k = 0; k + 1 < g.size(); ++k) x = transport_step(net, x, g[k], g[k + 1]);
  return x;
}

Tensor sample_rmflow(const VelocityNet& net, const Tensor& x0, Rng& rng, const InterpolantConfig& interp) {
  if (interp.sigma > interp.sigma_min) throw ConfigError("sample_rmflow: sigma must not exceed sigma_min");
  Tensor x = transport_step(net, x0, 0.0, 1.0);
  const Tensor eps = randn(rng, x.shape());
  const double scale = std::sqrt(interp.refinement_variance());
  if (scale > 0.0) axpy_inplace(x, scale, eps);
  return x;
}

Tensor make_prior(Rng& rng, std::size_t n, std::size_t dim, bool guided, const GuidanceEncoder* enc,
                  const Tensor* context, const InterpolantConfig& interp) {
  Tensor eps = randn(rng, Shape{n, dim});
  if (!guided) return eps;
  if (enc == nullptr || context == nullptr) throw ConfigError("make_prior: guided prior needs an encoder and context");
  if (context->rank() != 2 || context->rows() != n) {
    throw ShapeError("make_prior: context " + shape_str(context->shape()) + " for " + std::to_string(n) + " samples");
  }
  Tensor phi = enc->encode(*context);
  if (phi.shape() != eps.shape()) throw ShapeError("make_prior: encoder output " + shape_str(phi.shape()));
  axpy_inplace(phi, interp.sigma_c, eps);
  return phi;
}

Tensor generate(const VelocityNet& net, const GuidanceEncoder* enc, const Tensor* context, std::size_t n,
                const SamplerConfig& cfg, const InterpolantConfig& interp, Rng& rng) {
  cfg.validate();
  const Tensor x0 = make_prior(rng, n, net.config().dim, enc != nullptr, enc, context, interp);
  if (cfg.mode == ModelKind::rmflow) return sample_rmflow(net, x0, rng, interp);
  return sample_meanflow(net, x0, cfg);
}

}  // namespace rmflow
