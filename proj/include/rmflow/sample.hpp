#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rmflow/flow.hpp"
#include "rmflow/nets.hpp"
#include "rmflow/rng.hpp"
#include "rmflow/tensor.hpp"

namespace rmflow {

enum class ModelKind { meanflow, rmflow };

std::string to_string(ModelKind k);
ModelKind model_kind_from_string(const std::string& s);

struct SamplerConfig {
  std::size_t nfe = 1;
  std::vector<double> grid;  // n+1 generation times from 0 to 1; empty means uniform
  ModelKind mode = ModelKind::rmflow;
  std::uint64_t seed = 0;

  void validate() const;
  [[nodiscard]] std::vector<double> resolved_grid() const;
  bool operator==(const SamplerConfig&) const = default;
};

/// One transport step from generation time a to b > a:
/// x + (b − a)·û, with û = kGenerationSign·net(x, 1 − a, 1 − b).
Tensor transport_step(const VelocityNet& net, const Tensor& x, double a, double b);

/// nfe sequential steps over the grid; exactly nfe network evaluations.
Tensor sample_meanflow(const VelocityNet& net, const Tensor& x0, const SamplerConfig& cfg);

/// x0 + û(x0) + √(σ_min² − σ²)·ε₂ with one network evaluation. ε₂ is always
/// drawn; σ == σ_min is allowed and then adds nothing.
Tensor sample_rmflow(const VelocityNet& net, const Tensor& x0, Rng& rng, const InterpolantConfig& interp);

/// Unguided: ε. Guided: φ(c) + σ_c·ε. Throws ConfigError when guided without
/// an encoder or context.
Tensor make_prior(Rng& rng, std::size_t n, std::size_t dim, bool guided, const GuidanceEncoder* enc,
                  const Tensor* context, const InterpolantConfig& interp);

/// Prior draw followed by the sampler `cfg.mode` selects.
Tensor generate(const VelocityNet& net, const GuidanceEncoder* enc, const Tensor* context, std::size_t n,
                const SamplerConfig& cfg, const InterpolantConfig& interp, Rng& rng);

}  // namespace rmflow
