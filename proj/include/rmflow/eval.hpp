#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rmflow/flow.hpp"
#include "rmflow/nets.hpp"
#include "rmflow/sample.hpp"
#include "rmflow/tasks.hpp"
#include "rmflow/tensor.hpp"

namespace rmflow {

struct HistDensity {
  std::vector<double> lo;
  std::vector<double> hi;
  std::vector<std::size_t> bins;
  std::vector<double> masses;  // row-major over dimensions, first dimension slowest
  std::size_t count = 0;       // values binned
  std::size_t clipped = 0;     // values outside the bounds, counted in edge bins

  [[nodiscard]] bool same_grid(const HistDensity& o) const noexcept {
    return lo == o.lo && hi == o.hi && bins == o.bins;
  }
  [[nodiscard]] double bin_center(std::size_t dim, std::size_t k) const;
};

/// Normalized histogram of [n×d] samples for d ∈ {1, 2}. With grid.pooled,
/// every entry is treated as one 1D value.
HistDensity histogram(const Tensor& samples, const EvalGrid& grid);

/// Σ|p − q|, no ½ factor.
double tv_distance(const HistDensity& p, const HistDensity& q);
/// Σ p'·log(p'/q') with p' = (p + eps)/(1 + n·eps), likewise q'.
double kl_divergence(const HistDensity& p, const HistDensity& q, double eps = 1e-10);
double tv_distance(std::span<const double> p, std::span<const double> q);
double kl_divergence(std::span<const double> p, std::span<const double> q, double eps = 1e-10);

/// Exact empirical W₂² between equal-size 1D sample sets (sorted coupling).
double wasserstein2_1d(std::vector<double> a, std::vector<double> b);
double wasserstein2_1d(const Tensor& a, const Tensor& b);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

struct DistributionMetrics {
  double tv = 0.0;
  double kl = 0.0;  // KL(reference ‖ generated)
};

DistributionMetrics compare(const Tensor& reference, const Tensor& generated, const EvalGrid& grid,
                            double eps = 1e-10);

struct EvalReport {
  std::string task;
  std::string model;
  std::size_t nfe = 1;
  double tv = 0.0;
  double kl = 0.0;
  double noise_floor_tv = 0.0;
  double noise_floor_kl = 0.0;
  std::size_t n_samples = 0;
  EvalGrid grid;
  std::uint64_t seed = 0;
  nlohmann::json conditions = nlohmann::json::object();  // guided tasks only
};

nlohmann::json report_to_json(const EvalReport& r);

/// TV and KL between two independent reference draws of size n.
DistributionMetrics noise_floor(const Task& task, std::size_t n, std::uint64_t seed);

/// Generates n samples, compares with fresh reference draws on the task grid,
/// and reports the noise floor. Guided trajectory tasks also get metrics per
/// event condition plus generated and reference event rates.
EvalReport evaluate_run(const VelocityNet& net, const GuidanceEncoder* enc, const Task& task,
                        const SamplerConfig& sampler, const InterpolantConfig& interp, std::size_t n_samples);

/// CSV with bin centres, p (reference) and q (generated).
std::string histogram_csv(const HistDensity& p, const HistDensity& q);

}  // namespace rmflow
