#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rmflow/rng.hpp"
#include "rmflow/tensor.hpp"

namespace rmflow {

// ----- 1D Gaussian mixture -----

struct GmmSpec {
  std::vector<double> weights{0.35, 0.25, 0.4};
  std::vector<double> means{1.5, 0.5, -1.5};
  std::vector<double> variances{0.04, 0.04, 0.04};

  void validate() const;
  [[nodiscard]] double mean() const;
};

Tensor sample_gmm(Rng& rng, const GmmSpec& spec, std::size_t n);
/// Same draws as sample_gmm, also reporting the component of each sample.
Tensor sample_gmm(Rng& rng, const GmmSpec& spec, std::size_t n, std::vector<std::size_t>& components);
double gmm_density(const GmmSpec& spec, double x);

// ----- 2D checkerboard -----

struct CheckerboardSpec {
  double extent = 2.0;      // domain [−extent, extent]²
  std::size_t cells = 4;    // per side, even
  void validate() const;
  /// Cell (i, j) with i along x, j along y, both from the lower-left corner.
  [[nodiscard]] bool on(std::size_t i, std::size_t j) const noexcept { return (i + j) % 2 == 0; }
  [[nodiscard]] std::size_t on_cells() const noexcept { return cells * cells / 2; }
  [[nodiscard]] double cell_width() const noexcept { return 2.0 * extent / static_cast<double>(cells); }
};

Tensor sample_checkerboard(Rng& rng, const CheckerboardSpec& spec, std::size_t n);
double checkerboard_density(const CheckerboardSpec& spec, double x, double y);

// ----- ODE trajectories -----

/// dx = f(x); writes f(x) into dx. Both have the system's state dimension.
using VectorField = std::function<void(std::span<const double> x, std::span<double> dx)>;

void rk4_step(const VectorField& f, std::vector<double>& x, double dt);
/// States after each of `steps` RK4 steps (the initial state is not included).
std::vector<std::vector<double>> rk4_integrate(const VectorField& f, std::vector<double> x0, double dt,
                                               std::size_t steps);

enum class DynamicalSystem { lorenz, fhn };

struct TrajectorySpec {
  DynamicalSystem system = DynamicalSystem::lorenz;
  std::size_t steps = 64;  // M
  double dt = 0.02;
  std::size_t substeps = 1;    // RK4 steps per recorded sample
  std::size_t burn_in = 0;     // recorded-step units discarded before the first sample
  // Initial state ~ N(init_mean, diag(init_std²)).
  std::vector<double> init_mean{0.0, 0.0, 25.0};
  std::vector<double> init_std{8.0, 8.0, 8.0};
  // Lorenz
  double sigma = 10.0, rho = 28.0, beta = 8.0 / 3.0;
  // FitzHugh–Nagumo
  double current = 0.5, a = 0.7, b = 0.8, epsilon = 0.08;
  // Event: Lorenz, max_m x(τ_m) > threshold; FHN, number of upward crossings
  // of v through spike_level exceeds threshold.
  double event_threshold = 15.0;
  double spike_level = 1.0;

  [[nodiscard]] std::size_t state_dim() const noexcept { return system == DynamicalSystem::lorenz ? 3 : 2; }
  [[nodiscard]] std::size_t flat_dim() const noexcept { return steps * state_dim(); }
  void validate() const;

  static TrajectorySpec lorenz();
  static TrajectorySpec fhn();
};

VectorField vector_field(const TrajectorySpec& spec);
/// One raw (unnormalized) trajectory, [M×d].
Tensor integrate_trajectory(Rng& rng, const TrajectorySpec& spec);
/// Constraint C(x) for a raw flattened trajectory of length M·d; the event is C > 0.
double event_constraint(const TrajectorySpec& spec, std::span<const double> x_data);
int event_indicator(const TrajectorySpec& spec, std::span<const double> x_data);

// ----- Task interface -----

struct EvalGrid {
  std::vector<double> lo;
  std::vector<double> hi;
  std::vector<std::size_t> bins;
  bool pooled = false;  // every coordinate value goes into one 1D histogram
};

struct DataBatch {
  Tensor x;        // [n×d], in model space (normalized where applicable)
  Tensor context;  // [n×c], or empty when the task has no context
};

class Task {
 public:
  virtual ~Task() = default;
  [[nodiscard]] virtual std::string name() const = 0;
  [[nodiscard]] virtual std::size_t dim() const = 0;
  [[nodiscard]] virtual std::size_t context_dim() const { return 0; }
  /// Training draws.
  [[nodiscard]] virtual DataBatch draw(Rng& rng, std::size_t n) const = 0;
  /// Held-out draws from the ground truth, for evaluation.
  [[nodiscard]] virtual DataBatch reference(Rng& rng, std::size_t n) const { return draw(rng, n); }
  [[nodiscard]] virtual EvalGrid eval_grid() const = 0;
};

class GmmTask final : public Task {
 public:
  explicit GmmTask(GmmSpec spec = {});
  std::string name() const override { return "gmm"; }
  std::size_t dim() const override { return 1; }
  DataBatch draw(Rng& rng, std::size_t n) const override;
  EvalGrid eval_grid() const override { return {{-4.0}, {4.0}, {100}, false}; }
  [[nodiscard]] const GmmSpec& spec() const noexcept { return spec_; }

 private:
  GmmSpec spec_;
};

class CheckerboardTask final : public Task {
 public:
  explicit CheckerboardTask(CheckerboardSpec spec = {});
  std::string name() const override { return "checkerboard"; }
  std::size_t dim() const override { return 2; }
  DataBatch draw(Rng& rng, std::size_t n) const override;
  EvalGrid eval_grid() const override;
  [[nodiscard]] const CheckerboardSpec& spec() const noexcept { return spec_; }

 private:
  CheckerboardSpec spec_;
};

/// N(μ, I) data in d dimensions, the standard-normal prior shifted by μ.
class GaussianShiftTask final : public Task {
 public:
  explicit GaussianShiftTask(std::vector<double> shift = {2.0});
  std::string name() const override { return "shift"; }
  std::size_t dim() const override { return shift_.size(); }
  DataBatch draw(Rng& rng, std::size_t n) const override;
  EvalGrid eval_grid() const override;
  [[nodiscard]] const std::vector<double>& shift() const noexcept { return shift_; }

 private:
  std::vector<double> shift_;
};

struct TrajectoryTaskConfig {
  TrajectorySpec spec = TrajectorySpec::lorenz();
  std::size_t train_size = 2048;
  std::size_t test_size = 1024;
  std::uint64_t data_seed = 7;
  bool guided = false;  // context c = (event flag, first three states)
};

/// Fixed train/test trajectory sets, z-scored per state coordinate with
/// training statistics. Samples live in the flattened space ℝ^{M·d}.
class TrajectoryTask final : public Task {
 public:
  explicit TrajectoryTask(TrajectoryTaskConfig cfg);
  std::string name() const override;
  std::size_t dim() const override { return cfg_.spec.flat_dim(); }
  std::size_t context_dim() const override { return cfg_.guided ? 1 + 3 * cfg_.spec.state_dim() : 0; }
  DataBatch draw(Rng& rng, std::size_t n) const override;
  /// Rows of the test set drawn with replacement.
  DataBatch reference(Rng& rng, std::size_t n) const override;
  EvalGrid eval_grid() const override { return {{-4.0}, {4.0}, {100}, true}; }

  /// Context rows of test trajectories whose event flag equals `flag`.
  [[nodiscard]] DataBatch reference_with_event(Rng& rng, std::size_t n, int flag) const;
  /// Context (flag, first three normalized states) of a normalized flattened trajectory.
  [[nodiscard]] Tensor context_of(const Tensor& x_norm) const;
  [[nodiscard]] Tensor normalize(const Tensor& raw_flat) const;
  [[nodiscard]] Tensor denormalize(const Tensor& norm_flat) const;
  /// Event flag per row of normalized flattened trajectories.
  [[nodiscard]] std::vector<int> events(const Tensor& x_norm) const;
  [[nodiscard]] double event_rate(const Tensor& x_norm) const;

  [[nodiscard]] const TrajectoryTaskConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] const std::vector<double>& coord_mean() const noexcept { return mean_; }
  [[nodiscard]] const std::vector<double>& coord_std() const noexcept { return std_; }
  [[nodiscard]] const Tensor& train_set() const noexcept { return train_; }
  [[nodiscard]] const Tensor& test_set() const noexcept { return test_; }

 private:
  DataBatch rows(const Tensor& set, const std::vector<std::size_t>& idx) const;

  TrajectoryTaskConfig cfg_;
  std::vector<double> mean_, std_;
  Tensor train_, test_;  // normalized, flattened
  Tensor train_ctx_, test_ctx_;
  std::vector<int> test_events_;
};

/// Builds a task by name: gmm, checkerboard, shift, lorenz, fhn (guided
/// variants: lorenz-guided, fhn-guided).
std::unique_ptr<Task> make_task(const std::string& name);

}  // namespace rmflow
