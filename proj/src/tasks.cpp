#include "rmflow/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "rmflow/error.hpp"

namespace rmflow {
namespace {

std::size_t categorical(Rng& rng, const std::vector<double>& weights) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < weights.size(); ++k) {
    acc += weights[k];
    if (u < acc) return k;
  }
  return weights.size() - 1;
}

}  // namespace

void GmmSpec::validate() const {
  if (weights.empty() || weights.size() != means.size() || weights.size() != variances.size()) {
    throw ConfigError("gmm: weights, means and variances must have equal nonzero length");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (!(weights[k] >= 0.0)) throw ConfigError("gmm: weights must be >= 0");
    if (!(variances[k] > 0.0)) throw ConfigError("gmm: variances must be > 0");
    total += weights[k];
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("gmm: weights must sum to 1");
}

double GmmSpec::mean() const {
  double m = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) m += weights[k] * means[k];
  return m;
}

Tensor sample_gmm(Rng& rng, const GmmSpec& spec, std::size_t n, std::vector<std::size_t>& components) {
  spec.validate();
  Tensor out(Shape{n, 1});
  components.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = categorical(rng, spec.weights);
    components[i] = k;
    out[i] = spec.means[k] + std::sqrt(spec.variances[k]) * rng.normal();
  }
  return out;
}

Tensor sample_gmm(Rng& rng, const GmmSpec& spec, std::size_t n) {
  std::vector<std::size_t> unused;
  return sample_gmm(rng, spec, n, unused);
}

double gmm_density(const GmmSpec& spec, double x) {
  double p = 0.0;
  for (std::size_t k = 0; k < spec.weights.size(); ++k) {
    const double v = spec.variances[k];
    const double z = x - spec.means[k];
    p += spec.weights[k] * std::exp(-0.5 * z * z / v) / std::sqrt(2.0 * std::numbers::pi * v);
  }
  return p;
}

void CheckerboardSpec::validate() const {
  if (!(extent > 0.0)) throw ConfigError("checkerboard.extent must be > 0");
  if (cells < 2 || cells % 2 != 0) throw ConfigError("checkerboard.cells must be even and >= 2");
}

Tensor sample_checkerboard(Rng& rng, const CheckerboardSpec& spec, std::size_t n) {
  spec.validate();
  // Enumerate on-cells once, then pick one uniformly per sample.
  std::vector<std::pair<std::size_t, std::size_t>> on;
  for (std::size_t i = 0; i < spec.cells; ++i) {
    for (std::size_t j = 0; j < spec.cells; ++j) {
      if (spec.on(i, j)) on.emplace_back(i, j);
    }
  }
  const double w = spec.cell_width();
  Tensor out(Shape{n, 2});
  for (std::size_t s = 0; s < n; ++s) {
    const auto [i, j] = on[rng.below(on.size())];
    out[2 * s] = -spec.extent + (static_cast<double>(i) + rng.uniform()) * w;
    out[2 * s + 1] = -spec.extent + (static_cast<double>(j) + rng.uniform()) * w;
  }
  return out;
}

double checkerboard_density(const CheckerboardSpec& spec, double x, double y) {
  if (x < -spec.extent || x >= spec.extent || y < -spec.extent || y >= spec.extent) return 0.0;
  const double w = spec.cell_width();
  const auto i = static_cast<std::size_t>((x + spec.extent) / w);
  const auto j = static_cast<std::size_t>((y + spec.extent) / w);
  if (!spec.on(std::min(i, spec.cells - 1), std::min(j, spec.cells - 1))) return 0.0;
  const double area = 4.0 * spec.extent * spec.extent;
  return 2.0 / area;  // half the board carries all the mass
}

void rk4_step(const VectorField& f, std::vector<double>& x, double dt) {
  const std::size_t d = x.size();
  std::vector<double> k1(d), k2(d), k3(d), k4(d), tmp(d);
  f(x, k1);
  for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + 0.5 * dt * k1[i];
  f(tmp, k2);
  for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + 0.5 * dt * k2[i];
  f(tmp, k3);
  for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + dt * k3[i];
  f(tmp, k4);
  for (std::size_t i = 0; i < d; ++i) x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
}

std::vector<std::vector<double>> rk4_integrate(const VectorField& f, std::vector<double> x0, double dt,
                                               std::size_t steps) {
  std::vector<std::vector<double>> out;
  out.reserve(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    rk4_step(f, x0, dt);
    for (double v : x0) {
      if (!std::isfinite(v)) throw NumericError("rk4_integrate: non-finite state at step " + std::to_string(s));
    }
    out.push_back(x0);
  }
  return out;
}

void TrajectorySpec::validate() const {
  if (steps == 0 || substeps == 0) throw ConfigError("trajectory: steps and substeps must be positive");
  if (!(dt > 0.0)) throw ConfigError("trajectory.dt must be > 0");
  if (init_mean.size() != state_dim() || init_std.size() != state_dim()) {
    throw ConfigError("trajectory: init_mean and init_std must match the state dimension");
  }
}

TrajectorySpec TrajectorySpec::lorenz() {
  TrajectorySpec s;
  s.system = DynamicalSystem::lorenz;
  s.steps = 64;
  s.dt = 0.02;
  s.burn_in = 250;
  s.init_mean = {0.0, 0.0, 25.0};
  s.init_std = {8.0, 8.0, 8.0};
  s.event_threshold = 15.0;
  return s;
}

TrajectorySpec TrajectorySpec::fhn() {
  TrajectorySpec s;
  s.system = DynamicalSystem::fhn;
  s.steps = 64;
  s.dt = 0.1;
  s.burn_in = 0;
  s.init_mean = {0.0, 0.5};
  s.init_std = {1.0, 0.5};
  s.event_threshold = 0.5;  // at least one spike
  s.spike_level = 1.0;
  return s;
}

VectorField vector_field(const TrajectorySpec& spec) {
  if (spec.system == DynamicalSystem::lorenz) {
    const double sg = spec.sigma, rho = spec.rho, beta = spec.beta;
    return [sg, rho, beta](std::span<const double> x, std::span<double> dx) {
      dx[0] = sg * (x[1] - x[0]);
      dx[1] = x[0] * (rho - x[2]) - x[1];
      dx[2] = x[0] * x[1] - beta * x[2];
    };
  }
  const double cur = spec.current, a = spec.a, b = spec.b, eps = spec.epsilon;
  return [cur, a, b, eps](std::span<const double> x, std::span<double> dx) {
    dx[0] = x[0] - x[0] * x[0] * x[0] / 3.0 - x[1] + cur;
    dx[1] = eps * (x[0] + a - b * x[1]);
  };
}

Tensor integrate_trajectory(Rng& rng, const TrajectorySpec& spec) {
  spec.validate();
  const std::size_t d = spec.state_dim();
  const VectorField f = vector_field(spec);
  std::vector<double> x(d);
  for (std::size_t i = 0; i < d; ++i) x[i] = spec.init_mean[i] + spec.init_std[i] * rng.normal();
  const double h = spec.dt / static_cast<double>(spec.substeps);
  auto advance = [&] {
    for (std::size_t k = 0; k < spec.substeps; ++k) rk4_step(f, x, h);
    for (double v : x) {
      if (!std::isfinite(v)) throw NumericError("integrate_trajectory: non-finite state");
    }
  };
  for (std::size_t s = 0; s < spec.burn_in; ++s) advance();
  Tensor out(Shape{spec.steps, d});
  for (std::size_t m = 0; m < spec.steps; ++m) {
    advance();
    for (std::size_t i = 0; i < d; ++i) out[m * d + i] = x[i];
  }
  return out;
}

double event_constraint(const TrajectorySpec& spec, std::span<const double> x_data) {
  const std::size_t d = spec.state_dim();
  if (x_data.size() != spec.flat_dim()) {
    throw ShapeError("event_constraint: expected " + std::to_string(spec.flat_dim()) + " values, got " +
                     std::to_string(x_data.size()));
  }
  if (spec.system == DynamicalSystem::lorenz) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < spec.steps; ++m) mx = std::max(mx, x_data[m * d]);
    return mx - spec.event_threshold;
  }
  std::size_t spikes = 0;
  for (std::size_t m = 1; m < spec.steps; ++m) {
    if (x_data[(m - 1) * d] < spec.spike_level && x_data[m * d] >= spec.spike_level) ++spikes;
  }
  return static_cast<double>(spikes) - spec.event_threshold;
}

int event_indicator(const TrajectorySpec& spec, std::span<const double> x_data) {
  return event_constraint(spec, x_data) > 0.0 ? 1 : 0;
}

GmmTask::GmmTask(GmmSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

DataBatch GmmTask::draw(Rng& rng, std::size_t n) const { return {sample_gmm(rng, spec_, n), Tensor()}; }

CheckerboardTask::CheckerboardTask(CheckerboardSpec spec) : spec_(spec) { spec_.validate(); }

DataBatch CheckerboardTask::draw(Rng& rng, std::size_t n) const {
  return {sample_checkerboard(rng, spec_, n), Tensor()};
}

EvalGrid CheckerboardTask::eval_grid() const {
  return {{-spec_.extent, -spec_.extent}, {spec_.extent, spec_.extent}, {50, 50}, false};
}

GaussianShiftTask::GaussianShiftTask(std::vector<double> shift) : shift_(std::move(shift)) {
  if (shift_.empty()) throw ConfigError("shift task needs at least one dimension");
}

DataBatch GaussianShiftTask::draw(Rng& rng, std::size_t n) const {
  const std::size_t d = shift_.size();
  Tensor x = randn(rng, Shape{n, d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) x[i * d + j] += shift_[j];
  }
  return {std::move(x), Tensor()};
}

EvalGrid GaussianShiftTask::eval_grid() const {
  EvalGrid g;
  const double lo = *std::min_element(shift_.begin(), shift_.end()) - 5.0;
  const double hi = *std::max_element(shift_.begin(), shift_.end()) + 5.0;
  g.lo = {lo};
  g.hi = {hi};
  g.bins = {100};
  g.pooled = shift_.size() > 1;
  return g;
}

TrajectoryTask::TrajectoryTask(TrajectoryTaskConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.spec.validate();
  if (cfg_.train_size == 0 || cfg_.test_size == 0) throw ConfigError("trajectory task: empty dataset");
  const std::size_t d = cfg_.spec.state_dim();
  const std::size_t flat = cfg_.spec.flat_dim();
  const Rng root(cfg_.data_seed);

  auto generate = [&](std::size_t n, std::uint64_t stream) {
    Tensor raw(Shape{n, flat});
    for (std::size_t i = 0; i < n; ++i) {
      Rng r = root.split(stream).split(i);
      const Tensor traj = integrate_trajectory(r, cfg_.spec);
      std::copy(traj.data().begin(), traj.data().end(), raw.data().begin() + static_cast<std::ptrdiff_t>(i * flat));
    }
    return raw;
  };
  const Tensor train_raw = generate(cfg_.train_size, 0);
  const Tensor test_raw = generate(cfg_.test_size, 1);

  mean_.assign(d, 0.0);
  std_.assign(d, 0.0);
  const double count = static_cast<double>(cfg_.train_size * cfg_.spec.steps);
  for (std::size_t k = 0; k < train_raw.size(); ++k) mean_[k % d] += train_raw[k];
  for (double& m : mean_) m /= count;
  for (std::size_t k = 0; k < train_raw.size(); ++k) {
    const double z = train_raw[k] - mean_[k % d];
    std_[k % d] += z * z;
  }
  for (double& s : std_) s = std::max(std::sqrt(s / count), 1e-12);

  train_ = normalize(train_raw);
  test_ = normalize(test_raw);
  if (cfg_.guided) {
    train_ctx_ = context_of(train_);
    test_ctx_ = context_of(test_);
  }
  test_events_ = events(test_);
}

std::string TrajectoryTask::name() const {
  std::string base = cfg_.spec.system == DynamicalSystem::lorenz ? "lorenz" : "fhn";
  return cfg_.guided ? base + "-guided" : base;
}

Tensor TrajectoryTask::normalize(const Tensor& raw) const {
  const std::size_t d = cfg_.spec.state_dim();
  Tensor out = raw;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = (out[k] - mean_[k % d]) / std_[k % d];
  return out;
}

Tensor TrajectoryTask::denormalize(const Tensor& norm) const {
  const std::size_t d = cfg_.spec.state_dim();
  Tensor out = norm;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = out[k] * std_[k % d] + mean_[k % d];
  return out;
}

std::vector<int> TrajectoryTask::events(const Tensor& x_norm) const {
  const std::size_t flat = cfg_.spec.flat_dim();
  if (x_norm.rank() != 2 || x_norm.cols() != flat) throw ShapeError("events: expected [n×" + std::to_string(flat) + "]");
  const Tensor raw = denormalize(x_norm);
  std::vector<int> out(raw.rows());
  for (std::size_t i = 0; i < raw.rows(); ++i) {
    out[i] = event_indicator(cfg_.spec, raw.data().subspan(i * flat, flat));
  }
  return out;
}

double TrajectoryTask::event_rate(const Tensor& x_norm) const {
  const auto ev = events(x_norm);
  if (ev.empty()) return 0.0;
  return static_cast<double>(std::accumulate(ev.begin(), ev.end(), 0)) / static_cast<double>(ev.size());
}

Tensor TrajectoryTask::context_of(const Tensor& x_norm) const {
  const std::size_t d = cfg_.spec.state_dim();
  const std::size_t flat = cfg_.spec.flat_dim();
  const std::size_t c = 1 + 3 * d;
  const auto ev = events(x_norm);
  Tensor ctx(Shape{x_norm.rows(), c});
  for (std::size_t i = 0; i < x_norm.rows(); ++i) {
    ctx[i * c] = static_cast<double>(ev[i]);
    for (std::size_t k = 0; k < 3 * d; ++k) ctx[i * c + 1 + k] = x_norm[i * flat + k];
  }
  return ctx;
}

DataBatch TrajectoryTask::rows(const Tensor& set, const std::vector<std::size_t>& idx) const {
  const std::size_t flat = cfg_.spec.flat_dim();
  const Tensor& ctx_set = &set == &train_ ? train_ctx_ : test_ctx_;
  const std::size_t c = context_dim();
  DataBatch b{Tensor(Shape{idx.size(), flat}), cfg_.guided ? Tensor(Shape{idx.size(), c}) : Tensor()};
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(set.data().begin() + static_cast<std::ptrdiff_t>(idx[i] * flat), flat,
                b.x.data().begin() + static_cast<std::ptrdiff_t>(i * flat));
    if (cfg_.guided) {
      std::copy_n(ctx_set.data().begin() + static_cast<std::ptrdiff_t>(idx[i] * c), c,
                  b.context.data().begin() + static_cast<std::ptrdiff_t>(i * c));
    }
  }
  return b;
}

DataBatch TrajectoryTask::draw(Rng& rng, std::size_t n) const {
  std::vector<std::size_t> idx(n);
  for (auto& i : idx) i = rng.below(train_.rows());
  return rows(train_, idx);
}

DataBatch TrajectoryTask::reference(Rng& rng, std::size_t n) const {
  std::vector<std::size_t> idx(n);
  for (auto& i : idx) i = rng.below(test_.rows());
  return rows(test_, idx);
}

DataBatch TrajectoryTask::reference_with_event(Rng& rng, std::size_t n, int flag) const {
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < test_events_.size(); ++i) {
    if (test_events_[i] == flag) pool.push_back(i);
  }
  if (pool.empty()) throw ConfigError("reference_with_event: no test trajectory has event flag " + std::to_string(flag));
  std::vector<std::size_t> idx(n);
  for (auto& i : idx) i = pool[rng.below(pool.size())];
  return rows(test_, idx);
}

std::unique_ptr<Task> make_task(const std::string& name) {
  if (name == "gmm") return std::make_unique<GmmTask>();
  if (name == "checkerboard") return std::make_unique<CheckerboardTask>();
  if (name == "shift") return std::make_unique<GaussianShiftTask>();
  TrajectoryTaskConfig cfg;
  if (name == "lorenz" || name == "lorenz-guided") {
    cfg.spec = TrajectorySpec::lorenz();
  } else if (name == "fhn" || name == "fhn-guided") {
    cfg.spec = TrajectorySpec::fhn();
  } else {
    throw ConfigError("unknown task '" + name + "'");
  }
  cfg.guided = name.ends_with("-guided");
  return std::make_unique<TrajectoryTask>(cfg);
}

}  // namespace rmflow
