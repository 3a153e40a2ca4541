#include <doctest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "rmflow/error.hpp"
#include "rmflow/flow.hpp"

using namespace rmflow;

TEST_SUITE("flow") {

TEST_CASE("linear time distribution has CDF t² and r splits with probability q") {
  Rng rng(21);
  const std::size_t n = 100000;
  const TimeSamplerConfig cfg{0.25, TimeDistribution::linear};
  const TimePair tp = sample_times(rng, cfg, n);
  CHECK(oracle::ks_statistic(tp.t.values(), [](double t) { return std::clamp(t * t, 0.0, 1.0); }) <
        oracle::ks_critical_001(n));
  std::size_t split = 0;
  std::vector<double> ratio;
  for (std::size_t i = 0; i < n; ++i) {
    REQUIRE(tp.r[i] <= tp.t[i]);
    if (tp.r[i] < tp.t[i]) {
      ++split;
      ratio.push_back(tp.r[i] / tp.t[i]);
    }
  }
  CHECK(std::abs(double(split) / n - 0.25) < oracle::binomial_band(0.25, n));
  // Given a split, r/t is uniform on [0, 1).
  CHECK(oracle::ks_statistic(ratio, [](double u) { return std::clamp(u, 0.0, 1.0); }) <
        oracle::ks_critical_001(ratio.size()));
}

TEST_CASE("uniform time distribution and the q extremes") {
  Rng rng(22);
  const std::size_t n = 50000;
  const TimePair tp = sample_times(rng, {1.0, TimeDistribution::uniform}, n);
  CHECK(oracle::ks_statistic(tp.t.values(), [](double t) { return std::clamp(t, 0.0, 1.0); }) <
        oracle::ks_critical_001(n));
  const TimePair none = sample_times(rng, {0.0, TimeDistribution::linear}, 1000);
  CHECK(none.t == none.r);
  CHECK_THROWS_AS((void)sample_times(rng, {1.5, TimeDistribution::linear}, 4), ConfigError);
}

TEST_CASE("network pair reverses the path pair") {
  Rng rng(24);
  const TimePair path = sample_times(rng, {0.5, TimeDistribution::linear}, 2000);
  const TimePair net = network_times(path);
  for (std::size_t i = 0; i < 2000; ++i) {
    CHECK(net.r[i] <= net.t[i]);
    CHECK(net.t[i] == 1.0 - path.r[i]);
    CHECK(net.r[i] == 1.0 - path.t[i]);
  }
  const TimePair full = network_times({Tensor(Shape{1}, {1.0}), Tensor(Shape{1}, {0.0})});
  CHECK(full.t[0] == 1.0);
  CHECK(full.r[0] == 0.0);
}

TEST_CASE("interpolant endpoints") {
  Rng rng(23);
  const InterpolantConfig cfg;
  const Tensor x0 = randn(rng, {4, 3}), x1 = randn(rng, {4, 3}), eps = randn(rng, {4, 3});
  const Tensor at_prior = interpolate(cfg, x0, x1, Tensor::zeros({4}), eps);
  CHECK(oracle::max_abs_diff(at_prior, add(x0, scale(eps, cfg.eta))) < 1e-15);
  CHECK(interpolate(cfg, x0, x1, Tensor::full({4}, 1.0), eps) == x1);
  InterpolantConfig det = cfg;
  det.eta = 0.0;
  const Tensor mid = interpolate(det, x0, x1, Tensor::full({4}, 0.5), eps);
  CHECK(oracle::max_abs_diff(mid, scale(add(x0, x1), 0.5)) < 1e-15);
}

TEST_CASE("conditional velocity is the path derivative along a fixed noise draw") {
  Rng rng(24);
  const InterpolantConfig cfg;
  const Tensor x0 = randn(rng, {6, 2}), x1 = randn(rng, {6, 2}), eps = randn(rng, {6, 2});
  const Tensor s = rand_uniform(rng, {6}, 0.05, 0.95);
  const Tensor xs = interpolate(cfg, x0, x1, s, eps);
  const Tensor u = conditional_velocity(cfg, xs, x0, x1, s);
  const double h = 1e-6;
  const Tensor fd = scale(sub(interpolate(cfg, x0, x1, add_scalar(s, h), eps),
                              interpolate(cfg, x0, x1, add_scalar(s, -h), eps)),
                          0.5 / h);
  CHECK(oracle::rel_err(u, fd) < 1e-7);
}

TEST_CASE("conditional velocity respects the clamp boundary") {
  const InterpolantConfig cfg;
  const Tensor z = Tensor::zeros({1, 1});
  CHECK_NOTHROW((void)conditional_velocity(cfg, z, z, z, Tensor::vector({cfg.t_clamp})));
  CHECK_THROWS_AS((void)conditional_velocity(cfg, z, z, z, Tensor::vector({1.0})), NumericError);
  InterpolantConfig det = cfg;
  det.eta = 0.0;
  CHECK_NOTHROW((void)conditional_velocity(det, z, z, z, Tensor::vector({1.0})));
}

TEST_CASE("flow batches clamp network time and negate the path velocity") {
  Rng rng(25);
  const InterpolantConfig cfg;
  const Tensor x0 = randn(rng, {3, 2}), x1 = randn(rng, {3, 2}), eps = randn(rng, {3, 2});
  const FlowBatch b = make_flow_batch(cfg, x0, x1, Tensor::vector({0.0, 0.5, 1.0}), Tensor::vector({0.0, 0.2, 1.0}), eps);
  CHECK(b.t[0] == doctest::Approx(1.0 - cfg.t_clamp));
  CHECK(b.r[0] <= b.t[0]);
  const Tensor s = Tensor::vector({1.0 - b.t[0], 0.5, 0.0});
  CHECK(b.v_cond == scale(conditional_velocity(cfg, b.xt, x0, x1, s), -1.0));
}

TEST_CASE("graph interpolation equals the tensor version bitwise") {
  Rng rng(26);
  for (double eta : {0.0, 0.05}) {
    InterpolantConfig cfg;
    cfg.eta = eta;
    const Tensor x0 = randn(rng, {5, 2}), x1 = randn(rng, {5, 2}), eps = randn(rng, {5, 2});
    const Tensor s = rand_uniform(rng, {5});
    ad::Tape tape;
    CHECK(interpolate(cfg, tape.leaf(x0), x1, s, eps).value() == interpolate(cfg, x0, x1, s, eps));
  }
}

TEST_CASE("Simpson mean velocity converges at fourth order") {
  // Path x_s = sin(3s), so the mean velocity over [t, r] is (sin 3r − sin 3t)/(r − t).
  const PathCurve path = [](double s) { return Tensor({1, 1}, {std::sin(3.0 * s)}); };
  const PathField field = [](const Tensor&, double s) { return Tensor({1, 1}, {3.0 * std::cos(3.0 * s)}); };
  const double t = 0.9, r = 0.1;
  const double exact = (std::sin(3.0 * r) - std::sin(3.0 * t)) / (r - t);
  const double e9 = std::abs(mean_velocity_exact(field, path, t, r, 9)[0] - exact);
  const double e17 = std::abs(mean_velocity_exact(field, path, t, r, 17)[0] - exact);
  CHECK(e9 / e17 == doctest::Approx(16.0).epsilon(0.1));
  CHECK(std::abs(mean_velocity_exact(field, path, t, r)[0] - exact) < 1e-9);
  CHECK_THROWS((void)mean_velocity_exact(field, path, t, r, 10));
}

TEST_CASE("interpolant validation") {
  InterpolantConfig c;
  CHECK_NOTHROW(c.validate());
  c.sigma = c.sigma_min;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = InterpolantConfig{};
  c.eta = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(InterpolantConfig{}.refinement_variance() == doctest::Approx(1e-6 - 2.5e-7));
}

}
