#include <doctest.h>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "rmflow/error.hpp"
#include "rmflow/sample.hpp"

using namespace rmflow;

TEST_SUITE("sample") {

TEST_CASE("one MeanFlow step is x0 minus the full-span network output") {
  Rng rng(51);
  const VelocityNet net = fixture::random_net(fixture::tiny_net(2), rng);
  const Tensor x0 = randn(rng, {7, 2});
  const Tensor y = sample_meanflow(net, x0, SamplerConfig{1, {}, ModelKind::meanflow, 0});
  CHECK(y == sub(x0, net.evaluate(x0, Tensor::full({7}, 1.0), Tensor::zeros({7}))));
}

TEST_CASE("multi-step sampling composes transport steps over the grid and counts NFE") {
  Rng rng(52);
  VelocityNet net = fixture::random_net(fixture::tiny_net(1), rng);
  const Tensor x0 = randn(rng, {5, 1});
  for (std::size_t nfe : {1u, 2u, 4u, 8u}) {
    net.reset_evaluations();
    SamplerConfig cfg{nfe, {}, ModelKind::meanflow, 0};
    const Tensor y = sample_meanflow(net, x0, cfg);
    CHECK(net.evaluations() == nfe);
    Tensor ref = x0;
    for (std::size_t k = 0; k < nfe; ++k) {
      const double a = double(k) / double(nfe), b = double(k + 1) / double(nfe);
      const Tensor u = net.evaluate(ref, Tensor::full({5}, 1.0 - a), Tensor::full({5}, 1.0 - b));
      ref = sub(ref, scale(u, b - a));
    }
    CHECK(y == ref);
  }
  SamplerConfig custom{2, {0.0, 0.3, 1.0}, ModelKind::meanflow, 0};
  CHECK(custom.resolved_grid() == std::vector<double>{0.0, 0.3, 1.0});
  custom.grid = {0.0, 0.8, 0.3};
  CHECK_THROWS_AS(custom.validate(), ConfigError);
}

TEST_CASE("RMFlow sampling adds refinement noise with the right variance") {
  Rng rng(53);
  VelocityNet net = fixture::random_net(fixture::tiny_net(1), rng);
  InterpolantConfig interp;
  interp.sigma_min = 0.3;
  interp.sigma = 0.1;
  const std::size_t n = 100000;
  const Tensor x0 = Tensor::zeros({n, 1});
  net.reset_evaluations();
  Rng srng(7);
  const Tensor y = sample_rmflow(net, x0, srng, interp);
  CHECK(net.evaluations() == 1);
  const Tensor base = sample_meanflow(net, x0, SamplerConfig{1, {}, ModelKind::meanflow, 0});
  std::vector<double> noise(n);
  for (std::size_t i = 0; i < n; ++i) noise[i] = y[i] - base[i];
  const double var = interp.refinement_variance();
  CHECK(std::abs(oracle::sample_mean(noise)) < 5.0 * std::sqrt(var / double(n)));
  CHECK(std::abs(oracle::sample_var(noise) / var - 1.0) < 5.0 * std::sqrt(2.0 / double(n)));
}

TEST_CASE("RMFlow with sigma equal to sigma_min reduces to one MeanFlow step bitwise") {
  Rng rng(54);
  const VelocityNet net = fixture::random_net(fixture::tiny_net(2), rng);
  InterpolantConfig interp;
  interp.sigma = interp.sigma_min;
  const Tensor x0 = randn(rng, {9, 2});
  Rng a(3);
  CHECK(sample_rmflow(net, x0, a, interp) == sample_meanflow(net, x0, SamplerConfig{1, {}, ModelKind::meanflow, 0}));
  interp.sigma = 2.0 * interp.sigma_min;
  Rng b(3);
  CHECK_THROWS_AS((void)sample_rmflow(net, x0, b, interp), ConfigError);
}

TEST_CASE("guided priors centre on the encoder output") {
  Rng rng(55);
  const GuidanceEncoder enc({2, 1, {}, true}, rng);
  const InterpolantConfig interp;
  const Tensor ctx = randn(rng, {4, 2});
  Rng p1(9), p2(9);
  const Tensor x0 = make_prior(p1, 4, 1, true, &enc, &ctx, interp);
  Tensor expect = enc.encode(ctx);
  axpy_inplace(expect, interp.sigma_c, randn(p2, {4, 1}));
  CHECK(x0 == expect);
  CHECK_THROWS_AS((void)make_prior(p1, 4, 1, true, nullptr, &ctx, interp), ConfigError);
  Rng p3(9), p4(9);
  CHECK(make_prior(p3, 4, 1, false, nullptr, nullptr, interp) == randn(p4, {4, 1}));
}

TEST_CASE("RMFlow mode is one-step only and model kinds round-trip") {
  CHECK_THROWS_AS((SamplerConfig{2, {}, ModelKind::rmflow, 0}.validate()), ConfigError);
  CHECK(model_kind_from_string(to_string(ModelKind::meanflow)) == ModelKind::meanflow);
  CHECK(model_kind_from_string("rmflow") == ModelKind::rmflow);
  CHECK_THROWS_AS((void)model_kind_from_string("ddpm"), ConfigError);
}

}
