#include <doctest.h>

#include <cmath>
#include <numbers>

#include "fixtures.hpp"
#include "objective_oracle.hpp"
#include "oracles.hpp"
#include "rmflow/error.hpp"
#include "rmflow/losses.hpp"

using namespace rmflow;
namespace ad = rmflow::ad;

TEST_SUITE("losses") {

TEST_CASE("cmfm value matches the finite-difference target oracle") {
  Rng rng(31);
  const VelocityNet net = fixture::random_net(fixture::tiny_net(2), rng);
  const TrainingDraws d = fixture::random_draws(rng, 8, 2);
  const InterpolantConfig interp;
  const LossConfig cfg;
  const oracle::Prepared p = oracle::prepare(net, nullptr, d, interp);
  const oracle::Frozen fz = oracle::freeze(net, p, cfg);
  const double expect = oracle::objective(net, nullptr, d, cfg, interp, fz);
  const FlowBatch batch = make_flow_batch(interp, p.x0, d.x_data, d.t, d.r, d.path_noise);
  CHECK(cmfm_value(net, batch, cfg) == doctest::Approx(expect).epsilon(1e-8));
}

TEST_CASE("cmfm at r = t is the weighted instantaneous loss exactly") {
  Rng rng(32);
  const VelocityNet net = fixture::random_net(fixture::tiny_net(3), rng);
  const Tensor x0 = randn(rng, {16, 3}), x1 = randn(rng, {16, 3}), eps = randn(rng, {16, 3});
  const Tensor t = rand_uniform(rng, {16});
  const FlowBatch b = make_flow_batch(InterpolantConfig{}, x0, x1, t, t, eps);
  ad::Tape tape;
  const auto bound = net.params().bind(tape);
  CHECK(cmfm_loss(net, bound, b, LossConfig{}).value().item() == cfm_loss(net, bound, b, LossConfig{}).value().item());
}

TEST_CASE("adaptive weight exponent zero gives the plain mean squared error") {
  Rng rng(33);
  const VelocityNet net = fixture::random_net(fixture::tiny_net(1), rng);
  const Tensor x0 = randn(rng, {10, 1}), x1 = randn(rng, {10, 1}), eps = randn(rng, {10, 1});
  const Tensor t = rand_uniform(rng, {10});
  const FlowBatch b = make_flow_batch(InterpolantConfig{}, x0, x1, t, t, eps);
  LossConfig cfg;
  cfg.m = 0.0;
  const double mse = sum(row_sqnorm(sub(net.evaluate(b.xt, b.t, b.t), b.v_cond))) / 10.0;
  CHECK(cmfm_value(net, b, cfg) == doctest::Approx(mse).epsilon(1e-12));
}

TEST_CASE("joint objective gradient matches finite differences with frozen targets") {
  Rng rng(34);
  for (bool guided : {false, true}) {
    const VelocityNet net = fixture::random_net(fixture::tiny_net(2, 8, 1), rng);
    std::optional<GuidanceEncoder> enc;
    if (guided) enc = GuidanceEncoder({3, 2, {4}, true}, rng);
    const TrainingDraws d = fixture::random_draws(rng, 6, 2, guided ? 3 : 0);
    LossConfig cfg;
    cfg.lambda1 = 0.3;
    cfg.lambda2 = guided ? 0.2 : 0.0;
    const InterpolantConfig interp;
    const RmflowResult res = rmflow_loss(net, enc ? &*enc : nullptr, d, cfg, interp);
    const auto fd = oracle::fd_gradient(net, enc, d, cfg, interp);
    INFO("guided=" << guided);
    CHECK(oracle::rel_err_l2(oracle::flatten(res.net_grads, res.enc_grads), fd) < 1e-6);
  }
}

TEST_CASE("zero weights leave the joint objective equal to cmfm bitwise") {
  Rng rng(35);
  const VelocityNet net = fixture::random_net(fixture::tiny_net(2), rng);
  const TrainingDraws d = fixture::random_draws(rng, 12, 2);
  const InterpolantConfig interp;
  const RmflowResult res = rmflow_loss(net, nullptr, d, LossConfig{}, interp);
  CHECK(res.report.total == res.report.cmfm);
  CHECK(res.report.nll > 0.0);  // still reported
  const oracle::Prepared p = oracle::prepare(net, nullptr, d, interp);
  const FlowBatch batch = make_flow_batch(interp, p.x0, d.x_data, d.t, d.r, d.path_noise);
  ad::Tape tape;
  const auto bound = net.params().bind(tape);
  const ad::Var ref = cmfm_loss(net, bound, batch, LossConfig{});
  CHECK(res.report.total == ref.value().item());
  const auto g = tape.grad(ref, bound);
  CHECK(g == res.net_grads);
}

TEST_CASE("one-step likelihood is a normalized Gaussian") {
  Rng rng(36);
  const VelocityNet net = fixture::random_net(fixture::tiny_net(1), rng);
  InterpolantConfig interp;
  interp.sigma_min = 0.2;
  interp.sigma = 0.1;
  const Tensor x0 = Tensor({1, 1}, {0.4});
  const double mean = x0[0] - net.evaluate(x0, Tensor::vector({1.0}), Tensor::vector({0.0}))[0];
  const double var = interp.refinement_variance();
  const std::size_t n = 2001;
  double mass = 0.0;
  const double lo = mean - 8.0 * std::sqrt(var), hi = mean + 8.0 * std::sqrt(var), h = (hi - lo) / (n - 1);
  for (std::size_t k = 0; k < n; ++k) {
    const double x = lo + h * double(k);
    const double lp = log_likelihood(net, Tensor({1, 1}, {x}), x0, interp)[0];
    const double ref = -0.5 * std::log(2.0 * std::numbers::pi * var) - 0.5 * (x - mean) * (x - mean) / var;
    REQUIRE(lp == doctest::Approx(ref).epsilon(1e-12));
    mass += std::exp(lp) * h * ((k == 0 || k == n - 1) ? 0.5 : 1.0);
  }
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-9));
  interp.sigma = interp.sigma_min;
  CHECK_THROWS_AS((void)log_likelihood(net, x0, x0, interp), ConfigError);
}

TEST_CASE("nll loss is the mean squared one-step residual to the smoothed target") {
  Rng rng(37);
  const VelocityNet net = fixture::random_net(fixture::tiny_net(2), rng);
  const Tensor x0 = randn(rng, {5, 2}), xd = randn(rng, {5, 2}), eps = randn(rng, {5, 2});
  const InterpolantConfig interp;
  const Tensor gen = sub(x0, net.evaluate(x0, Tensor::full({5}, 1.0), Tensor::zeros({5})));
  Tensor target = xd;
  axpy_inplace(target, interp.sigma_min, eps);
  ad::Tape tape;
  const auto bound = net.params().bind(tape);
  const double v = nll_loss(net, bound, tape.constant(x0), xd, eps, interp).value().item();
  CHECK(v == doctest::Approx(sum(row_sqnorm(sub(target, gen))) / 5.0).epsilon(1e-12));
}

TEST_CASE("policy-gradient loss weights log-likelihoods by the reward") {
  Rng rng(38);
  const VelocityNet net = fixture::random_net(fixture::tiny_net(1), rng);
  const Tensor x0 = randn(rng, {4, 1}), xt = randn(rng, {4, 1});
  const Tensor reward = Tensor::vector({1.0, 0.0, 2.0, -1.0});
  const InterpolantConfig interp;
  const Tensor lp = log_likelihood(net, xt, x0, interp);
  double expect = 0.0;
  for (std::size_t i = 0; i < 4; ++i) expect -= lp[i] * reward[i] / 4.0;
  ad::Tape tape;
  const auto bound = net.params().bind(tape);
  CHECK(rl_loss(net, bound, tape.constant(x0), xt, reward, interp).value().item() ==
        doctest::Approx(expect).epsilon(1e-12));
  CHECK_THROWS_AS((void)rl_loss(net, bound, tape.constant(x0), xt, Tensor::vector({1.0}), interp), ShapeError);
}

TEST_CASE("reward term requires a reward function") {
  Rng rng(39);
  const VelocityNet net = fixture::random_net(fixture::tiny_net(1), rng);
  const TrainingDraws d = fixture::random_draws(rng, 4, 1);
  LossConfig cfg;
  cfg.rl_weight = 1.0;
  CHECK_THROWS_AS((void)rmflow_loss(net, nullptr, d, cfg, InterpolantConfig{}), ConfigError);
  const auto reward = [](const Tensor& x) { return Tensor::full({x.rows()}, 1.0); };
  const RmflowResult res = rmflow_loss(net, nullptr, d, cfg, InterpolantConfig{}, true, reward);
  CHECK(std::isfinite(res.report.rl));
  CHECK(res.report.total != res.report.cmfm);
}

TEST_CASE("loss config validation") {
  LossConfig c;
  c.m = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = LossConfig{};
  c.lambda1 = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

}
