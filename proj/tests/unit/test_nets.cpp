#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "rmflow/error.hpp"
#include "rmflow/nets.hpp"

using namespace rmflow;
namespace ad = rmflow::ad;

namespace {

VelocityNetConfig small_net(std::size_t dim = 2) {
  VelocityNetConfig c;
  c.dim = dim;
  c.width = 16;
  c.depth = 2;
  c.frequencies = 4;
  return c;
}

// Perturbs the zero-initialised output layer so the net is not identically zero.
void randomize(VelocityNet& net, Rng& rng) {
  for (auto& p : net.params().tensors()) axpy_inplace(p, 0.3, randn(rng, p.shape()));
}

}  // namespace

TEST_SUITE("nets") {

TEST_CASE("parameter count follows the layer sizes") {
  const VelocityNetConfig c = small_net(3);
  const std::size_t h = 16, e = 8, d = 3;
  const std::size_t expect = (d * h + h) + 2 * ((h + 2 * e) * h + h + h * h + h) + (h * d + d);
  CHECK(VelocityNet::parameter_count(c) == expect);
  Rng rng(0);
  CHECK(VelocityNet(c, rng).params().scalar_count() == expect);
}

TEST_CASE("embedding frequencies form a geometric ladder between the bounds") {
  const auto c = VelocityNetConfig{};
  const auto f = embedding_frequencies(c);
  REQUIRE(f.size() == c.frequencies);
  CHECK(f.front() == doctest::Approx(c.min_frequency));
  CHECK(f.back() == doctest::Approx(c.max_frequency));
  for (std::size_t k = 2; k < f.size(); ++k) CHECK(f[k] / f[k - 1] == doctest::Approx(f[1] / f[0]));
}

TEST_CASE("fresh nets output zero and evaluate counts one evaluation") {
  Rng rng(1);
  const VelocityNet net(small_net(), rng);
  Rng drng(2);
  const Tensor x = randn(drng, {5, 2});
  const Tensor y = net.evaluate(x, Tensor::full({5}, 0.7), Tensor::full({5}, 0.2));
  CHECK(y == Tensor::zeros({5, 2}));
  CHECK(net.evaluations() == 1);
  VelocityNet copy = net;
  CHECK(copy.evaluations() == 1);
  copy.reset_evaluations();
  CHECK(copy.evaluations() == 0);
  CHECK(net.evaluations() == 1);
}

TEST_CASE("evaluate matches the graph built by apply") {
  Rng rng(3);
  VelocityNet net(small_net(), rng);
  randomize(net, rng);
  const Tensor x = randn(rng, {4, 2});
  const Tensor t = rand_uniform(rng, {4});
  const Tensor r = mul(t, rand_uniform(rng, {4}));
  ad::Tape tape;
  const auto bound = net.params().bind(tape);
  const ad::Var y = net.apply(bound, tape.constant(x), tape.constant(t), tape.constant(r));
  CHECK(y.value() == net.evaluate(x, t, r));
}

TEST_CASE("net JVP in (x, t, r) matches central differences") {
  Rng rng(4);
  VelocityNet net(small_net(), rng);
  randomize(net, rng);
  const Tensor x = randn(rng, {3, 2}), t = rand_uniform(rng, {3}), r = scale(t, 0.5);
  const Tensor dx = randn(rng, {3, 2}), dt = randn(rng, {3}), dr = randn(rng, {3});
  const std::vector<Tensor> in{x, t, r}, dir{dx, dt, dr};
  const auto res = ad::jvp(
      [&](ad::Tape& tape, std::span<const ad::Var> v) { return net.apply(net.params().bind_constant(tape), v[0], v[1], v[2]); },
      in, dir);
  const double h = 1e-6;
  auto shifted = [&](double s) {
    Tensor a = x, b = t, c = r;
    axpy_inplace(a, s, dx);
    axpy_inplace(b, s, dt);
    axpy_inplace(c, s, dr);
    return net.evaluate(a, b, c);
  };
  const Tensor fd = scale(sub(shifted(h), shifted(-h)), 0.5 / h);
  CHECK(oracle::rel_err(res.derivative, fd) < 1e-6);
}

TEST_CASE("init is seeded and parameters keep their order") {
  Rng a(7), b(7);
  const VelocityNet n1(small_net(), a), n2(small_net(), b);
  CHECK(n1.params() == n2.params());
  CHECK(n1.params().name(0) == "in.w");
  CHECK(n1.params().name(n1.params().size() - 1) == "out.b");
  CHECK(n1.params().index_of("block1.w2") < n1.params().index_of("out.w"));
  CHECK_THROWS_AS((void)n1.params().index_of("nope"), std::out_of_range);
}

TEST_CASE("input shape errors are reported") {
  Rng rng(5);
  const VelocityNet net(small_net(), rng);
  CHECK_THROWS_AS((void)net.evaluate(Tensor::zeros({4, 3}), Tensor::zeros({4}), Tensor::zeros({4})), ShapeError);
  CHECK_THROWS_AS((void)net.evaluate(Tensor::zeros({4, 2}), Tensor::zeros({3}), Tensor::zeros({4})), ShapeError);
  VelocityNetConfig bad = small_net();
  bad.width = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("guidance encoder maps contexts into data space") {
  Rng rng(6);
  GuidanceEncoder affine({3, 2, {}, true}, rng);
  const Tensor c = randn(rng, {5, 3});
  const Tensor y = affine.encode(c);
  CHECK(y.shape() == Shape{5, 2});
  // Affine map: φ(c) = c·W + b.
  const Tensor ref = add_row(oracle::naive_matmul(c, affine.params()[0]), affine.params()[1]);
  CHECK(oracle::max_abs_diff(y, ref) < 1e-12);

  GuidanceEncoder deep({3, 2, {8, 8}, false}, rng);
  CHECK(deep.params().size() == 3);
  CHECK(deep.encode(c).shape() == Shape{5, 2});
  ad::Tape tape;
  const auto bound = deep.params().bind(tape);
  CHECK(deep.apply(bound, tape.constant(c)).value() == deep.encode(c));
}

}
