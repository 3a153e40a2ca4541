#pragma once

#include "rmflow/flow.hpp"
#include "rmflow/losses.hpp"
#include "rmflow/nets.hpp"

namespace fixture {

inline rmflow::VelocityNetConfig tiny_net(std::size_t dim, std::size_t width = 12, std::size_t depth = 2) {
  rmflow::VelocityNetConfig c;
  c.dim = dim;
  c.width = width;
  c.depth = depth;
  c.frequencies = 3;
  c.min_frequency = 1.0;
  c.max_frequency = 6.0;
  return c;
}

/// A random net whose output layer is not zero.
inline rmflow::VelocityNet random_net(const rmflow::VelocityNetConfig& c, rmflow::Rng& rng, double spread = 0.3) {
  rmflow::VelocityNet net(c, rng);
  for (auto& p : net.params().tensors()) rmflow::axpy_inplace(p, spread, rmflow::randn(rng, p.shape()));
  return net;
}

inline rmflow::TrainingDraws random_draws(rmflow::Rng& rng, std::size_t b, std::size_t d, std::size_t ctx = 0,
                                          double q = 0.5) {
  rmflow::TrainingDraws dr;
  dr.x_data = rmflow::randn(rng, {b, d});
  if (ctx > 0) dr.context = rmflow::randn(rng, {b, ctx});
  dr.prior_noise = rmflow::randn(rng, {b, d});
  dr.path_noise = rmflow::randn(rng, {b, d});
  dr.nll_noise = rmflow::randn(rng, {b, d});
  dr.refine_noise = rmflow::randn(rng, {b, d});
  rmflow::TimePair tp = rmflow::network_times(rmflow::sample_times(rng, {q, rmflow::TimeDistribution::linear}, b));
  dr.t = std::move(tp.t);
  dr.r = std::move(tp.r);
  return dr;
}

}  // namespace fixture
