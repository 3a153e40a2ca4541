#include "rmflow/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "rmflow/error.hpp"

namespace rmflow {
namespace {

std::size_t bin_index(double v, double lo, double hi, std::size_t bins, bool& clipped) {
  const double u = (v - lo) / (hi - lo) * static_cast<double>(bins);
  clipped = !(v >= lo && v <= hi);
  if (!(u > 0.0)) return 0;  // also catches NaN
  const auto k = static_cast<std::size_t>(u);
  return std::min(k, bins - 1);
}

void require_same_grid(const HistDensity& p, const HistDensity& q, const char* op) {
  if (!p.same_grid(q) || p.masses.size() != q.masses.size()) {
    throw ShapeError(std::string(op) + ": histograms are on different grids");
  }
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> rank(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j);
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
    i = j + 1;
  }
  return rank;
}

}  // namespace

double HistDensity::bin_center(std::size_t dim, std::size_t k) const {
  const double w = (hi[dim] - lo[dim]) / static_cast<double>(bins[dim]);
  return lo[dim] + (static_cast<double>(k) + 0.5) * w;
}

HistDensity histogram(const Tensor& samples, const EvalGrid& grid) {
  if (samples.rank() != 2 || samples.rows() == 0) {
    throw ShapeError("histogram: need a nonempty [n×d] sample tensor, got " + shape_str(samples.shape()));
  }
  HistDensity h;
  h.lo = grid.lo;
  h.hi = grid.hi;
  h.bins = grid.bins;
  const std::size_t gd = grid.bins.size();
  if (gd == 0 || gd > 2 || grid.lo.size() != gd || grid.hi.size() != gd) {
    throw ShapeError("histogram: grid must describe 1 or 2 dimensions");
  }
  for (std::size_t k = 0; k < gd; ++k) {
    if (grid.bins[k] == 0 || !(grid.hi[k] > grid.lo[k])) throw ConfigError("histogram: invalid grid bounds or bins");
  }
  const std::size_t total_bins = gd == 1 ? grid.bins[0] : grid.bins[0] * grid.bins[1];
  std::vector<double> counts(total_bins, 0.0);

  if (grid.pooled || gd == 1) {
    if (gd != 1) throw ShapeError("histogram: pooled mode needs a 1D grid");
    if (!grid.pooled && samples.cols() != 1) {
      throw ShapeError("histogram: 1D grid for " + std::to_string(samples.cols()) + "-dimensional samples");
    }
    for (double v : samples.data()) {
      bool c = false;
      counts[bin_index(v, grid.lo[0], grid.hi[0], grid.bins[0], c)] += 1.0;
      h.clipped += c ? 1 : 0;
    }
    h.count = samples.size();
  } else {
    if (samples.cols() != 2) throw ShapeError("histogram: 2D grid needs [n×2] samples");
    for (std::size_t i = 0; i < samples.rows(); ++i) {
      bool cx = false, cy = false;
      const std::size_t ix = bin_index(samples[2 * i], grid.lo[0], grid.hi[0], grid.bins[0], cx);
      const std::size_t iy = bin_index(samples[2 * i + 1], grid.lo[1], grid.hi[1], grid.bins[1], cy);
      counts[ix * grid.bins[1] + iy] += 1.0;
      h.clipped += (cx || cy) ? 1 : 0;
    }
    h.count = samples.rows();
  }
  const double n = static_cast<double>(h.count);
  h.masses.resize(total_bins);
  for (std::size_t k = 0; k < total_bins; ++k) h.masses[k] = counts[k] / n;
  return h;
}

double tv_distance(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("tv_distance: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return s;
}

double kl_divergence(std::span<const double> p, std::span<const double> q, double eps) {
  if (p.size() != q.size()) throw ShapeError("kl_divergence: length mismatch");
  const double norm = 1.0 + static_cast<double>(p.size()) * eps;
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = (p[i] + eps) / norm;
    const double qi = (q[i] + eps) / norm;
    s += pi * std::log(pi / qi);
  }
  return s;
}

double tv_distance(const HistDensity& p, const HistDensity& q) {
  require_same_grid(p, q, "tv_distance");
  return tv_distance(std::span<const double>(p.masses), std::span<const double>(q.masses));
}

double kl_divergence(const HistDensity& p, const HistDensity& q, double eps) {
  require_same_grid(p, q, "kl_divergence");
  return kl_divergence(std::span<const double>(p.masses), std::span<const double>(q.masses), eps);
}

double wasserstein2_1d(std::vector<double> a, std::vector<double> b) {
  if (a.size() != b.size()) throw ShapeError("wasserstein2_1d: sample counts differ");
  if (a.empty()) throw ShapeError("wasserstein2_1d: no samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

double wasserstein2_1d(const Tensor& a, const Tensor& b) { return wasserstein2_1d(a.values(), b.values()); }

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw ShapeError("spearman: need two equal-length series of length >= 2");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

DistributionMetrics compare(const Tensor& reference, const Tensor& generated, const EvalGrid& grid, double eps) {
  const HistDensity p = histogram(reference, grid);
  const HistDensity q = histogram(generated, grid);
  return {tv_distance(p, q), kl_divergence(p, q, eps)};
}

nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["task"] = r.task;
  j["model"] = r.model;
  j["nfe"] = r.nfe;
  j["tv"] = r.tv;
  j["kl"] = r.kl;
  j["noise_floor_tv"] = r.noise_floor_tv;
  j["noise_floor_kl"] = r.noise_floor_kl;
  j["n_samples"] = r.n_samples;
  j["bins"] = {{"lo", r.grid.lo}, {"hi", r.grid.hi}, {"bins", r.grid.bins}, {"pooled", r.grid.pooled}};
  j["seed"] = r.seed;
  if (!r.conditions.empty()) j["conditions"] = r.conditions;
  return j;
}

DistributionMetrics noise_floor(const Task& task, std::size_t n, std::uint64_t seed) {
  const Rng root(seed);
  Rng a = root.split(2);
  Rng b = root.split(3);
  return compare(task.reference(a, n).x, task.reference(b, n).x, task.eval_grid());
}

EvalReport evaluate_run(const VelocityNet& net, const GuidanceEncoder* enc, const Task& task,
                        const SamplerConfig& sampler, const InterpolantConfig& interp, std::size_t n_samples) {
  sampler.validate();
  if (n_samples == 0) throw ConfigError("evaluate_run: n_samples must be positive");
  const Rng root(sampler.seed);
  EvalReport rep;
  rep.task = task.name();
  rep.model = to_string(sampler.mode);
  rep.nfe = sampler.nfe;
  rep.n_samples = n_samples;
  rep.grid = task.eval_grid();
  rep.seed = sampler.seed;

  Rng ref_rng = root.split(1);
  const DataBatch ref = task.reference(ref_rng, n_samples);
  Rng gen_rng = root.split(0);
  const Tensor* ctx = enc ? &ref.context : nullptr;
  const Tensor gen = generate(net, enc, ctx, n_samples, sampler, interp, gen_rng);
  const DistributionMetrics m = compare(ref.x, gen, rep.grid);
  rep.tv = m.tv;
  rep.kl = m.kl;
  const DistributionMetrics floor = noise_floor(task, n_samples, sampler.seed);
  rep.noise_floor_tv = floor.tv;
  rep.noise_floor_kl = floor.kl;

  const auto* traj = dynamic_cast<const TrajectoryTask*>(&task);
  if (traj != nullptr) {
    nlohmann::json cond = nlohmann::json::object();
    if (enc != nullptr) {
      for (int flag : {1, 0}) {
        Rng cr = root.split(4 + static_cast<std::uint64_t>(flag));
        const DataBatch cref = traj->reference_with_event(cr, n_samples, flag);
        Rng cg = root.split(6 + static_cast<std::uint64_t>(flag));
        const Tensor cgen = generate(net, enc, &cref.context, n_samples, sampler, interp, cg);
        const DistributionMetrics cm = compare(cref.x, cgen, rep.grid);
        cond[flag == 1 ? "with_event" : "without_event"] = {{"tv", cm.tv},
                                                             {"kl", cm.kl},
                                                             {"event_rate_generated", traj->event_rate(cgen)},
                                                             {"event_rate_reference", traj->event_rate(cref.x)}};
      }
    }
    cond["all"] = {{"event_rate_generated", traj->event_rate(gen)}, {"event_rate_reference", traj->event_rate(ref.x)}};
    rep.conditions = std::move(cond);
  }
  return rep;
}

std::string histogram_csv(const HistDensity& p, const HistDensity& q) {
  require_same_grid(p, q, "histogram_csv");
  std::ostringstream out;
  out.precision(17);
  const bool two_d = p.bins.size() == 2;
  out << (two_d ? "bin_center_x,bin_center_y,p,q\n" : "bin_center,p,q\n");
  for (std::size_t k = 0; k < p.masses.size(); ++k) {
    if (two_d) {
      out << p.bin_center(0, k / p.bins[1]) << ',' << p.bin_center(1, k % p.bins[1]);
    } else {
      out << p.bin_center(0, k);
    }
    out << ',' << p.masses[k] << ',' << q.masses[k] << '\n';
  }
  return out.str();
}

}  // namespace rmflow
