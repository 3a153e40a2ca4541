#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rmflow/flow.hpp"
#include "rmflow/losses.hpp"
#include "rmflow/nets.hpp"
#include "rmflow/rng.hpp"
#include "rmflow/sample.hpp"
#include "rmflow/tasks.hpp"

namespace rmflow {

struct TrainConfig {
  std::size_t iterations = 100000;
  std::size_t batch_size = 256;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  double ema_decay = 0.9995;
  std::size_t warmup_iters = 0;
  double decay_power = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t count = 0;  // updates applied so far

  static AdamState zeros_like(const std::vector<Tensor>& params);
};

/// Bias-corrected Adam. Throws NumericError on a non-finite gradient before
/// touching any state.
void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state, double lr,
               double beta1, double beta2, double eps = 1e-8);

/// shadow ← decay·shadow + (1 − decay)·params
void ema_update(std::vector<Tensor>& shadow, const std::vector<Tensor>& params, double decay);

/// Linear warmup, then lr·(1 − progress)^p, reaching 0 at cfg.iterations.
double lr_at(std::size_t step, const TrainConfig& cfg);

struct TrainSetup {
  ModelKind kind = ModelKind::rmflow;
  TrainConfig train;
  LossConfig loss;
  InterpolantConfig interp;
  TimeSamplerConfig times;
  VelocityNetConfig net;
  std::optional<GuidanceEncoderConfig> encoder;  // set for guided tasks
  RewardFn reward;
  nlohmann::json config_echo;  // stored verbatim in checkpoints

  /// Loss weights actually used: MeanFlow zeroes every extra term.
  [[nodiscard]] LossConfig effective_loss() const;
  void validate() const;
};

struct Checkpoint {
  int version = 1;
  std::size_t step = 0;
  nlohmann::json config;
  ParameterSet params;  // "net/…" then "enc/…"
  ParameterSet ema;
  ParameterSet adam_m;
  ParameterSet adam_v;
  Rng::State rng_state;
  nlohmann::json extras;  // task side data such as normalization statistics

  bool operator==(const Checkpoint&) const = default;
};

nlohmann::json checkpoint_to_json(const Checkpoint& ck);
/// Needs the layout (names and shapes) to rebuild tensors from flat arrays.
Checkpoint checkpoint_from_json(const nlohmann::json& j, const ParameterSet& layout);
void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path, const ParameterSet& layout);

struct MetricsRow {
  std::size_t step = 0;
  LossReport report;
  double lr = 0.0;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRow& row);

/// Owns the model, optimizer and EMA state for one run. Step k draws every
/// random quantity from Rng(seed).split(1).split(k), so a resumed run replays
/// the uninterrupted one exactly.
class Trainer {
 public:
  Trainer(const Task& task, TrainSetup setup);
  Trainer(const Task& task, TrainSetup setup, const Checkpoint& resume);

  /// One optimizer step; returns the loss report of the batch it used.
  MetricsRow step();
  /// Steps until `until` iterations are done, calling `on_step` after each.
  void run(std::size_t until, const std::function<void(const MetricsRow&)>& on_step = {});

  [[nodiscard]] std::size_t steps_done() const noexcept { return step_; }
  [[nodiscard]] const TrainSetup& setup() const noexcept { return setup_; }
  [[nodiscard]] const VelocityNet& net() const noexcept { return net_; }
  [[nodiscard]] const GuidanceEncoder* encoder() const noexcept { return enc_ ? &*enc_ : nullptr; }
  /// Models carrying the EMA weights.
  [[nodiscard]] VelocityNet ema_net() const;
  [[nodiscard]] std::optional<GuidanceEncoder> ema_encoder() const;

  [[nodiscard]] Checkpoint checkpoint() const;
  /// The draws step k consumes.
  [[nodiscard]] TrainingDraws draws_for(std::size_t k) const;
  /// Layout of the combined parameter names used in checkpoints.
  [[nodiscard]] ParameterSet layout() const;

  nlohmann::json extras;  // copied into checkpoints

 private:
  std::vector<Tensor> flat_params() const;
  void scatter_params(const std::vector<Tensor>& flat);

  const Task& task_;
  TrainSetup setup_;
  VelocityNet net_;
  std::optional<GuidanceEncoder> enc_;
  std::vector<Tensor> ema_;
  AdamState adam_;
  std::size_t step_ = 0;
};

/// Combined checkpoint layout for a net and optional encoder.
ParameterSet combined_layout(const VelocityNet& net, const GuidanceEncoder* enc);
/// Splits combined parameters back into models.
void load_models(const ParameterSet& combined, VelocityNet& net, GuidanceEncoder* enc);

std::string fnv1a_hex(const std::string& bytes);

}  // namespace rmflow
