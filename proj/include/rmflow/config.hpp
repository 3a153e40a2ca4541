#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "rmflow/flow.hpp"
#include "rmflow/losses.hpp"
#include "rmflow/nets.hpp"
#include "rmflow/sample.hpp"
#include "rmflow/tasks.hpp"
#include "rmflow/train.hpp"

namespace rmflow {

/// Everything one run needs. JSON form: see to_json / default_config.
struct RunConfig {
  std::string task = "gmm";
  ModelKind model_kind = ModelKind::rmflow;
  std::uint64_t seed = 0;
  std::string out_dir = "run";
  TrainConfig train;
  LossConfig loss;
  InterpolantConfig interp;
  TimeSamplerConfig times;
  VelocityNetConfig net;
  std::optional<GuidanceEncoderConfig> encoder;
  SamplerConfig sampler;
  std::size_t eval_samples = 100000;

  /// Field checks plus cross-field constraints (σ < σ_min, rmflow ⇒ nfe = 1,
  /// guided task ⇔ encoder, dimensions agree with the task).
  void validate() const;
};

/// Defaults for a task, including the task-dependent λ₁ and dimensions.
RunConfig default_config(const std::string& task);

nlohmann::json to_json(const RunConfig& cfg);
/// Missing fields take default_config(task) values; unknown keys and type
/// errors raise ConfigError naming the field.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

TrainSetup make_setup(const RunConfig& cfg);

/// A trained model restored from a checkpoint file, carrying EMA weights.
struct LoadedRun {
  RunConfig config;
  Checkpoint checkpoint;
  VelocityNet net;
  std::optional<GuidanceEncoder> encoder;
  std::string checkpoint_hash;  // FNV-1a of the file bytes
};

LoadedRun load_run(const std::string& checkpoint_path);

}  // namespace rmflow
