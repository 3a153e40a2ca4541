#include "rmflow/config.hpp"

#include <fstream>
#include <iterator>
#include <set>

#include "rmflow/error.hpp"

namespace rmflow {
namespace {

using nlohmann::json;

std::size_t context_dim_for(const std::string& task) {
  if (task == "lorenz-guided") return 1 + 3 * 3;
  if (task == "fhn-guided") return 1 + 3 * 2;
  return 0;
}

std::size_t dim_for(const std::string& task) {
  if (task == "gmm" || task == "shift") return 1;
  if (task == "checkerboard") return 2;
  if (task == "lorenz" || task == "lorenz-guided") return TrajectorySpec::lorenz().flat_dim();
  if (task == "fhn" || task == "fhn-guided") return TrajectorySpec::fhn().flat_dim();
  throw ConfigError("task: unknown task '" + task + "'");
}

// Reads one JSON object, remembering which keys were consumed so leftovers
// can be reported as unknown fields.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  [[nodiscard]] bool has(const char* key) const { return j_.contains(key); }

  Section child(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, path_ + "." + key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      (void)v;
      if (!seen_.contains(k)) throw ConfigError(path_ + "." + k + ": unknown field");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string distribution_name(TimeDistribution d) { return d == TimeDistribution::linear ? "linear" : "uniform"; }

TimeDistribution distribution_from(const std::string& s) {
  if (s == "linear") return TimeDistribution::linear;
  if (s == "uniform") return TimeDistribution::uniform;
  throw ConfigError("times.distribution: expected 'linear' or 'uniform', got '" + s + "'");
}

}  // namespace

void RunConfig::validate() const {
  const std::size_t d = dim_for(task);
  train.validate();
  loss.validate();
  interp.validate();
  times.validate();
  net.validate();
  sampler.validate();
  if (net.dim != d) throw ConfigError("net.dim: task '" + task + "' has dimension " + std::to_string(d));
  const std::size_t c = context_dim_for(task);
  if ((c > 0) != encoder.has_value()) {
    throw ConfigError(c > 0 ? "encoder: guided task '" + task + "' needs an encoder"
                            : "encoder: task '" + task + "' takes no context");
  }
  if (encoder) {
    encoder->validate();
    if (encoder->context_dim != c) throw ConfigError("encoder.context_dim must be " + std::to_string(c));
    if (encoder->out_dim != d) throw ConfigError("encoder.out_dim must be " + std::to_string(d));
  }
  if (eval_samples == 0) throw ConfigError("eval_samples must be positive");
  if (loss.rl_weight > 0.0) throw ConfigError("loss.rl_weight: no reward is available from a config file");
}

RunConfig default_config(const std::string& task) {
  RunConfig c;
  c.task = task;
  c.net.dim = dim_for(task);
  c.out_dir = "runs/" + task;
  c.sampler.seed = 1;
  if (task == "gmm" || task == "checkerboard" || task == "shift") {
    c.loss.lambda1 = 1e-1;
  } else {
    c.loss.lambda1 = 1e-2;
  }
  if (const std::size_t ctx = context_dim_for(task); ctx > 0) {
    c.encoder = GuidanceEncoderConfig{ctx, c.net.dim, {64}, true};
    c.loss.lambda2 = 1e-4;
  }
  return c;
}

json to_json(const RunConfig& c) {
  json j;
  j["task"] = c.task;
  j["model_kind"] = to_string(c.model_kind);
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  j["train"] = {{"iterations", c.train.iterations}, {"batch_size", c.train.batch_size},
                {"lr", c.train.lr},                 {"beta1", c.train.beta1},
                {"beta2", c.train.beta2},           {"adam_eps", c.train.adam_eps},
                {"ema_decay", c.train.ema_decay},   {"warmup_iters", c.train.warmup_iters},
                {"decay_power", c.train.decay_power}};
  j["loss"] = {{"lambda1", c.loss.lambda1}, {"lambda2", c.loss.lambda2}, {"m", c.loss.m},
               {"eps_w", c.loss.eps_w},     {"rl_weight", c.loss.rl_weight}};
  j["interpolant"] = {{"eta", c.interp.eta},         {"sigma_min", c.interp.sigma_min}, {"sigma", c.interp.sigma},
                      {"sigma_c", c.interp.sigma_c}, {"t_clamp", c.interp.t_clamp}};
  j["times"] = {{"q", c.times.q}, {"distribution", distribution_name(c.times.distribution)}};
  j["net"] = {{"dim", c.net.dim},
              {"width", c.net.width},
              {"depth", c.net.depth},
              {"frequencies", c.net.frequencies},
              {"min_frequency", c.net.min_frequency},
              {"max_frequency", c.net.max_frequency}};
  if (c.encoder) {
    j["encoder"] = {{"context_dim", c.encoder->context_dim},
                    {"out_dim", c.encoder->out_dim},
                    {"hidden", c.encoder->hidden},
                    {"bias", c.encoder->bias}};
  }
  j["sampler"] = {{"nfe", c.sampler.nfe}, {"grid", c.sampler.grid}, {"mode", to_string(c.sampler.mode)},
                  {"seed", c.sampler.seed}};
  j["eval_samples"] = c.eval_samples;
  return j;
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  std::string task = "gmm";
  if (j.contains("task")) {
    if (!j.at("task").is_string()) throw ConfigError("config.task: expected a string");
    task = j.at("task").get<std::string>();
  }
  RunConfig c = default_config(task);
  Section root(j, "config");
  root.read("task", c.task);
  std::string kind = to_string(c.model_kind);
  root.read("model_kind", kind);
  c.model_kind = model_kind_from_string(kind);
  root.read("seed", c.seed);
  root.read("out_dir", c.out_dir);
  root.read("eval_samples", c.eval_samples);

  Section tr = root.child("train");
  tr.read("iterations", c.train.iterations);
  tr.read("batch_size", c.train.batch_size);
  tr.read("lr", c.train.lr);
  tr.read("beta1", c.train.beta1);
  tr.read("beta2", c.train.beta2);
  tr.read("adam_eps", c.train.adam_eps);
  tr.read("ema_decay", c.train.ema_decay);
  tr.read("warmup_iters", c.train.warmup_iters);
  tr.read("decay_power", c.train.decay_power);
  tr.finish();

  Section lo = root.child("loss");
  lo.read("lambda1", c.loss.lambda1);
  lo.read("lambda2", c.loss.lambda2);
  lo.read("m", c.loss.m);
  lo.read("eps_w", c.loss.eps_w);
  lo.read("rl_weight", c.loss.rl_weight);
  lo.finish();

  Section in = root.child("interpolant");
  in.read("eta", c.interp.eta);
  in.read("sigma_min", c.interp.sigma_min);
  in.read("sigma", c.interp.sigma);
  in.read("sigma_c", c.interp.sigma_c);
  in.read("t_clamp", c.interp.t_clamp);
  in.finish();

  Section ti = root.child("times");
  ti.read("q", c.times.q);
  std::string dist = distribution_name(c.times.distribution);
  ti.read("distribution", dist);
  c.times.distribution = distribution_from(dist);
  ti.finish();

  Section ne = root.child("net");
  ne.read("dim", c.net.dim);
  ne.read("width", c.net.width);
  ne.read("depth", c.net.depth);
  ne.read("frequencies", c.net.frequencies);
  ne.read("min_frequency", c.net.min_frequency);
  ne.read("max_frequency", c.net.max_frequency);
  ne.finish();

  if (root.has("encoder")) {
    if (!c.encoder) c.encoder = GuidanceEncoderConfig{};
    Section en = root.child("encoder");
    en.read("context_dim", c.encoder->context_dim);
    en.read("out_dim", c.encoder->out_dim);
    en.read("hidden", c.encoder->hidden);
    en.read("bias", c.encoder->bias);
    en.finish();
  }

  Section sa = root.child("sampler");
  sa.read("nfe", c.sampler.nfe);
  sa.read("grid", c.sampler.grid);
  std::string mode = to_string(c.sampler.mode);
  sa.read("mode", mode);
  c.sampler.mode = model_kind_from_string(mode);
  sa.read("seed", c.sampler.seed);
  sa.finish();

  root.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

TrainSetup make_setup(const RunConfig& c) {
  c.validate();
  TrainSetup s;
  s.kind = c.model_kind;
  s.train = c.train;
  s.train.seed = c.seed;
  s.loss = c.loss;
  s.interp = c.interp;
  s.times = c.times;
  s.net = c.net;
  s.encoder = c.encoder;
  s.config_echo = to_json(c);
  return s;
}

LoadedRun load_run(const std::string& checkpoint_path) {
  std::ifstream in(checkpoint_path, std::ios::binary);
  if (!in) throw ConfigError("checkpoint: cannot read '" + checkpoint_path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  json j;
  try {
    j = json::parse(bytes);
  } catch (const json::parse_error& e) {
    throw ConfigError("checkpoint: " + checkpoint_path + ": " + e.what());
  }
  if (!j.contains("config")) throw ConfigError("checkpoint: no config snapshot in '" + checkpoint_path + "'");
  RunConfig cfg = run_config_from_json(j.at("config"));
  VelocityNet net(cfg.net);
  std::optional<GuidanceEncoder> enc;
  if (cfg.encoder) enc.emplace(*cfg.encoder);
  Checkpoint ck = checkpoint_from_json(j, combined_layout(net, enc ? &*enc : nullptr));
  load_models(ck.ema, net, enc ? &*enc : nullptr);
  return {std::move(cfg), std::move(ck), std::move(net), std::move(enc), fnv1a_hex(bytes)};
}

}  // namespace rmflow
