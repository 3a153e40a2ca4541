#include "rmflow/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "rmflow/error.hpp"

namespace rmflow {
namespace {

using nlohmann::json;

void require_matching(const std::vector<Tensor*>& a, const std::vector<const Tensor*>& b, const char* op) {
  if (a.size() != b.size()) throw ShapeError(std::string(op) + ": tensor count mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i]->shape() != b[i]->shape()) {
      throw ShapeError(std::string(op) + ": shape mismatch at " + std::to_string(i) + ": " +
                       shape_str(a[i]->shape()) + " vs " + shape_str(b[i]->shape()));
    }
  }
}

void adam_impl(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads, AdamState& st,
               double lr, double b1, double b2, double eps) {
  require_matching(params, grads, "adam_step");
  for (const Tensor* g : grads) {
    if (!all_finite(*g)) throw NumericError("adam_step: non-finite gradient");
  }
  if (st.m.size() != params.size() || st.v.size() != params.size()) {
    throw ShapeError("adam_step: moment count does not match parameters");
  }
  ++st.count;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.count));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    const auto g = grads[i]->data();
    auto m = st.m[i].data();
    auto v = st.v[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      p[k] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

json params_to_json(const ParameterSet& p) {
  json j = json::object();
  for (std::size_t i = 0; i < p.size(); ++i) j[p.name(i)] = p[i].values();
  return j;
}

ParameterSet params_from_json(const json& j, const ParameterSet& layout, const char* field) {
  ParameterSet out;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const std::string& name = layout.name(i);
    if (!j.contains(name)) throw ConfigError(std::string("checkpoint.") + field + ": missing '" + name + "'");
    std::vector<double> v = j.at(name).get<std::vector<double>>();
    if (v.size() != layout[i].size()) {
      throw ShapeError(std::string("checkpoint.") + field + ": '" + name + "' has " + std::to_string(v.size()) +
                       " values, expected " + std::to_string(layout[i].size()));
    }
    out.add(name, Tensor(layout[i].shape(), std::move(v)));
  }
  return out;
}

ParameterSet with_values(const ParameterSet& layout, const std::vector<Tensor>& values) {
  ParameterSet out;
  for (std::size_t i = 0; i < layout.size(); ++i) out.add(layout.name(i), values[i]);
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (iterations == 0 || batch_size == 0) throw ConfigError("train: iterations and batch_size must be positive");
  if (!(lr > 0.0)) throw ConfigError("train.lr must be > 0");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw ConfigError("train: betas must lie in (0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be > 0");
  if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) throw ConfigError("train.ema_decay must lie in [0, 1]");
  if (warmup_iters >= iterations) throw ConfigError("train.warmup_iters must be below iterations");
  if (!(decay_power >= 0.0)) throw ConfigError("train.decay_power must be >= 0");
}

AdamState AdamState::zeros_like(const std::vector<Tensor>& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.shape());
    s.v.emplace_back(p.shape());
  }
  return s;
}

void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state, double lr,
               double beta1, double beta2, double eps) {
  std::vector<Tensor*> p;
  std::vector<const Tensor*> g;
  for (auto& t : params) p.push_back(&t);
  for (const auto& t : grads) g.push_back(&t);
  adam_impl(p, g, state, lr, beta1, beta2, eps);
}

void ema_update(std::vector<Tensor>& shadow, const std::vector<Tensor>& params, double decay) {
  if (shadow.size() != params.size()) throw ShapeError("ema_update: tensor count mismatch");
  for (std::size_t i = 0; i < shadow.size(); ++i) {
    if (shadow[i].shape() != params[i].shape()) throw ShapeError("ema_update: shape mismatch");
    auto s = shadow[i].data();
    const auto p = params[i].data();
    for (std::size_t k = 0; k < s.size(); ++k) s[k] = decay * s[k] + (1.0 - decay) * p[k];
  }
}

double lr_at(std::size_t step, const TrainConfig& cfg) {
  if (step < cfg.warmup_iters) {
    return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_iters);
  }
  if (step >= cfg.iterations) return 0.0;
  const double span = static_cast<double>(cfg.iterations - cfg.warmup_iters);
  const double progress = static_cast<double>(step - cfg.warmup_iters) / span;
  return cfg.lr * std::pow(1.0 - progress, cfg.decay_power);
}

LossConfig TrainSetup::effective_loss() const {
  LossConfig l = loss;
  if (kind == ModelKind::meanflow) {
    l.lambda1 = 0.0;
    l.lambda2 = 0.0;
    l.rl_weight = 0.0;
  }
  return l;
}

void TrainSetup::validate() const {
  train.validate();
  loss.validate();
  interp.validate();
  times.validate();
  net.validate();
  if (encoder) {
    encoder->validate();
    if (encoder->out_dim != net.dim) throw ConfigError("encoder.out_dim must equal the data dimension");
  }
  if (effective_loss().rl_weight > 0.0 && !reward) throw ConfigError("rl_weight > 0 needs a reward function");
}

json checkpoint_to_json(const Checkpoint& ck) {
  json j;
  j["version"] = ck.version;
  j["step"] = ck.step;
  j["config"] = ck.config;
  j["params"] = params_to_json(ck.params);
  j["ema"] = params_to_json(ck.ema);
  j["adam_m"] = params_to_json(ck.adam_m);
  j["adam_v"] = params_to_json(ck.adam_v);
  j["rng_state"] = {{"seed", ck.rng_state.seed}, {"stream", ck.rng_state.stream}, {"counter", ck.rng_state.counter}};
  j["extras"] = ck.extras;
  return j;
}

Checkpoint checkpoint_from_json(const json& j, const ParameterSet& layout) {
  Checkpoint ck;
  ck.version = j.at("version").get<int>();
  if (ck.version != 1) throw ConfigError("checkpoint: unsupported version " + std::to_string(ck.version));
  ck.step = j.at("step").get<std::size_t>();
  ck.config = j.at("config");
  ck.params = params_from_json(j.at("params"), layout, "params");
  ck.ema = params_from_json(j.at("ema"), layout, "ema");
  ck.adam_m = params_from_json(j.at("adam_m"), layout, "adam_m");
  ck.adam_v = params_from_json(j.at("adam_v"), layout, "adam_v");
  const json& r = j.at("rng_state");
  ck.rng_state = {r.at("seed").get<std::uint64_t>(), r.at("stream").get<std::uint64_t>(),
                  r.at("counter").get<std::uint64_t>()};
  if (j.contains("extras")) ck.extras = j.at("extras");
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << checkpoint_to_json(ck).dump();
    if (!out) throw std::runtime_error("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw std::runtime_error("cannot rename " + tmp + " to " + path);
}

Checkpoint load_checkpoint(const std::string& path, const ParameterSet& layout) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path);
  return checkpoint_from_json(json::parse(in), layout);
}

std::string metrics_csv_header() { return "step,total,cmfm,nll,guidance_reg,rl,lr,grad_norm"; }

std::string metrics_csv_row(const MetricsRow& row) {
  char buf[320];
  const auto& r = row.report;
  std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", row.step, r.total, r.cmfm, r.nll,
                r.guidance_reg, r.rl, row.lr, r.grad_norm);
  return buf;
}

ParameterSet combined_layout(const VelocityNet& net, const GuidanceEncoder* enc) {
  ParameterSet out;
  for (std::size_t i = 0; i < net.params().size(); ++i) out.add("net/" + net.params().name(i), net.params()[i]);
  if (enc) {
    for (std::size_t i = 0; i < enc->params().size(); ++i) out.add("enc/" + enc->params().name(i), enc->params()[i]);
  }
  return out;
}

void load_models(const ParameterSet& combined, VelocityNet& net, GuidanceEncoder* enc) {
  const std::size_t nn = net.params().size();
  const std::size_t ne = enc ? enc->params().size() : 0;
  if (combined.size() != nn + ne) throw ShapeError("load_models: parameter count mismatch");
  for (std::size_t i = 0; i < nn; ++i) {
    if (combined.name(i) != "net/" + net.params().name(i) || combined[i].shape() != net.params()[i].shape()) {
      throw ShapeError("load_models: unexpected parameter '" + combined.name(i) + "'");
    }
    net.params()[i] = combined[i];
  }
  for (std::size_t i = 0; i < ne; ++i) {
    const std::size_t k = nn + i;
    if (combined.name(k) != "enc/" + enc->params().name(i) || combined[k].shape() != enc->params()[i].shape()) {
      throw ShapeError("load_models: unexpected parameter '" + combined.name(k) + "'");
    }
    enc->params()[i] = combined[k];
  }
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Trainer::Trainer(const Task& task, TrainSetup setup) : task_(task), setup_(std::move(setup)), net_(setup_.net) {
  setup_.validate();
  if (setup_.net.dim != task_.dim()) throw ConfigError("net.dim does not match the task dimension");
  if ((task_.context_dim() > 0) != setup_.encoder.has_value()) {
    throw ConfigError("an encoder is required exactly when the task provides a context");
  }
  const Rng root(setup_.train.seed);
  Rng init = root.split(0);
  net_ = VelocityNet(setup_.net, init);
  if (setup_.encoder) {
    if (setup_.encoder->context_dim != task_.context_dim()) throw ConfigError("encoder.context_dim mismatch");
    Rng einit = root.split(2);
    enc_.emplace(*setup_.encoder, einit);
  }
  ema_ = flat_params();
  adam_ = AdamState::zeros_like(ema_);
}

Trainer::Trainer(const Task& task, TrainSetup setup, const Checkpoint& resume) : Trainer(task, std::move(setup)) {
  const ParameterSet lay = layout();
  if (resume.params.names() != lay.names()) throw ConfigError("checkpoint does not match the model layout");
  scatter_params(resume.params.tensors());
  ema_ = resume.ema.tensors();
  adam_.m = resume.adam_m.tensors();
  adam_.v = resume.adam_v.tensors();
  adam_.count = resume.step;
  step_ = resume.step;
  extras = resume.extras;
}

std::vector<Tensor> Trainer::flat_params() const {
  std::vector<Tensor> out = net_.params().tensors();
  if (enc_) out.insert(out.end(), enc_->params().tensors().begin(), enc_->params().tensors().end());
  return out;
}

void Trainer::scatter_params(const std::vector<Tensor>& flat) {
  const std::size_t nn = net_.params().size();
  for (std::size_t i = 0; i < nn; ++i) net_.params()[i] = flat[i];
  if (enc_) {
    for (std::size_t i = 0; i < enc_->params().size(); ++i) enc_->params()[i] = flat[nn + i];
  }
}

ParameterSet Trainer::layout() const { return combined_layout(net_, encoder()); }

TrainingDraws Trainer::draws_for(std::size_t k) const {
  Rng rng = Rng(setup_.train.seed).split(1).split(k);
  const std::size_t b = setup_.train.batch_size;
  DataBatch data = task_.draw(rng, b);
  TrainingDraws d;
  d.prior_noise = randn(rng, data.x.shape());
  TimePair tr = network_times(sample_times(rng, setup_.times, b));
  d.t = std::move(tr.t);
  d.r = std::move(tr.r);
  d.path_noise = randn(rng, data.x.shape());
  d.nll_noise = randn(rng, data.x.shape());
  d.refine_noise = randn(rng, data.x.shape());
  d.x_data = std::move(data.x);
  d.context = std::move(data.context);
  return d;
}

MetricsRow Trainer::step() {
  const TrainingDraws d = draws_for(step_);
  RmflowResult res = rmflow_loss(net_, encoder(), d, setup_.effective_loss(), setup_.interp, true, setup_.reward);
  if (!std::isfinite(res.report.grad_norm)) {
    throw NumericError("training diverged at step " + std::to_string(step_) + ": non-finite gradient");
  }
  const double lr = lr_at(step_, setup_.train);

  std::vector<Tensor*> p;
  std::vector<const Tensor*> g;
  for (auto& t : net_.params().tensors()) p.push_back(&t);
  for (const auto& t : res.net_grads) g.push_back(&t);
  if (enc_) {
    for (auto& t : enc_->params().tensors()) p.push_back(&t);
    for (const auto& t : res.enc_grads) g.push_back(&t);
  }
  adam_impl(p, g, adam_, lr, setup_.train.beta1, setup_.train.beta2, setup_.train.adam_eps);

  const double decay = setup_.train.ema_decay;
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto s = ema_[i].data();
    const auto v = p[i]->data();
    for (std::size_t k = 0; k < s.size(); ++k) s[k] = decay * s[k] + (1.0 - decay) * v[k];
  }
  MetricsRow row{step_, res.report, lr};
  ++step_;
  return row;
}

void Trainer::run(std::size_t until, const std::function<void(const MetricsRow&)>& on_step) {
  while (step_ < until) {
    const MetricsRow row = step();
    if (on_step) on_step(row);
  }
}

VelocityNet Trainer::ema_net() const {
  VelocityNet out(setup_.net);
  for (std::size_t i = 0; i < out.params().size(); ++i) out.params()[i] = ema_[i];
  return out;
}

std::optional<GuidanceEncoder> Trainer::ema_encoder() const {
  if (!enc_) return std::nullopt;
  GuidanceEncoder out(*setup_.encoder);
  const std::size_t nn = net_.params().size();
  for (std::size_t i = 0; i < out.params().size(); ++i) out.params()[i] = ema_[nn + i];
  return out;
}

Checkpoint Trainer::checkpoint() const {
  const ParameterSet lay = layout();
  Checkpoint ck;
  ck.step = step_;
  ck.config = setup_.config_echo;
  ck.params = lay;
  ck.ema = with_values(lay, ema_);
  ck.adam_m = with_values(lay, adam_.m);
  ck.adam_v = with_values(lay, adam_.v);
  ck.rng_state = Rng(setup_.train.seed).split(1).split(step_).state();
  ck.extras = extras;
  return ck;
}

}  // namespace rmflow
