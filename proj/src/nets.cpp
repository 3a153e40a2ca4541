#include "rmflow/nets.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "rmflow/error.hpp"

namespace rmflow {
namespace {

Tensor uniform_init(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return rand_uniform(rng, Shape{fan_in, fan_out}, -bound, bound);
}

Tensor uniform_bias(Rng& rng, std::size_t fan_in, std::size_t n) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return rand_uniform(rng, Shape{n}, -bound, bound);
}

std::string block_name(std::size_t k, const char* leaf) { return "block" + std::to_string(k) + "." + leaf; }

ParameterSet zero_velocity_params(const VelocityNetConfig& c) {
  const std::size_t h = c.width;
  const std::size_t cat = h + 2 * c.embed_dim();
  ParameterSet p;
  p.add("in.w", Tensor(Shape{c.dim, h}));
  p.add("in.b", Tensor(Shape{h}));
  for (std::size_t k = 0; k < c.depth; ++k) {
    p.add(block_name(k, "w1"), Tensor(Shape{cat, h}));
    p.add(block_name(k, "b1"), Tensor(Shape{h}));
    p.add(block_name(k, "w2"), Tensor(Shape{h, h}));
    p.add(block_name(k, "b2"), Tensor(Shape{h}));
  }
  p.add("out.w", Tensor(Shape{h, c.dim}));
  p.add("out.b", Tensor(Shape{c.dim}));
  return p;
}

void check_layout(const ParameterSet& expected, const ParameterSet& got, const char* who) {
  if (expected.names() != got.names()) throw ShapeError(std::string(who) + ": parameter names do not match config");
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (expected[i].shape() != got[i].shape()) {
      throw ShapeError(std::string(who) + ": parameter '" + got.name(i) + "' has shape " +
                       shape_str(got[i].shape()) + ", expected " + shape_str(expected[i].shape()));
    }
  }
}

ParameterSet zero_encoder_params(const GuidanceEncoderConfig& c) {
  ParameterSet p;
  std::size_t in = c.context_dim;
  for (std::size_t k = 0; k <= c.hidden.size(); ++k) {
    const std::size_t out = k < c.hidden.size() ? c.hidden[k] : c.out_dim;
    p.add("enc" + std::to_string(k) + ".w", Tensor(Shape{in, out}));
    if (c.bias) p.add("enc" + std::to_string(k) + ".b", Tensor(Shape{out}));
    in = out;
  }
  return p;
}

}  // namespace

void ParameterSet::add(std::string name, Tensor value) {
  for (const auto& n : names_) {
    if (n == name) throw std::invalid_argument("ParameterSet: duplicate name '" + name + "'");
  }
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
}

std::size_t ParameterSet::scalar_count() const noexcept {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

std::size_t ParameterSet::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  throw std::out_of_range("ParameterSet: no parameter '" + name + "'");
}

std::vector<ad::Var> ParameterSet::bind(ad::Tape& tape) const {
  std::vector<ad::Var> out;
  out.reserve(values_.size());
  for (const auto& v : values_) out.push_back(tape.parameter(v));
  return out;
}

std::vector<ad::Var> ParameterSet::bind_constant(ad::Tape& tape) const {
  std::vector<ad::Var> out;
  out.reserve(values_.size());
  for (const auto& v : values_) out.push_back(tape.borrow(v));
  return out;
}

void VelocityNetConfig::validate() const {
  if (dim == 0 || width == 0 || frequencies == 0) throw ConfigError("net: dim, width and frequencies must be positive");
  if (!(min_frequency > 0.0) || !(max_frequency >= min_frequency)) {
    throw ConfigError("net: need 0 < min_frequency <= max_frequency");
  }
}

std::vector<double> embedding_frequencies(const VelocityNetConfig& cfg) {
  std::vector<double> f(cfg.frequencies);
  const double ratio = cfg.max_frequency / cfg.min_frequency;
  for (std::size_t k = 0; k < f.size(); ++k) {
    const double e = f.size() == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(f.size() - 1);
    f[k] = cfg.min_frequency * std::pow(ratio, e);
  }
  return f;
}

VelocityNet::VelocityNet(VelocityNetConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  freqs_ = embedding_frequencies(cfg_);
  params_ = zero_velocity_params(cfg_);
}

VelocityNet::VelocityNet(VelocityNetConfig cfg, Rng& rng) : VelocityNet(cfg) {
  const std::size_t h = cfg_.width;
  const std::size_t cat = h + 2 * cfg_.embed_dim();
  params_[params_.index_of("in.w")] = uniform_init(rng, cfg_.dim, h);
  params_[params_.index_of("in.b")] = uniform_bias(rng, cfg_.dim, h);
  for (std::size_t k = 0; k < cfg_.depth; ++k) {
    params_[params_.index_of(block_name(k, "w1"))] = uniform_init(rng, cat, h);
    params_[params_.index_of(block_name(k, "b1"))] = uniform_bias(rng, cat, h);
    params_[params_.index_of(block_name(k, "w2"))] = uniform_init(rng, h, h);
    params_[params_.index_of(block_name(k, "b2"))] = uniform_bias(rng, h, h);
  }
  // out.w / out.b stay zero so the untrained field is identically zero.
}

VelocityNet::VelocityNet(VelocityNetConfig cfg, ParameterSet params) : VelocityNet(cfg) {
  check_layout(params_, params, "VelocityNet");
  params_ = std::move(params);
}

VelocityNet::VelocityNet(const VelocityNet& other)
    : cfg_(other.cfg_), freqs_(other.freqs_), params_(other.params_), evaluations_(other.evaluations()) {}

VelocityNet& VelocityNet::operator=(const VelocityNet& other) {
  if (this != &other) {
    cfg_ = other.cfg_;
    freqs_ = other.freqs_;
    params_ = other.params_;
    evaluations_.store(other.evaluations());
  }
  return *this;
}

std::size_t VelocityNet::parameter_count(const VelocityNetConfig& c) {
  const std::size_t d = c.dim, h = c.width, e = c.embed_dim();
  return d * h + h + c.depth * ((h + 2 * e) * h + h + h * h + h) + h * d + d;
}

void VelocityNet::check_inputs(const Shape& x, const Shape& t, const Shape& r) const {
  if (x.size() != 2 || x[1] != cfg_.dim) {
    throw ShapeError("VelocityNet: x must be [B×" + std::to_string(cfg_.dim) + "], got " + shape_str(x));
  }
  if (t != Shape{x[0]} || r != Shape{x[0]}) {
    throw ShapeError("VelocityNet: t and r must be [" + std::to_string(x[0]) + "], got " + shape_str(t) + " and " +
                     shape_str(r));
  }
}

ad::Var VelocityNet::apply(std::span<const ad::Var> bound, ad::Var x, ad::Var t, ad::Var r) const {
  check_inputs(x.shape(), t.shape(), r.shape());
  if (bound.size() != params_.size()) throw ShapeError("VelocityNet: wrong number of bound parameters");
  const ad::Var emb =
      ad::concat_last(ad::sinusoidal_embedding(t, freqs_), ad::sinusoidal_embedding(ad::sub(t, r), freqs_));
  std::size_t i = 0;
  ad::Var h = ad::linear(x, bound[i], bound[i + 1]);
  i += 2;
  for (std::size_t k = 0; k < cfg_.depth; ++k, i += 4) {
    const ad::Var a = ad::silu(ad::linear(ad::concat_last(h, emb), bound[i], bound[i + 1]));
    h = ad::add(h, ad::linear(a, bound[i + 2], bound[i + 3]));
  }
  return ad::linear(h, bound[i], bound[i + 1]);
}

Tensor VelocityNet::evaluate(const Tensor& x, const Tensor& t, const Tensor& r) const {
  check_inputs(x.shape(), t.shape(), r.shape());
  // Large batches go through in row chunks so the tape never holds every
  // activation of, say, 10⁵ samples at once.
  constexpr std::size_t kChunk = 4096;
  const std::size_t n = x.rows();
  count_evaluation();
  if (n <= kChunk) {
    ad::Tape tape;
    const auto bound = params_.bind_constant(tape);
    return apply(bound, tape.borrow(x), tape.borrow(t), tape.borrow(r)).value();
  }
  Tensor out(Shape{n, cfg_.dim});
  for (std::size_t lo = 0; lo < n; lo += kChunk) {
    const std::size_t hi = std::min(n, lo + kChunk);
    ad::Tape tape;
    const auto bound = params_.bind_constant(tape);
    const Tensor part = apply(bound, tape.constant(slice_rows(x, lo, hi)), tape.constant(slice_rows(t, lo, hi)),
                              tape.constant(slice_rows(r, lo, hi)))
                            .value();
    std::copy(part.data().begin(), part.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(lo * cfg_.dim));
  }
  return out;
}

void GuidanceEncoderConfig::validate() const {
  if (context_dim == 0 || out_dim == 0) throw ConfigError("encoder: context_dim and out_dim must be positive");
  for (std::size_t w : hidden) {
    if (w == 0) throw ConfigError("encoder: hidden widths must be positive");
  }
}

GuidanceEncoder::GuidanceEncoder(GuidanceEncoderConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  params_ = zero_encoder_params(cfg_);
}

GuidanceEncoder::GuidanceEncoder(GuidanceEncoderConfig cfg, Rng& rng) : GuidanceEncoder(std::move(cfg)) {
  std::size_t in = cfg_.context_dim;
  std::size_t idx = 0;
  for (std::size_t k = 0; k <= cfg_.hidden.size(); ++k) {
    const std::size_t out = k < cfg_.hidden.size() ? cfg_.hidden[k] : cfg_.out_dim;
    params_[idx++] = uniform_init(rng, in, out);
    if (cfg_.bias) params_[idx++] = uniform_bias(rng, in, out);
    in = out;
  }
}

GuidanceEncoder::GuidanceEncoder(GuidanceEncoderConfig cfg, ParameterSet params) : GuidanceEncoder(std::move(cfg)) {
  check_layout(params_, params, "GuidanceEncoder");
  params_ = std::move(params);
}

ad::Var GuidanceEncoder::apply(std::span<const ad::Var> bound, ad::Var c) const {
  if (c.value().rank() != 2 || c.value().cols() != cfg_.context_dim) {
    throw ShapeError("GuidanceEncoder: context must be [B×" + std::to_string(cfg_.context_dim) + "], got " +
                     shape_str(c.shape()));
  }
  if (bound.size() != params_.size()) throw ShapeError("GuidanceEncoder: wrong number of bound parameters");
  ad::Var h = c;
  std::size_t idx = 0;
  for (std::size_t k = 0; k <= cfg_.hidden.size(); ++k) {
    if (cfg_.bias) {
      h = ad::linear(h, bound[idx], bound[idx + 1]);
      idx += 2;
    } else {
      h = ad::matmul(h, bound[idx++]);
    }
    if (k < cfg_.hidden.size()) h = ad::silu(h);
  }
  return h;
}

Tensor GuidanceEncoder::encode(const Tensor& c) const {
  ad::Tape tape;
  const auto bound = params_.bind_constant(tape);
  return apply(bound, tape.borrow(c)).value();
}

}  // namespace rmflow
