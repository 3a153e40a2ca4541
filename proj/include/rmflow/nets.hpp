#pragma once

#include <atomic>
#include <cstddef>
#include <string>
#include <vector>

#include "rmflow/autodiff.hpp"
#include "rmflow/rng.hpp"
#include "rmflow/tensor.hpp"

namespace rmflow {

/// Ordered, named parameter tensors. Order is the binding order on a tape and
/// the order of gradient vectors.
class ParameterSet {
 public:
  void add(std::string name, Tensor value);

  [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
  [[nodiscard]] std::size_t scalar_count() const noexcept;
  [[nodiscard]] const std::string& name(std::size_t i) const { return names_[i]; }
  [[nodiscard]] const std::vector<std::string>& names() const noexcept { return names_; }
  [[nodiscard]] const Tensor& operator[](std::size_t i) const { return values_[i]; }
  Tensor& operator[](std::size_t i) { return values_[i]; }
  [[nodiscard]] std::vector<Tensor>& tensors() noexcept { return values_; }
  [[nodiscard]] const std::vector<Tensor>& tensors() const noexcept { return values_; }
  /// Index of `name`; throws std::out_of_range if absent.
  [[nodiscard]] std::size_t index_of(const std::string& name) const;

  /// Registers every tensor as a differentiable leaf on `tape`.
  [[nodiscard]] std::vector<ad::Var> bind(ad::Tape& tape) const;
  /// Registers every tensor as a constant on `tape`.
  [[nodiscard]] std::vector<ad::Var> bind_constant(ad::Tape& tape) const;

  bool operator==(const ParameterSet&) const = default;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

struct VelocityNetConfig {
  std::size_t dim = 1;              // data dimensionality d
  std::size_t width = 256;
  std::size_t depth = 6;            // residual blocks
  std::size_t frequencies = 32;     // per scalar; embedding is 2× this wide
  double min_frequency = 3.141592653589793;
  double max_frequency = 64.0 * 3.141592653589793;

  [[nodiscard]] std::size_t embed_dim() const noexcept { return 2 * frequencies; }
  void validate() const;
  bool operator==(const VelocityNetConfig&) const = default;
};

/// Geometric frequency ladder ω_k = min·(max/min)^(k/(K−1)).
std::vector<double> embedding_frequencies(const VelocityNetConfig& cfg);

/// Residual MLP average-velocity field û_{t,r}(x) = net(x, t, t − r).
///
///   h₀ = x·W_in + b_in
///   h_{k+1} = h_k + silu([h_k ‖ emb(t) ‖ emb(t − r)]·W1_k + b1_k)·W2_k + b2_k
///   û = h_K·W_out + b_out
///
/// The raw output is the mean velocity in network time, where the prior sits
/// at t = 1 and data at t = 0 (see flow.hpp).
class VelocityNet {
 public:
  explicit VelocityNet(VelocityNetConfig cfg);  // zero parameters
  VelocityNet(VelocityNetConfig cfg, Rng& rng);  // standard init, zero output layer
  VelocityNet(VelocityNetConfig cfg, ParameterSet params);

  VelocityNet(const VelocityNet& other);
  VelocityNet& operator=(const VelocityNet& other);

  [[nodiscard]] const VelocityNetConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] const ParameterSet& params() const noexcept { return params_; }
  ParameterSet& params() noexcept { return params_; }

  static std::size_t parameter_count(const VelocityNetConfig& cfg);

  /// Builds the forward graph. `bound` is params().bind(tape) (or bind_constant).
  ad::Var apply(std::span<const ad::Var> bound, ad::Var x, ad::Var t, ad::Var r) const;

  /// Plain evaluation on tensors; counts one network evaluation.
  [[nodiscard]] Tensor evaluate(const Tensor& x, const Tensor& t, const Tensor& r) const;

  [[nodiscard]] std::size_t evaluations() const noexcept { return evaluations_.load(); }
  void reset_evaluations() noexcept { evaluations_.store(0); }
  /// For callers that build graphs with apply() and want the NFE tally kept.
  void count_evaluation() const noexcept { evaluations_.fetch_add(1); }

 private:
  void check_inputs(const Shape& x, const Shape& t, const Shape& r) const;

  VelocityNetConfig cfg_;
  std::vector<double> freqs_;
  ParameterSet params_;
  mutable std::atomic<std::size_t> evaluations_{0};
};

struct GuidanceEncoderConfig {
  std::size_t context_dim = 1;
  std::size_t out_dim = 1;
  std::vector<std::size_t> hidden;  // empty: a single affine map
  bool bias = true;

  void validate() const;
  bool operator==(const GuidanceEncoderConfig&) const = default;
};

/// MLP φ_ω(c) mapping a context vector into data space.
class GuidanceEncoder {
 public:
  explicit GuidanceEncoder(GuidanceEncoderConfig cfg);  // zero parameters
  GuidanceEncoder(GuidanceEncoderConfig cfg, Rng& rng);
  GuidanceEncoder(GuidanceEncoderConfig cfg, ParameterSet params);

  [[nodiscard]] const GuidanceEncoderConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] const ParameterSet& params() const noexcept { return params_; }
  ParameterSet& params() noexcept { return params_; }

  ad::Var apply(std::span<const ad::Var> bound, ad::Var c) const;
  [[nodiscard]] Tensor encode(const Tensor& c) const;

 private:
  GuidanceEncoderConfig cfg_;
  ParameterSet params_;
};

}  // namespace rmflow
