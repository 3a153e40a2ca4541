#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "rmflow/tensor.hpp"

namespace rmflow::ad {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  [[nodiscard]] const Tensor& value() const;
  /// Forward-mode tangent, or nullptr when the node carries no tangent (zero).
  [[nodiscard]] const Tensor* tangent() const;
  [[nodiscard]] const Shape& shape() const { return value().shape(); }
  [[nodiscard]] bool requires_grad() const;
  [[nodiscard]] Tape* tape() const noexcept { return tape_; }
  [[nodiscard]] std::size_t id() const noexcept { return id_; }
  [[nodiscard]] bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = std::numeric_limits<std::size_t>::max();
};

/// Accumulates the gradient flowing into each parent of a node.
using BackwardFn = std::function<void(const Tensor& upstream, std::span<Tensor*> parent_grads)>;

/// Records a computation for one reverse sweep. Every node may also carry a
/// forward-mode tangent, computed eagerly as the node is recorded, so a JVP
/// and a gradient can come out of the same evaluation.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Constant carrying a tangent seed (a JVP input direction).
  Var constant(Tensor value, Tensor tangent);
  /// Constant referring to external storage that must outlive the tape.
  Var borrow(const Tensor& value);
  /// Differentiable leaf referring to external storage that must outlive the tape.
  Var parameter(const Tensor& value);
  /// Differentiable leaf owning its value.
  Var leaf(Tensor value, bool requires_grad = true);

  /// Records an op node. `tangent` is the already-computed forward derivative
  /// (nullopt when every parent tangent is zero). `backward` may be empty for
  /// ops with no reverse rule; the sweep then throws if a gradient reaches them.
  Var record(std::string_view op, Tensor value, std::optional<Tensor> tangent,
             std::vector<Var> parents, BackwardFn backward);

  /// Stop-gradient: same value and tangent, contributes nothing to the reverse sweep.
  Var stop_gradient(Var x);

  /// Reverse sweep from a scalar. Returns d(loss)/d(wrt[i]) for each entry;
  /// entries unreachable from the loss get zero tensors.
  std::vector<Tensor> grad(Var loss, std::span<const Var> wrt);

  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

 private:
  friend class Var;
  struct Node {
    Tensor owned;
    const Tensor* borrowed = nullptr;
    std::optional<Tensor> tangent;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    std::string_view op;
    bool requires_grad = false;

    [[nodiscard]] const Tensor& value() const { return borrowed ? *borrowed : owned; }
  };

  Var push(Node node);
  const Node& node(std::size_t id) const { return nodes_[id]; }

  std::deque<Node> nodes_;
};

// Ops. All operands must live on the same tape.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var neg(Var a);
/// [B×n] scaled per row by a [B] vector.
Var scale_rows(Var x, Var s);
/// a·b for rank-2 operands.
Var matmul(Var a, Var b);
/// x·W + b with x [B×in], W [in×out], b [out].
Var linear(Var x, Var w, Var b);
Var silu(Var x);
Var sin(Var x);
Var cos(Var x);
Var concat_last(Var a, Var b);
/// Sum of all entries, shape [].
Var sum(Var x);
/// Mean of all entries, shape [].
Var mean(Var x);
/// Per-row squared norm of [B×n], shape [B].
Var row_sqnorm(Var x);
/// Dot product of two equal-shape tensors, shape [].
Var dot(Var a, Var b);
/// [B] times → [B×2K] features (sin(ω_k t), cos(ω_k t)).
Var sinusoidal_embedding(Var t, std::span<const double> frequencies);

inline Var stop_gradient(Var x) { return x.tape()->stop_gradient(x); }
/// Identity in value and reverse mode; replaces the tangent with `tangent`.
Var seed_tangent(Var x, Tensor tangent);
/// The forward tangent of x as a value node. No reverse rule exists, so the
/// result must pass through stop_gradient before feeding a differentiated loss.
Var tangent_of(Var x);

/// Elementwise map with no derivative rule. Forward tangents and reverse
/// gradients reaching it raise NonDifferentiableError.
Var opaque_map(Var x, std::function<double(double)> f, std::string_view name);

/// Convenience: the gradient of `loss` with respect to `params`.
inline std::vector<Tensor> grad(Var loss, std::span<const Var> params) {
  return loss.tape()->grad(loss, params);
}

struct JvpResult {
  Tensor value;
  Tensor derivative;
};

using GraphFn = std::function<Var(Tape&, std::span<const Var>)>;

/// f(inputs) and J_f(inputs)·tangents from a single forward pass.
JvpResult jvp(const GraphFn& f, std::span<const Tensor> inputs, std::span<const Tensor> tangents);

}  // namespace rmflow::ad
