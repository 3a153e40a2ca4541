#include "rmflow/autodiff.hpp"

#include <cmath>
#include <string>

#include "rmflow/error.hpp"

namespace rmflow::ad {
namespace {

void accumulate(Tensor* dst, const Tensor& src) {
  if (dst == nullptr) return;
  auto d = dst->data();
  const auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

Tape& same_tape(Var a, Var b, const char* op) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw std::invalid_argument(std::string(op) + ": operands on different tapes");
  }
  return *a.tape();
}

std::optional<Tensor> sum_tangents(const Tensor* a, const Tensor* b) {
  if (a && b) return add(*a, *b);
  if (a) return *a;
  if (b) return *b;
  return std::nullopt;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

const Tensor& Var::value() const { return tape_->node(id_).value(); }

const Tensor* Var::tangent() const {
  const auto& t = tape_->node(id_).tangent;
  return t ? &*t : nullptr;
}

bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  n.op = "constant";
  return push(std::move(n));
}

Var Tape::constant(Tensor value, Tensor tangent) {
  if (tangent.shape() != value.shape()) {
    throw ShapeError("constant: tangent " + shape_str(tangent.shape()) + " does not match value " +
                     shape_str(value.shape()));
  }
  Node n;
  n.owned = std::move(value);
  n.tangent = std::move(tangent);
  n.op = "constant";
  return push(std::move(n));
}

Var Tape::borrow(const Tensor& value) {
  Node n;
  n.borrowed = &value;
  n.op = "constant";
  return push(std::move(n));
}

Var Tape::parameter(const Tensor& value) {
  Node n;
  n.borrowed = &value;
  n.requires_grad = true;
  n.op = "parameter";
  return push(std::move(n));
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = requires_grad;
  n.op = "leaf";
  return push(std::move(n));
}

Var Tape::record(std::string_view op, Tensor value, std::optional<Tensor> tangent,
                 std::vector<Var> parents, BackwardFn backward) {
  Node n;
  n.owned = std::move(value);
  if (tangent && tangent->shape() != n.owned.shape()) {
    throw ShapeError(std::string(op) + ": tangent shape " + shape_str(tangent->shape()) +
                     " differs from value shape " + shape_str(n.owned.shape()));
  }
  n.tangent = std::move(tangent);
  n.op = op;
  n.parents.reserve(parents.size());
  for (const Var& p : parents) {
    if (p.tape() != this) throw std::invalid_argument(std::string(op) + ": parent from another tape");
    n.parents.push_back(p.id());
    n.requires_grad = n.requires_grad || node(p.id()).requires_grad;
  }
  n.backward = std::move(backward);
  return push(std::move(n));
}

Var Tape::stop_gradient(Var x) {
  Node n;
  n.borrowed = &node(x.id()).value();
  n.tangent = node(x.id()).tangent;
  n.op = "stop_gradient";
  return push(std::move(n));
}

std::vector<Tensor> Tape::grad(Var loss, std::span<const Var> wrt) {
  if (loss.tape() != this) throw std::invalid_argument("grad: loss from another tape");
  if (loss.value().size() != 1) {
    throw ShapeError("grad: loss must be scalar, got shape " + shape_str(loss.value().shape()));
  }
  std::vector<std::optional<Tensor>> grads(nodes_.size());
  if (nodes_[loss.id()].requires_grad) grads[loss.id()] = Tensor::full(loss.value().shape(), 1.0);

  std::vector<Tensor*> parent_grads;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!grads[i] || !n.requires_grad || n.parents.empty()) continue;
    if (!n.backward) {
      throw NonDifferentiableError("grad: op '" + std::string(n.op) +
                                   "' has no reverse rule; wrap it in stop_gradient");
    }
    parent_grads.assign(n.parents.size(), nullptr);
    for (std::size_t k = 0; k < n.parents.size(); ++k) {
      const std::size_t p = n.parents[k];
      if (!nodes_[p].requires_grad) continue;
      if (!grads[p]) grads[p] = Tensor(nodes_[p].value().shape());
      parent_grads[k] = &*grads[p];
    }
    n.backward(*grads[i], parent_grads);
  }

  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (const Var& v : wrt) {
    if (v.tape() != this) throw std::invalid_argument("grad: parameter from another tape");
    out.push_back(grads[v.id()] ? *grads[v.id()] : Tensor(v.value().shape()));
  }
  return out;
}

Var add(Var a, Var b) {
  Tape& tape = same_tape(a, b, "add");
  return tape.record("add", rmflow::add(a.value(), b.value()), sum_tangents(a.tangent(), b.tangent()),
                     {a, b}, [](const Tensor& g, std::span<Tensor*> pg) {
                       accumulate(pg[0], g);
                       accumulate(pg[1], g);
                     });
}

Var sub(Var a, Var b) {
  Tape& tape = same_tape(a, b, "sub");
  std::optional<Tensor> tan;
  if (a.tangent() && b.tangent()) {
    tan = rmflow::sub(*a.tangent(), *b.tangent());
  } else if (a.tangent()) {
    tan = *a.tangent();
  } else if (b.tangent()) {
    tan = rmflow::scale(*b.tangent(), -1.0);
  }
  return tape.record("sub", rmflow::sub(a.value(), b.value()), std::move(tan), {a, b},
                     [](const Tensor& g, std::span<Tensor*> pg) {
                       accumulate(pg[0], g);
                       if (pg[1]) axpy_inplace(*pg[1], -1.0, g);
                     });
}

Var mul(Var a, Var b) {
  Tape& tape = same_tape(a, b, "mul");
  std::optional<Tensor> tan;
  if (a.tangent()) tan = rmflow::mul(*a.tangent(), b.value());
  if (b.tangent()) {
    Tensor part = rmflow::mul(a.value(), *b.tangent());
    tan = tan ? rmflow::add(*tan, part) : std::move(part);
  }
  return tape.record("mul", rmflow::mul(a.value(), b.value()), std::move(tan), {a, b},
                     [a, b](const Tensor& g, std::span<Tensor*> pg) {
                       if (pg[0]) accumulate(pg[0], rmflow::mul(g, b.value()));
                       if (pg[1]) accumulate(pg[1], rmflow::mul(g, a.value()));
                     });
}

Var scale(Var a, double s) {
  std::optional<Tensor> tan;
  if (a.tangent()) tan = rmflow::scale(*a.tangent(), s);
  return a.tape()->record("scale", rmflow::scale(a.value(), s), std::move(tan), {a},
                          [s](const Tensor& g, std::span<Tensor*> pg) { axpy_inplace(*pg[0], s, g); });
}

Var add_scalar(Var a, double s) {
  std::optional<Tensor> tan;
  if (a.tangent()) tan = *a.tangent();
  return a.tape()->record("add_scalar", rmflow::add_scalar(a.value(), s), std::move(tan), {a},
                          [](const Tensor& g, std::span<Tensor*> pg) { accumulate(pg[0], g); });
}

Var neg(Var a) { return scale(a, -1.0); }

Var scale_rows(Var x, Var s) {
  Tape& tape = same_tape(x, s, "scale_rows");
  std::optional<Tensor> tan;
  if (x.tangent()) tan = rmflow::scale_rows(*x.tangent(), s.value());
  if (s.tangent()) {
    Tensor part = rmflow::scale_rows(x.value(), *s.tangent());
    tan = tan ? rmflow::add(*tan, part) : std::move(part);
  }
  return tape.record("scale_rows", rmflow::scale_rows(x.value(), s.value()), std::move(tan), {x, s},
                     [x, s](const Tensor& g, std::span<Tensor*> pg) {
                       if (pg[0]) accumulate(pg[0], rmflow::scale_rows(g, s.value()));
                       if (pg[1]) {
                         const Tensor& xv = x.value();
                         const std::size_t n = xv.rows();
                         const std::size_t d = xv.cols();
                         for (std::size_t i = 0; i < n; ++i) {
                           double acc = 0.0;
                           for (std::size_t j = 0; j < d; ++j) acc += xv[i * d + j] * g[i * d + j];
                           (*pg[1])[i] += acc;
                         }
                       }
                     });
}

Var matmul(Var a, Var b) {
  Tape& tape = same_tape(a, b, "matmul");
  std::optional<Tensor> tan;
  if (a.tangent()) tan = rmflow::matmul(*a.tangent(), b.value());
  if (b.tangent()) {
    Tensor part = rmflow::matmul(a.value(), *b.tangent());
    tan = tan ? rmflow::add(*tan, part) : std::move(part);
  }
  return tape.record("matmul", rmflow::matmul(a.value(), b.value()), std::move(tan), {a, b},
                     [a, b](const Tensor& g, std::span<Tensor*> pg) {
                       if (pg[0]) accumulate(pg[0], matmul_nt(g, b.value()));
                       if (pg[1]) accumulate(pg[1], matmul_tn(a.value(), g));
                     });
}

Var linear(Var x, Var w, Var b) {
  Tape& tape = same_tape(x, w, "linear");
  same_tape(x, b, "linear");
  if (b.value().rank() != 1 || w.value().rank() != 2 || b.value().size() != w.value().cols()) {
    throw ShapeError("linear: weight " + shape_str(w.value().shape()) + " and bias " +
                     shape_str(b.value().shape()) + " disagree");
  }
  Tensor y = add_row(rmflow::matmul(x.value(), w.value()), b.value());
  std::optional<Tensor> tan;
  if (x.tangent()) tan = rmflow::matmul(*x.tangent(), w.value());
  if (w.tangent()) {
    Tensor part = rmflow::matmul(x.value(), *w.tangent());
    tan = tan ? rmflow::add(*tan, part) : std::move(part);
  }
  if (b.tangent()) {
    tan = tan ? add_row(*tan, *b.tangent()) : add_row(Tensor(y.shape()), *b.tangent());
  }
  return tape.record("linear", std::move(y), std::move(tan), {x, w, b},
                     [x, w](const Tensor& g, std::span<Tensor*> pg) {
                       if (pg[0]) accumulate(pg[0], matmul_nt(g, w.value()));
                       if (pg[1]) accumulate(pg[1], matmul_tn(x.value(), g));
                       if (pg[2]) accumulate(pg[2], sum_rows(g));
                     });
}

Var silu(Var x) {
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  Tensor dy(xv.shape());  // silu'(x) = σ(x)(1 + x(1 − σ(x)))
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double s = sigmoid(xv[i]);
    y[i] = xv[i] * s;
    dy[i] = s * (1.0 + xv[i] * (1.0 - s));
  }
  check_finite(y, "silu");
  std::optional<Tensor> tan;
  if (x.tangent()) tan = rmflow::mul(dy, *x.tangent());
  return x.tape()->record("silu", std::move(y), std::move(tan), {x},
                          [dy = std::move(dy)](const Tensor& g, std::span<Tensor*> pg) {
                            auto d = pg[0]->data();
                            for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i] * g[i];
                          });
}

Var sin(Var x) {
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  Tensor dy(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    y[i] = std::sin(xv[i]);
    dy[i] = std::cos(xv[i]);
  }
  std::optional<Tensor> tan;
  if (x.tangent()) tan = rmflow::mul(dy, *x.tangent());
  return x.tape()->record("sin", std::move(y), std::move(tan), {x},
                          [dy = std::move(dy)](const Tensor& g, std::span<Tensor*> pg) {
                            accumulate(pg[0], rmflow::mul(dy, g));
                          });
}

Var cos(Var x) {
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  Tensor dy(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    y[i] = std::cos(xv[i]);
    dy[i] = -std::sin(xv[i]);
  }
  std::optional<Tensor> tan;
  if (x.tangent()) tan = rmflow::mul(dy, *x.tangent());
  return x.tape()->record("cos", std::move(y), std::move(tan), {x},
                          [dy = std::move(dy)](const Tensor& g, std::span<Tensor*> pg) {
                            accumulate(pg[0], rmflow::mul(dy, g));
                          });
}

Var concat_last(Var a, Var b) {
  Tape& tape = same_tape(a, b, "concat_last");
  std::optional<Tensor> tan;
  if (a.tangent() || b.tangent()) {
    tan = rmflow::concat_last(a.tangent() ? *a.tangent() : Tensor(a.value().shape()),
                              b.tangent() ? *b.tangent() : Tensor(b.value().shape()));
  }
  const std::size_t da = a.value().cols();
  return tape.record("concat_last", rmflow::concat_last(a.value(), b.value()), std::move(tan), {a, b},
                     [da](const Tensor& g, std::span<Tensor*> pg) {
                       if (pg[0]) accumulate(pg[0], slice_cols(g, 0, da));
                       if (pg[1]) accumulate(pg[1], slice_cols(g, da, g.cols()));
                     });
}

Var sum(Var x) {
  std::optional<Tensor> tan;
  if (x.tangent()) tan = Tensor::scalar(rmflow::sum(*x.tangent()));
  return x.tape()->record("sum", Tensor::scalar(rmflow::sum(x.value())), std::move(tan), {x},
                          [](const Tensor& g, std::span<Tensor*> pg) {
                            const double s = g.item();
                            for (double& v : pg[0]->data()) v += s;
                          });
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  if (n == 0) throw ShapeError("mean: empty tensor");
  std::optional<Tensor> tan;
  if (x.tangent()) tan = Tensor::scalar(rmflow::sum(*x.tangent()) / n);
  return x.tape()->record("mean", Tensor::scalar(rmflow::sum(x.value()) / n), std::move(tan), {x},
                          [n](const Tensor& g, std::span<Tensor*> pg) {
                            const double s = g.item() / n;
                            for (double& v : pg[0]->data()) v += s;
                          });
}

Var row_sqnorm(Var x) {
  const Tensor& xv = x.value();
  std::optional<Tensor> tan;
  if (x.tangent()) {
    const Tensor& xt = *x.tangent();
    const std::size_t n = xv.rows();
    const std::size_t d = xv.cols();
    Tensor t(Shape{n});
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += xv[i * d + j] * xt[i * d + j];
      t[i] = 2.0 * acc;
    }
    tan = std::move(t);
  }
  return x.tape()->record("row_sqnorm", rmflow::row_sqnorm(xv), std::move(tan), {x},
                          [x](const Tensor& g, std::span<Tensor*> pg) {
                            const Tensor& v = x.value();
                            const std::size_t n = v.rows();
                            const std::size_t d = v.cols();
                            auto out = pg[0]->data();
                            for (std::size_t i = 0; i < n; ++i) {
                              for (std::size_t j = 0; j < d; ++j) out[i * d + j] += 2.0 * g[i] * v[i * d + j];
                            }
                          });
}

Var dot(Var a, Var b) { return sum(mul(a, b)); }

Var sinusoidal_embedding(Var t, std::span<const double> frequencies) {
  const Tensor& tv = t.value();
  if (tv.rank() != 1) throw ShapeError("sinusoidal_embedding: times must be rank-1, got " + shape_str(tv.shape()));
  const std::size_t n = tv.size();
  const std::size_t k = frequencies.size();
  std::vector<double> freqs(frequencies.begin(), frequencies.end());
  Tensor y(Shape{n, 2 * k});
  Tensor dy(Shape{n, 2 * k});  // d/dt of each feature
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double phase = freqs[j] * tv[i];
      const double s = std::sin(phase);
      const double c = std::cos(phase);
      y[i * 2 * k + j] = s;
      y[i * 2 * k + k + j] = c;
      dy[i * 2 * k + j] = freqs[j] * c;
      dy[i * 2 * k + k + j] = -freqs[j] * s;
    }
  }
  std::optional<Tensor> tan;
  if (t.tangent()) tan = rmflow::scale_rows(dy, *t.tangent());
  return t.tape()->record("sinusoidal_embedding", std::move(y), std::move(tan), {t},
                          [dy = std::move(dy)](const Tensor& g, std::span<Tensor*> pg) {
                            const std::size_t rows = dy.rows();
                            const std::size_t cols = dy.cols();
                            for (std::size_t i = 0; i < rows; ++i) {
                              double acc = 0.0;
                              for (std::size_t j = 0; j < cols; ++j) acc += dy[i * cols + j] * g[i * cols + j];
                              (*pg[0])[i] += acc;
                            }
                          });
}

Var seed_tangent(Var x, Tensor tangent) {
  if (tangent.shape() != x.value().shape()) {
    throw ShapeError("seed_tangent: tangent " + shape_str(tangent.shape()) + " does not match value " +
                     shape_str(x.value().shape()));
  }
  return x.tape()->record("seed_tangent", x.value(), std::move(tangent), {x},
                          [](const Tensor& g, std::span<Tensor*> pg) { accumulate(pg[0], g); });
}

Var tangent_of(Var x) {
  Tensor v = x.tangent() ? *x.tangent() : Tensor(x.value().shape());
  return x.tape()->record("tangent_of", std::move(v), std::nullopt, {x}, BackwardFn{});
}

Var opaque_map(Var x, std::function<double(double)> f, std::string_view name) {
  if (x.tangent()) {
    throw NonDifferentiableError("jvp: op '" + std::string(name) + "' has no forward derivative rule");
  }
  return x.tape()->record(name, rmflow::map(x.value(), f), std::nullopt, {x}, BackwardFn{});
}

JvpResult jvp(const GraphFn& f, std::span<const Tensor> inputs, std::span<const Tensor> tangents) {
  if (inputs.size() != tangents.size()) {
    throw ShapeError("jvp: " + std::to_string(inputs.size()) + " inputs but " +
                     std::to_string(tangents.size()) + " tangents");
  }
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].shape() != tangents[i].shape()) {
      throw ShapeError("jvp: tangent " + std::to_string(i) + " has shape " + shape_str(tangents[i].shape()) +
                       ", input has " + shape_str(inputs[i].shape()));
    }
    vars.push_back(tape.constant(inputs[i], tangents[i]));
  }
  Var out = f(tape, vars);
  return {out.value(), out.tangent() ? *out.tangent() : Tensor(out.value().shape())};
}

}  // namespace rmflow::ad
