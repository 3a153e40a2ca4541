#include "rmflow/tensor.hpp"

#include <Eigen/Core>
#include <cmath>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "rmflow/error.hpp"

namespace rmflow {
namespace {

#if defined(__GLIBC__)
// Activations of a few hundred KB are allocated and freed every op. glibc
// would mmap each one and fault the pages in again; keep them on the heap.
const bool heap_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
  return true;
}();
#endif

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_matrix(const Tensor& t) {
  return ConstMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}

MutMap as_matrix(Tensor& t) {
  return MutMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, const char* op, F f) {
  require_same_shape(a, b, op);
  Tensor out(a.shape());
  const auto x = a.data();
  const auto y = b.data();
  auto z = out.data();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = f(x[i], y[i]);
  check_finite(out, op);
  return out;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}

Tensor::Tensor(Shape shape, const std::vector<double>& data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("Tensor: shape " + shape_str(shape_) + " needs " +
                     std::to_string(shape_numel(shape_)) + " values, got " +
                     std::to_string(data_.size()));
  }
}

Tensor Tensor::adopt(Shape shape, Storage data) {
  if (shape_numel(shape) != data.size()) throw ShapeError("Tensor::adopt: shape " + shape_str(shape) + " mismatch");
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::move(data);
  return t;
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("Tensor::matrix: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(data));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw ShapeError("Tensor::dim: axis out of range");
  return shape_[axis];
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ShapeError("Tensor::rows: rank " + std::to_string(rank()));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw ShapeError("Tensor::cols: rank " + std::to_string(rank()));
  return shape_[1];
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("Tensor::item: tensor has " + std::to_string(size()) + " values");
  return data_[0];
}

Tensor Tensor::reshape(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("reshape: " + shape_str(shape_) + " -> " + shape_str(shape));
  }
  return adopt(std::move(shape), data_);
}

bool all_finite(const Tensor& t) noexcept {
  for (double v : t.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void check_finite(const Tensor& t, const char* op) {
  if (!all_finite(t)) throw NumericError(std::string(op) + ": non-finite value produced");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner extents differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out(Shape{a.rows(), b.cols()});
  if (a.cols() > 0) as_matrix(out).noalias() = as_matrix(a) * as_matrix(b);
  check_finite(out, "matmul");
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_tn");
  require_rank2(b, "matmul_tn");
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: row extents differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out(Shape{a.cols(), b.cols()});
  if (a.rows() > 0) as_matrix(out).noalias() = as_matrix(a).transpose() * as_matrix(b);
  check_finite(out, "matmul_tn");
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: column extents differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out(Shape{a.rows(), b.rows()});
  if (a.cols() > 0) as_matrix(out).noalias() = as_matrix(a) * as_matrix(b).transpose();
  check_finite(out, "matmul_nt");
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  Tensor out(Shape{a.cols(), a.rows()});
  as_matrix(out) = as_matrix(a).transpose();
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return zip(a, b, "add", [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return zip(a, b, "sub", [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return zip(a, b, "mul", [](double x, double y) { return x * y; });
}

Tensor scale(const Tensor& a, double s) {
  Tensor out(a.shape());
  auto z = out.data();
  const auto x = a.data();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = s * x[i];
  check_finite(out, "scale");
  return out;
}

Tensor add_scalar(const Tensor& a, double s) {
  Tensor out(a.shape());
  auto z = out.data();
  const auto x = a.data();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] + s;
  check_finite(out, "add_scalar");
  return out;
}

Tensor map(const Tensor& a, const std::function<double(double)>& f) {
  Tensor out(a.shape());
  auto z = out.data();
  const auto x = a.data();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = f(x[i]);
  check_finite(out, "map");
  return out;
}

void axpy_inplace(Tensor& a, double s, const Tensor& b) {
  require_same_shape(a, b, "axpy_inplace");
  auto z = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] += s * y[i];
  check_finite(a, "axpy_inplace");
}

double sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return s;
}

double mean(const Tensor& a) {
  if (a.empty()) throw ShapeError("mean: empty tensor");
  return sum(a) / static_cast<double>(a.size());
}

double squared_norm(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return s;
}

Tensor row_sqnorm(const Tensor& a) {
  require_rank2(a, "row_sqnorm");
  const std::size_t n = a.rows();
  const std::size_t d = a.cols();
  Tensor out(Shape{n});
  const auto x = a.data();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += x[i * d + j] * x[i * d + j];
    out[i] = s;
  }
  check_finite(out, "row_sqnorm");
  return out;
}

Tensor sum_rows(const Tensor& a) {
  require_rank2(a, "sum_rows");
  const std::size_t n = a.rows();
  const std::size_t d = a.cols();
  Tensor out(Shape{d});
  const auto x = a.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out[j] += x[i * d + j];
  }
  return out;
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require_rank2(a, "add_row");
  if (row.rank() != 1 || row.size() != a.cols()) {
    throw ShapeError("add_row: row " + shape_str(row.shape()) + " does not match " + shape_str(a.shape()));
  }
  const std::size_t n = a.rows();
  const std::size_t d = a.cols();
  Tensor out(a.shape());
  const auto x = a.data();
  auto z = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) z[i * d + j] = x[i * d + j] + row[j];
  }
  check_finite(out, "add_row");
  return out;
}

Tensor scale_rows(const Tensor& a, const Tensor& s) {
  require_rank2(a, "scale_rows");
  if (s.rank() != 1 || s.size() != a.rows()) {
    throw ShapeError("scale_rows: scale " + shape_str(s.shape()) + " does not match " + shape_str(a.shape()));
  }
  const std::size_t n = a.rows();
  const std::size_t d = a.cols();
  Tensor out(a.shape());
  const auto x = a.data();
  auto z = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) z[i * d + j] = s[i] * x[i * d + j];
  }
  check_finite(out, "scale_rows");
  return out;
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
  require_rank2(a, "concat_last");
  require_rank2(b, "concat_last");
  if (a.rows() != b.rows()) {
    throw ShapeError("concat_last: batch extents differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t n = a.rows();
  const std::size_t da = a.cols();
  const std::size_t db = b.cols();
  Tensor out(Shape{n, da + db});
  auto z = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.data().data() + i * da, da, z.data() + i * (da + db));
    std::copy_n(b.data().data() + i * db, db, z.data() + i * (da + db) + da);
  }
  return out;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.rank() == 0 || a.rank() != b.rank() ||
      !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1)) {
    throw ShapeError("concat_rows: trailing extents differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Shape shape = a.shape();
  shape[0] += b.shape()[0];
  Storage data(a.data().begin(), a.data().end());
  data.insert(data.end(), b.data().begin(), b.data().end());
  return Tensor::adopt(std::move(shape), std::move(data));
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  if (a.rank() == 0 || begin > end || end > a.shape()[0]) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for " + shape_str(a.shape()));
  }
  Shape shape = a.shape();
  const std::size_t stride = shape_numel(shape) / (shape[0] ? shape[0] : 1);
  shape[0] = end - begin;
  const auto src = a.data().subspan(begin * stride, (end - begin) * stride);
  return Tensor::adopt(std::move(shape), Storage(src.begin(), src.end()));
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank2(a, "slice_cols");
  if (begin > end || end > a.cols()) throw ShapeError("slice_cols: column range invalid");
  const std::size_t n = a.rows();
  const std::size_t d = a.cols();
  const std::size_t w = end - begin;
  Tensor out(Shape{n, w});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.data().data() + i * d + begin, w, out.data().data() + i * w);
  }
  return out;
}

Tensor randn(Rng& rng, Shape shape) {
  Tensor out(std::move(shape));
  for (double& v : out.data()) v = rng.normal();
  return out;
}

Tensor rand_uniform(Rng& rng, Shape shape, double lo, double hi) {
  Tensor out(std::move(shape));
  for (double& v : out.data()) v = lo + (hi - lo) * rng.uniform();
  return out;
}

}  // namespace rmflow
