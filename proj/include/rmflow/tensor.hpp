#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "rmflow/rng.hpp"

namespace rmflow {

using Shape = std::vector<std::size_t>;

// Storage starts on a 64-byte boundary. Vectorized kernels choose their
// peeling from the address, so without this the same product could round
// differently depending on where the heap put the buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() noexcept = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}  // NOLINT(google-explicit-constructor)

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Storage = std::vector<double, AlignedAllocator<double>>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles. Axis 0 is the batch axis wherever a
/// batch is present. Copies are deep; a Tensor owns its storage.
class Tensor {
 public:
  Tensor() : shape_{0} {}
  explicit Tensor(Shape shape);
  Tensor(Shape shape, const std::vector<double>& data);
  /// Takes ownership of already-aligned storage.
  static Tensor adopt(Shape shape, Storage data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value) { return Tensor(Shape{}, {value}); }
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
  [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }
  [[nodiscard]] std::size_t dim(std::size_t axis) const;
  /// Rows and columns of a rank-2 tensor.
  [[nodiscard]] std::size_t rows() const;
  [[nodiscard]] std::size_t cols() const;

  [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
  [[nodiscard]] std::span<double> data() noexcept { return data_; }
  /// A plain copy of the entries.
  [[nodiscard]] std::vector<double> values() const { return {data_.begin(), data_.end()}; }

  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double& operator[](std::size_t i) noexcept { return data_[i]; }
  [[nodiscard]] double at(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }
  double& at(std::size_t i, std::size_t j) { return data_[i * cols() + j]; }
  /// The single value of a one-element tensor.
  [[nodiscard]] double item() const;

  [[nodiscard]] Tensor reshape(Shape shape) const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  Storage data_;
};

/// Throws NumericError naming `op` if any entry is NaN or Inf.
void check_finite(const Tensor& t, const char* op);
[[nodiscard]] bool all_finite(const Tensor& t) noexcept;

// Matrix products on rank-2 tensors.
Tensor matmul(const Tensor& a, const Tensor& b);     // a·b
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // aᵀ·b
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a·bᵀ
Tensor transpose(const Tensor& a);

// Elementwise on equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor map(const Tensor& a, const std::function<double(double)>& f);
/// a += s·b in place.
void axpy_inplace(Tensor& a, double s, const Tensor& b);

// Reductions.
double sum(const Tensor& a);
double mean(const Tensor& a);
double squared_norm(const Tensor& a);
/// Per-row squared norm of a [B×n] tensor, shape [B].
Tensor row_sqnorm(const Tensor& a);
/// Column sums of a [B×n] tensor, shape [n].
Tensor sum_rows(const Tensor& a);

// Broadcasting over the leading batch axis.
/// [B×n] + [n] row vector.
Tensor add_row(const Tensor& a, const Tensor& row);
/// [B×n] scaled per row by [B].
Tensor scale_rows(const Tensor& a, const Tensor& s);

// Layout.
Tensor concat_last(const Tensor& a, const Tensor& b);
Tensor concat_rows(const Tensor& a, const Tensor& b);
/// Rows [begin, end) along axis 0.
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
/// Columns [begin, end) of a rank-2 tensor.
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);

// Random tensors.
Tensor randn(Rng& rng, Shape shape);
Tensor rand_uniform(Rng& rng, Shape shape, double lo = 0.0, double hi = 1.0);

}  // namespace rmflow
