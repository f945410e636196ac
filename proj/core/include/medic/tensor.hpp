#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace medic {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);
Shape row_major_strides(const Shape& shape);

/// Dense row-major array of doubles. Image tensors are laid out N x H x W x C.
///
/// A default-constructed tensor is "empty" (rank 0, no storage) and only
/// serves as a placeholder; every operation rejects it. Extents of zero are
/// permitted so that channel concatenation with an empty-channel tensor is
/// expressible.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, double value);
  static Tensor scalar(double value);
  static Tensor from(std::initializer_list<double> values);
  static Tensor zeros_like(const Tensor& other);

  [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
  [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
  [[nodiscard]] std::size_t dim(std::size_t axis) const;
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] bool empty() const noexcept { return shape_.empty(); }
  [[nodiscard]] Shape strides() const { return row_major_strides(shape_); }

  [[nodiscard]] std::span<double> data() noexcept { return data_; }
  [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
  [[nodiscard]] double* raw() noexcept { return data_.data(); }
  [[nodiscard]] const double* raw() const noexcept { return data_.data(); }
  [[nodiscard]] const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t flat) noexcept { return data_[flat]; }
  double operator[](std::size_t flat) const noexcept { return data_[flat]; }

  [[nodiscard]] std::size_t flat_index(std::span<const std::size_t> index) const;
  double& at(std::initializer_list<std::size_t> index);
  [[nodiscard]] double at(std::initializer_list<std::size_t> index) const;

  /// Scalar value of a single-element tensor.
  [[nodiscard]] double item() const;

  [[nodiscard]] Tensor reshape(Shape shape) const&;
  [[nodiscard]] Tensor reshape(Shape shape) &&;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Elementwise math. Binary operations require equal shapes, or one operand
// with a single element, which is broadcast. Division follows IEEE 754
// (x/0 is +-inf, 0/0 is NaN).

enum class BinaryOp { add, sub, mul, div, max };
enum class UnaryOp { exp, log, neg, sqrt, square, abs };

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b);
Tensor elementwise(UnaryOp op, const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double s);
Tensor mul(const Tensor& a, double s);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);

/// In-place accumulate `dst += src`; shapes must match exactly.
void accumulate(Tensor& dst, const Tensor& src);

// ---------------------------------------------------------------------------
// Reductions. Summation is sequential left-to-right in flat order; argmax
// breaks ties at the lowest index. Without an axis the result has shape {1};
// with an axis that dimension is removed (a rank-1 input yields shape {1}).

enum class ReduceOp { sum, mean, max, argmax };

Tensor reduce(ReduceOp op, const Tensor& x, std::optional<std::size_t> axis = std::nullopt);
Tensor sum(const Tensor& x, std::optional<std::size_t> axis = std::nullopt);
Tensor mean(const Tensor& x, std::optional<std::size_t> axis = std::nullopt);
Tensor max(const Tensor& x, std::optional<std::size_t> axis = std::nullopt);
Tensor argmax(const Tensor& x, std::optional<std::size_t> axis = std::nullopt);

double dot(const Tensor& a, const Tensor& b);

// ---------------------------------------------------------------------------
// Linear algebra.

/// [m x k] . [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

}  // namespace medic
