#include "medic/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "medic/gemm.hpp"

namespace medic {

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw std::invalid_argument("tensor shape must have rank >= 1");
}

void require_nonempty(const Tensor& t, const char* what) {
  if (t.empty()) throw std::invalid_argument(std::string(what) + ": empty tensor");
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Shape row_major_strides(const Shape& shape) {
  Shape strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(shape_size(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (data_.size() != shape_size(shape_)) {
    throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_to_string(shape_));
  }
}

Tensor Tensor::zeros(const Shape& shape) { return Tensor(shape); }

Tensor Tensor::full(const Shape& shape, double value) {
  validate_shape(shape);
  return Tensor(shape, std::vector<double>(shape_size(shape), value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::from(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::zeros_like(const Tensor& other) {
  require_nonempty(other, "zeros_like");
  return Tensor(other.shape());
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw std::out_of_range("axis " + std::to_string(axis) + " out of range for shape " +
                            shape_to_string(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::flat_index(std::span<const std::size_t> index) const {
  if (index.size() != shape_.size()) throw std::invalid_argument("index rank mismatch");
  std::size_t flat = 0;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= shape_[i]) throw std::out_of_range("tensor index out of range");
    flat = flat * shape_[i] + index[i];
  }
  return flat;
}

double& Tensor::at(std::initializer_list<std::size_t> index) {
  return data_[flat_index(std::span<const std::size_t>(index.begin(), index.size()))];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  return data_[flat_index(std::span<const std::size_t>(index.begin(), index.size()))];
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw std::invalid_argument("item() requires a single-element tensor, got " +
                                shape_to_string(shape_));
  }
  return data_[0];
}

Tensor Tensor::reshape(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshape(std::move(shape));
}

Tensor Tensor::reshape(Shape shape) && {
  validate_shape(shape);
  if (shape_size(shape) != data_.size()) {
    throw std::invalid_argument("cannot reshape " + shape_to_string(shape_) + " to " +
                                shape_to_string(shape));
  }
  shape_ = std::move(shape);
  return std::move(*this);
}

// ---------------------------------------------------------------------------

namespace {

double apply(BinaryOp op, double x, double y) {
  switch (op) {
    case BinaryOp::add: return x + y;
    case BinaryOp::sub: return x - y;
    case BinaryOp::mul: return x * y;
    case BinaryOp::div: return x / y;
    case BinaryOp::max: return std::max(x, y);
  }
  return 0.0;
}

double apply(UnaryOp op, double x) {
  switch (op) {
    case UnaryOp::exp: return std::exp(x);
    case UnaryOp::log: return std::log(x);
    case UnaryOp::neg: return -x;
    case UnaryOp::sqrt: return std::sqrt(x);
    case UnaryOp::square: return x * x;
    case UnaryOp::abs: return std::abs(x);
  }
  return 0.0;
}

}  // namespace

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b) {
  require_nonempty(a, "elementwise");
  require_nonempty(b, "elementwise");
  if (a.shape() == b.shape()) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = apply(op, a[i], b[i]);
    return out;
  }
  if (b.size() == 1) {
    Tensor out(a.shape());
    const double s = b[0];
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = apply(op, a[i], s);
    return out;
  }
  if (a.size() == 1) {
    Tensor out(b.shape());
    const double s = a[0];
    for (std::size_t i = 0; i < b.size(); ++i) out[i] = apply(op, s, b[i]);
    return out;
  }
  throw std::invalid_argument("incompatible shapes " + shape_to_string(a.shape()) + " and " +
                              shape_to_string(b.shape()));
}

Tensor elementwise(UnaryOp op, const Tensor& a) {
  require_nonempty(a, "elementwise");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = apply(op, a[i]);
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::div, a, b); }
Tensor maximum(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::max, a, b); }
Tensor add(const Tensor& a, double s) { return elementwise(BinaryOp::add, a, Tensor::scalar(s)); }
Tensor mul(const Tensor& a, double s) { return elementwise(BinaryOp::mul, a, Tensor::scalar(s)); }
Tensor exp(const Tensor& a) { return elementwise(UnaryOp::exp, a); }
Tensor log(const Tensor& a) { return elementwise(UnaryOp::log, a); }

void accumulate(Tensor& dst, const Tensor& src) {
  if (dst.shape() != src.shape()) {
    throw std::invalid_argument("accumulate shape mismatch " + shape_to_string(dst.shape()) +
                                " vs " + shape_to_string(src.shape()));
  }
  double* d = dst.raw();
  const double* s = src.raw();
  for (std::size_t i = 0, n = dst.size(); i < n; ++i) d[i] += s[i];
}

// ---------------------------------------------------------------------------

Tensor reduce(ReduceOp op, const Tensor& x, std::optional<std::size_t> axis) {
  require_nonempty(x, "reduce");
  if (!axis) {
    if (x.size() == 0) throw std::invalid_argument("reduce over zero elements");
    double acc = 0.0;
    switch (op) {
      case ReduceOp::sum:
      case ReduceOp::mean:
        for (double v : x.data()) acc += v;
        if (op == ReduceOp::mean) acc /= static_cast<double>(x.size());
        break;
      case ReduceOp::max:
      case ReduceOp::argmax: {
        std::size_t best = 0;
        for (std::size_t i = 1; i < x.size(); ++i)
          if (x[i] > x[best]) best = i;
        acc = op == ReduceOp::max ? x[best] : static_cast<double>(best);
        break;
      }
    }
    return Tensor::scalar(acc);
  }

  const std::size_t ax = *axis;
  if (ax >= x.rank()) {
    throw std::invalid_argument("reduce axis " + std::to_string(ax) + " invalid for rank " +
                                std::to_string(x.rank()));
  }
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[ax];
  if (len == 0) throw std::invalid_argument("reduce over zero-length axis");

  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != ax) out_shape.push_back(s[i]);
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor out(out_shape);

  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const double* base = x.raw() + o * len * inner + in;
      double acc = 0.0;
      if (op == ReduceOp::sum || op == ReduceOp::mean) {
        for (std::size_t l = 0; l < len; ++l) acc += base[l * inner];
        if (op == ReduceOp::mean) acc /= static_cast<double>(len);
      } else {
        std::size_t best = 0;
        for (std::size_t l = 1; l < len; ++l)
          if (base[l * inner] > base[best * inner]) best = l;
        acc = op == ReduceOp::max ? base[best * inner] : static_cast<double>(best);
      }
      out[o * inner + in] = acc;
    }
  }
  return out;
}

Tensor sum(const Tensor& x, std::optional<std::size_t> axis) { return reduce(ReduceOp::sum, x, axis); }
Tensor mean(const Tensor& x, std::optional<std::size_t> axis) { return reduce(ReduceOp::mean, x, axis); }
Tensor max(const Tensor& x, std::optional<std::size_t> axis) { return reduce(ReduceOp::max, x, axis); }
Tensor argmax(const Tensor& x, std::optional<std::size_t> axis) { return reduce(ReduceOp::argmax, x, axis); }

double dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) throw std::invalid_argument("matmul expects rank-2 tensors");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw std::invalid_argument("matmul inner dimension mismatch: " + shape_to_string(a.shape()) +
                                " x " + shape_to_string(b.shape()));
  }
  Tensor out({m, n});
  gemm(Trans::no, Trans::no, m, n, k, 1.0, a.raw(), b.raw(), 0.0, out.raw());
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw std::invalid_argument("transpose expects a rank-2 tensor");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return out;
}

}  // namespace medic
