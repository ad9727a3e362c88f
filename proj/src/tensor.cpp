#include "vstpose/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace vstpose {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_)) {
    throw std::invalid_argument("tensor data size " + std::to_string(data_.size()) +
                                " does not match shape " + shape_str(shape_));
  }
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw std::out_of_range("axis " + std::to_string(axis) + " out of range for shape " +
                            shape_str(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw std::out_of_range("index rank mismatch for shape " + shape_str(shape_));
  }
  std::size_t off = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis]) throw std::out_of_range("index out of range for shape " + shape_str(shape_));
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

double& Tensor::at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
double Tensor::at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

Tensor Tensor::reshaped(Shape shape) const {
  Tensor out = *this;
  out.reshape(std::move(shape));
  return out;
}

void Tensor::reshape(Shape shape) {
  if (shape_numel(shape) != data_.size()) {
    throw std::invalid_argument("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  shape_ = std::move(shape);
}

void Tensor::fill(double value) noexcept { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::slice0(std::size_t begin, std::size_t count) const {
  if (shape_.empty() || begin + count > shape_[0]) {
    throw std::out_of_range("slice0 out of range for shape " + shape_str(shape_));
  }
  Shape s = shape_;
  s[0] = count;
  const std::size_t row = shape_[0] ? data_.size() / shape_[0] : 0;
  std::vector<double> d(data_.begin() + static_cast<std::ptrdiff_t>(begin * row),
                        data_.begin() + static_cast<std::ptrdiff_t>((begin + count) * row));
  return Tensor(std::move(s), std::move(d));
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw std::invalid_argument("stack of zero tensors");
  Shape s;
  s.push_back(items.size());
  s.insert(s.end(), items.front().shape().begin(), items.front().shape().end());
  std::vector<double> d;
  d.reserve(shape_numel(s));
  for (const auto& t : items) {
    if (t.shape() != items.front().shape()) {
      throw std::invalid_argument("stack shape mismatch: " + shape_str(t.shape()) + " vs " +
                                  shape_str(items.front().shape()));
    }
    d.insert(d.end(), t.storage().begin(), t.storage().end());
  }
  return Tensor(std::move(s), std::move(d));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("max_abs_diff shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace vstpose
