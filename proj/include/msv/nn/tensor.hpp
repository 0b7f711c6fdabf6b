#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "msv/error.hpp"

namespace msv::nn {

using Shape = std::vector<int>;

inline std::size_t NumElements(const Shape &shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string ShapeString(const Shape &shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major tensor. T is float for models and double for gradient
/// checking; both instantiate the same kernels.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(NumElements(shape_), fill) {
    CheckShape();
  }
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (NumElements(shape_) != data_.size())
      Fail(ErrorKind::kShapeMismatch, "data length does not match shape " + ShapeString(shape_));
  }

  const Shape &shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i < 0 ? rank() + i : i)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T *data() { return data_.data(); }
  const T *data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T> &storage() { return data_; }
  const std::vector<T> &storage() const { return data_; }

  T &operator[](std::size_t i) { return data_[i]; }
  const T &operator[](std::size_t i) const { return data_[i]; }

  void Fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor Reshaped(Shape shape) const {
    if (NumElements(shape) != data_.size())
      Fail(ErrorKind::kShapeMismatch, "cannot reshape " + ShapeString(shape_) + " to " + ShapeString(shape));
    return Tensor(std::move(shape), data_);
  }

  template <typename U>
  Tensor<U> Cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor &) const = default;

 private:
  void CheckShape() const {
    for (int d : shape_)
      if (d < 0) Fail(ErrorKind::kShapeMismatch, "negative extent in " + ShapeString(shape_));
  }

  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void ZeroGrad() {
    if (grad.shape() != value.shape())
      grad = Tensor<T>(value.shape());
    else
      grad.Fill(T(0));
  }
};

}  // namespace msv::nn
