#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ocwm/util/errors.hpp"
#include "ocwm/util/rng.hpp"

namespace ocwm::nn {

// Dense row-major tensor. The buffer is shared, so copies and reshapes are
// views; ops that produce new values always allocate fresh buffers.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape)
      : shape_(std::move(shape)),
        buf_(std::make_shared<std::vector<T>>(count(shape_), T(0))) {}

  Tensor(std::vector<int> shape, std::vector<T> data)
      : shape_(std::move(shape)), buf_(std::make_shared<std::vector<T>>(std::move(data))) {
    if (static_cast<std::size_t>(numel()) != buf_->size())
      throw DimensionError("tensor: data size does not match shape " + shape_str());
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, T v) {
    Tensor t(std::move(shape));
    for (auto& x : *t.buf_) x = v;
    return t;
  }

  static Tensor randn(std::vector<int> shape, util::Rng& rng, T stddev = T(1)) {
    Tensor t(std::move(shape));
    for (auto& x : *t.buf_) x = static_cast<T>(rng.normal()) * stddev;
    return t;
  }

  static Tensor uniform(std::vector<int> shape, util::Rng& rng, T lo, T hi) {
    Tensor t(std::move(shape));
    for (auto& x : *t.buf_) x = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  bool empty() const { return !buf_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  const std::vector<int>& shape() const { return shape_; }
  long numel() const { return count(shape_); }

  T* data() { return buf_->data(); }
  const T* data() const { return buf_->data(); }
  T& operator[](long i) { return (*buf_)[static_cast<std::size_t>(i)]; }
  const T& operator[](long i) const { return (*buf_)[static_cast<std::size_t>(i)]; }

  T& at(int i, int j) { return (*buf_)[static_cast<std::size_t>(i) * dim(1) + j]; }
  const T& at(int i, int j) const { return (*buf_)[static_cast<std::size_t>(i) * dim(1) + j]; }

  // Shares the buffer under a new shape.
  Tensor reshaped(std::vector<int> shape) const {
    if (count(shape) != numel())
      throw DimensionError("reshape: element count mismatch " + shape_str());
    Tensor t;
    t.shape_ = std::move(shape);
    t.buf_ = buf_;
    return t;
  }

  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.buf_ = std::make_shared<std::vector<T>>(*buf_);
    return t;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (const T& x : *buf_)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
    os << "]";
    return os.str();
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> t;
    std::vector<U> d(buf_->size());
    for (std::size_t i = 0; i < buf_->size(); ++i) d[i] = static_cast<U>((*buf_)[i]);
    return Tensor<U>(shape_, std::move(d));
  }

 private:
  static long count(const std::vector<int>& s) {
    long n = 1;
    for (int d : s) n *= d;
    return s.empty() ? 0 : n;
  }

  std::vector<int> shape_;
  std::shared_ptr<std::vector<T>> buf_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace ocwm::nn
