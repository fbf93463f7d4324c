#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace ftso {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of doubles. Value semantic; the autodiff tape keeps
// its own copies of intermediate results.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor from(std::initializer_list<double> values);
  // Entries drawn from N(0, stddev^2).
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0);
  static Tensor uniform(Shape shape, std::mt19937_64& rng, double lo,
                        double hi);

  const Shape& shape() const { return shape_; }
  std::int64_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* ptr() { return data_.data(); }
  const double* ptr() const { return data_.data(); }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Single element of a one-element tensor.
  double item() const;

  // 4-D accessor (N, C, H, W).
  double& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data_[static_cast<std::size_t>(
        ((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  double at(std::int64_t n, std::int64_t c, std::int64_t h,
            std::int64_t w) const {
    return data_[static_cast<std::size_t>(
        ((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }

  Tensor reshaped(Shape shape) const;
  void fill(double v);
  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(double s);

  bool all_finite() const;
  double sum() const;
  double max_abs() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

// A trainable tensor with its accumulated gradient.
class Parameter {
 public:
  Parameter() = default;
  explicit Parameter(Tensor value, std::string name = {})
      : value_(std::move(value)), grad_(value_.shape()), name_(std::move(name)) {}

  Tensor& value() { return value_; }
  const Tensor& value() const { return value_; }
  Tensor& grad() { return grad_; }
  const Tensor& grad() const { return grad_; }
  const std::string& name() const { return name_; }
  std::size_t numel() const { return value_.numel(); }

  void zero_grad() { grad_.fill(0.0); }

  // A frozen parameter enters tapes as a constant: no gradient is computed.
  bool frozen() const { return frozen_; }
  void set_frozen(bool f) { frozen_ = f; }

 private:
  Tensor value_;
  Tensor grad_;
  std::string name_;
  bool frozen_ = false;
};

}  // namespace ftso
