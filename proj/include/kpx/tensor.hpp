#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "kpx/common.hpp"

namespace kpx {

/// Dense row-major multidimensional array of 64-bit floats.
/// The data length always equals the product of the extents.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, double fill);
  Tensor(std::vector<int> shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor({1}, v); }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

  bool empty() const { return data_.empty(); }
  int rank() const { return static_cast<int>(shape_.size()); }
  const std::vector<int>& shape() const { return shape_; }
  int extent(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
  std::size_t size() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Rank-specific accessors (no bounds checks beyond debug builds).
  double& at(int i) { return data_[static_cast<std::size_t>(i)]; }
  const double& at(int i) const { return data_[static_cast<std::size_t>(i)]; }
  double& at(int i, int j) { return data_[idx2(i, j)]; }
  const double& at(int i, int j) const { return data_[idx2(i, j)]; }
  double& at(int i, int j, int k) { return data_[idx3(i, j, k)]; }
  const double& at(int i, int j, int k) const { return data_[idx3(i, j, k)]; }
  double& at(int i, int j, int k, int l) { return data_[idx4(i, j, k, l)]; }
  const double& at(int i, int j, int k, int l) const {
    return data_[idx4(i, j, k, l)];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  std::string shape_str() const;

  void fill(double v);
  bool all_finite() const;
  double sum() const;
  double max_abs() const;

  /// Elementwise in-place helpers used by the optimizer.
  void add_scaled(const Tensor& o, double s);

  bool operator==(const Tensor& o) const {
    return shape_ == o.shape_ && data_ == o.data_;
  }

 private:
  std::size_t idx2(int i, int j) const {
    return static_cast<std::size_t>(i) * shape_[1] + j;
  }
  std::size_t idx3(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k;
  }
  std::size_t idx4(int i, int j, int k, int l) const {
    return ((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) *
               shape_[3] +
           l;
  }

  std::vector<int> shape_;
  std::vector<double> data_;
};

}  // namespace kpx
