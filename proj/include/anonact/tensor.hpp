#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace anonact {

// Dense row-major double tensor. Value semantics; shapes are small
// vectors of extents. Network activations use NCHW order.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<double> data);

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, double v);
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // NCHW accessors
  double& at(int n, int c, int y, int x) {
    return data_[static_cast<std::size_t>(((static_cast<std::int64_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x)];
  }
  double at(int n, int c, int y, int x) const {
    return data_[static_cast<std::size_t>(((static_cast<std::int64_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x)];
  }
  double& at(int i, int j) { return data_[static_cast<std::size_t>(static_cast<std::int64_t>(i) * shape_[1] + j)]; }
  double at(int i, int j) const { return data_[static_cast<std::size_t>(static_cast<std::int64_t>(i) * shape_[1] + j)]; }
  double& at(int c, int y, int x) {
    return data_[static_cast<std::size_t>((static_cast<std::int64_t>(c) * shape_[1] + y) * shape_[2] + x)];
  }
  double at(int c, int y, int x) const {
    return data_[static_cast<std::size_t>((static_cast<std::int64_t>(c) * shape_[1] + y) * shape_[2] + x)];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  double item() const;
  bool all_finite() const;

  Tensor reshaped(std::vector<int> new_shape) const;

  void fill(double v);
  void add_(const Tensor& o);          // in-place accumulate
  void add_scaled_(const Tensor& o, double s);

  std::string shape_str() const;
  static std::int64_t shape_numel(const std::vector<int>& shape);

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

}  // namespace anonact
