#pragma once

#include <stdexcept>
#include <vector>

#include "anonact/tensor.hpp"

namespace anonact {

// Axis-aligned rectangle in continuous pixel coordinates, [x1,x2) x [y1,y2).
// Width is x2-x1. Sampling coordinates put the center of pixel (row r,
// col c) at (x=c, y=r).
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  bool valid() const { return x1 < x2 && y1 < y2; }
};

// H x W x 3 raster, doubles in [0,1], row-major HWC.
class ImageBuffer {
 public:
  ImageBuffer() = default;
  ImageBuffer(int height, int width) : h_(height), w_(width), data_(static_cast<std::size_t>(height) * width * 3, 0.0) {
    if (height <= 0 || width <= 0) throw std::invalid_argument("image: non-positive size");
  }

  int height() const { return h_; }
  int width() const { return w_; }

  double& at(int y, int x, int c) { return data_[(static_cast<std::size_t>(y) * w_ + x) * 3 + c]; }
  double at(int y, int x, int c) const { return data_[(static_cast<std::size_t>(y) * w_ + x) * 3 + c]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::size_t size() const { return data_.size(); }

  void fill(double v) {
    for (double& x : data_) x = v;
  }
  void clamp01() {
    for (double& x : data_) x = x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x);
  }
  bool in_range01() const {
    for (double x : data_)
      if (!(x >= 0.0 && x <= 1.0)) return false;
    return true;
  }

  bool operator==(const ImageBuffer& o) const { return h_ == o.h_ && w_ == o.w_ && data_ == o.data_; }

  // CHW tensor [3,H,W] conversions for the network boundary
  Tensor to_chw() const;
  static ImageBuffer from_chw(const Tensor& t, bool clamp = true);

 private:
  int h_ = 0, w_ = 0;
  std::vector<double> data_;
};

}  // namespace anonact
