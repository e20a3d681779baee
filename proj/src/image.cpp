#include "anonact/image.hpp"

namespace anonact {

Tensor ImageBuffer::to_chw() const {
  Tensor t({3, h_, w_});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h_; ++y)
      for (int x = 0; x < w_; ++x) t.at(c, y, x) = at(y, x, c);
  return t;
}

ImageBuffer ImageBuffer::from_chw(const Tensor& t, bool clamp) {
  if (t.ndim() != 3 || t.dim(0) != 3) throw std::invalid_argument("image: expected [3,H,W] tensor");
  ImageBuffer img(t.dim(1), t.dim(2));
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) img.at(y, x, c) = t.at(c, y, x);
  if (clamp) img.clamp01();
  return img;
}

}  // namespace anonact
