#pragma once

#include "anonact/autograd.hpp"
#include "anonact/image.hpp"

namespace anonact {

// Regular grid of source sampling coordinates, one (x,y) per output pixel.
// Coordinates may fall outside the source; sampling clamps to the border.
struct SampleGrid {
  int out_h = 0, out_w = 0;
  std::vector<double> xs, ys;  // row-major, out_h*out_w each

  double x(int i, int j) const { return xs[static_cast<std::size_t>(i) * out_w + j]; }
  double y(int i, int j) const { return ys[static_cast<std::size_t>(i) * out_w + j]; }
};

// Integer pixel rectangle [x0,x1) x [y0,y1).
struct PixelRect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
};

// Scales width and height by `factor` about the box center, then clips to
// [0,w]x[0,h]. Throws if the clipped box has zero area.
Box enlarge_box(const Box& box, double factor, int image_w, int image_h);

Box clip_box(const Box& box, int image_w, int image_h);

// Sub-pixel edges are rounded outward to whole pixels.
PixelRect rasterize_box(const Box& box, int image_w, int image_h);

// Grid points span the box uniformly with the first/last point on the box
// edges (align-corners); a single-point axis samples the box center.
SampleGrid make_crop_grid(const Box& box, int out_h, int out_w);

// Bilinear sampling with border clamping. Gradients flow to the source
// values; the grid is constant.
Var grid_sample(const Var& image_chw, const SampleGrid& grid);
ImageBuffer grid_sample(const ImageBuffer& image, const SampleGrid& grid);

// Writes `crop`, bilinearly resampled to the box's rasterized extent, into
// the frame region; pixels outside the box are untouched. Gradients flow
// into the crop and into the untouched frame pixels.
Var paste_composite(const Var& frame_chw, const Box& box, const Var& crop_chw);
ImageBuffer paste_composite(const ImageBuffer& frame, const Box& box, const ImageBuffer& crop);

// Exact (copy, not resampled) extraction of a box's rasterized region.
ImageBuffer crop_region(const ImageBuffer& frame, const Box& box);

// Bilinear resize of a CHW tensor via an align-corners full-extent grid.
Var resize_bilinear(const Var& image_chw, int out_h, int out_w);

}  // namespace anonact
