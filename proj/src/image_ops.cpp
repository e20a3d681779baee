#include "anonact/image_ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace anonact {

Box clip_box(const Box& box, int image_w, int image_h) {
  Box b = box;
  b.x1 = std::max(0.0, std::min(b.x1, static_cast<double>(image_w)));
  b.x2 = std::max(0.0, std::min(b.x2, static_cast<double>(image_w)));
  b.y1 = std::max(0.0, std::min(b.y1, static_cast<double>(image_h)));
  b.y2 = std::max(0.0, std::min(b.y2, static_cast<double>(image_h)));
  return b;
}

Box enlarge_box(const Box& box, double factor, int image_w, int image_h) {
  if (factor <= 0.0) throw std::invalid_argument("enlarge_box: factor must be positive");
  if (!box.valid()) throw std::invalid_argument("enlarge_box: invalid box");
  const double cx = box.cx(), cy = box.cy();
  const double hw = 0.5 * box.width() * factor;
  const double hh = 0.5 * box.height() * factor;
  Box out{cx - hw, cy - hh, cx + hw, cy + hh};
  out = clip_box(out, image_w, image_h);
  if (!out.valid()) throw std::invalid_argument("enlarge_box: degenerate box after clipping");
  return out;
}

PixelRect rasterize_box(const Box& box, int image_w, int image_h) {
  PixelRect r;
  r.x0 = std::max(0, static_cast<int>(std::floor(box.x1)));
  r.y0 = std::max(0, static_cast<int>(std::floor(box.y1)));
  r.x1 = std::min(image_w, static_cast<int>(std::ceil(box.x2)));
  r.y1 = std::min(image_h, static_cast<int>(std::ceil(box.y2)));
  return r;
}

SampleGrid make_crop_grid(const Box& box, int out_h, int out_w) {
  if (!box.valid()) throw std::invalid_argument("make_crop_grid: invalid box");
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("make_crop_grid: non-positive output size");
  SampleGrid g;
  g.out_h = out_h;
  g.out_w = out_w;
  g.xs.resize(static_cast<std::size_t>(out_h) * out_w);
  g.ys.resize(static_cast<std::size_t>(out_h) * out_w);
  for (int i = 0; i < out_h; ++i) {
    const double y = (out_h == 1) ? 0.5 * (box.y1 + box.y2) : box.y1 + i * (box.y2 - box.y1) / (out_h - 1);
    for (int j = 0; j < out_w; ++j) {
      const double x = (out_w == 1) ? 0.5 * (box.x1 + box.x2) : box.x1 + j * (box.x2 - box.x1) / (out_w - 1);
      g.xs[static_cast<std::size_t>(i) * out_w + j] = x;
      g.ys[static_cast<std::size_t>(i) * out_w + j] = y;
    }
  }
  return g;
}

namespace {

struct BilinearTap {
  int x0, x1, y0, y1;
  double wx, wy;
};

inline BilinearTap bilinear_tap(double x, double y, int w, int h) {
  BilinearTap t;
  const double xc = std::min(std::max(x, 0.0), static_cast<double>(w - 1));
  const double yc = std::min(std::max(y, 0.0), static_cast<double>(h - 1));
  t.x0 = static_cast<int>(std::floor(xc));
  t.y0 = static_cast<int>(std::floor(yc));
  if (t.x0 > w - 1) t.x0 = w - 1;
  if (t.y0 > h - 1) t.y0 = h - 1;
  t.x1 = std::min(t.x0 + 1, w - 1);
  t.y1 = std::min(t.y0 + 1, h - 1);
  t.wx = xc - t.x0;
  t.wy = yc - t.y0;
  return t;
}

}  // namespace

Var grid_sample(const Var& image_chw, const SampleGrid& grid) {
  const auto& s = image_chw.value().shape();
  if (s.size() != 3) throw std::invalid_argument("grid_sample: expects [C,H,W]");
  const int c = s[0], h = s[1], w = s[2];
  const int oh = grid.out_h, ow = grid.out_w;
  Tensor out({c, oh, ow});
  auto taps = std::make_shared<std::vector<BilinearTap>>();
  taps->reserve(static_cast<std::size_t>(oh) * ow);
  for (int i = 0; i < oh; ++i)
    for (int j = 0; j < ow; ++j) taps->push_back(bilinear_tap(grid.x(i, j), grid.y(i, j), w, h));
  const Tensor& img = image_chw.value();
  for (int ch = 0; ch < c; ++ch) {
    for (int i = 0; i < oh; ++i) {
      for (int j = 0; j < ow; ++j) {
        const BilinearTap& t = (*taps)[static_cast<std::size_t>(i) * ow + j];
        const double v00 = img.at(ch, t.y0, t.x0), v01 = img.at(ch, t.y0, t.x1);
        const double v10 = img.at(ch, t.y1, t.x0), v11 = img.at(ch, t.y1, t.x1);
        out.at(ch, i, j) = (1.0 - t.wy) * ((1.0 - t.wx) * v00 + t.wx * v01) + t.wy * ((1.0 - t.wx) * v10 + t.wx * v11);
      }
    }
  }
  return make_op(std::move(out), {image_chw}, [image_chw, taps, c, oh, ow](VarNode& nd) {
    Tensor& g = image_chw.node()->ensure_grad();
    for (int ch = 0; ch < c; ++ch) {
      for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j) {
          const BilinearTap& t = (*taps)[static_cast<std::size_t>(i) * ow + j];
          const double gy = nd.grad.at(ch, i, j);
          g.at(ch, t.y0, t.x0) += gy * (1.0 - t.wy) * (1.0 - t.wx);
          g.at(ch, t.y0, t.x1) += gy * (1.0 - t.wy) * t.wx;
          g.at(ch, t.y1, t.x0) += gy * t.wy * (1.0 - t.wx);
          g.at(ch, t.y1, t.x1) += gy * t.wy * t.wx;
        }
      }
    }
  });
}

ImageBuffer grid_sample(const ImageBuffer& image, const SampleGrid& grid) {
  NoGradGuard ng;
  Var v = constant(image.to_chw());
  return ImageBuffer::from_chw(grid_sample(v, grid).value(), /*clamp=*/false);
}

Var paste_composite(const Var& frame_chw, const Box& box, const Var& crop_chw) {
  const auto& fs = frame_chw.value().shape();
  const auto& cs = crop_chw.value().shape();
  if (fs.size() != 3 || cs.size() != 3 || fs[0] != cs[0])
    throw std::invalid_argument("paste_composite: expects matching [C,H,W] tensors");
  const int c = fs[0], fh = fs[1], fw = fs[2];
  const int ch2 = cs[1], cw2 = cs[2];
  if (!box.valid()) throw std::invalid_argument("paste_composite: invalid box");
  if (box.x1 < 0.0 || box.y1 < 0.0 || box.x2 > fw || box.y2 > fh)
    throw std::invalid_argument("paste_composite: box outside frame");
  const PixelRect r = rasterize_box(box, fw, fh);
  if (r.width() <= 0 || r.height() <= 0) throw std::invalid_argument("paste_composite: empty region");

  // align-corners map from region pixel indices onto the crop
  auto taps = std::make_shared<std::vector<BilinearTap>>();
  taps->reserve(static_cast<std::size_t>(r.height()) * r.width());
  for (int i = 0; i < r.height(); ++i) {
    const double py = (r.height() == 1) ? 0.5 * (ch2 - 1) : i * static_cast<double>(ch2 - 1) / (r.height() - 1);
    for (int j = 0; j < r.width(); ++j) {
      const double px = (r.width() == 1) ? 0.5 * (cw2 - 1) : j * static_cast<double>(cw2 - 1) / (r.width() - 1);
      taps->push_back(bilinear_tap(px, py, cw2, ch2));
    }
  }

  Tensor out = frame_chw.value();
  const Tensor& crop = crop_chw.value();
  for (int k = 0; k < c; ++k) {
    for (int i = 0; i < r.height(); ++i) {
      for (int j = 0; j < r.width(); ++j) {
        const BilinearTap& t = (*taps)[static_cast<std::size_t>(i) * r.width() + j];
        const double v00 = crop.at(k, t.y0, t.x0), v01 = crop.at(k, t.y0, t.x1);
        const double v10 = crop.at(k, t.y1, t.x0), v11 = crop.at(k, t.y1, t.x1);
        out.at(k, r.y0 + i, r.x0 + j) =
            (1.0 - t.wy) * ((1.0 - t.wx) * v00 + t.wx * v01) + t.wy * ((1.0 - t.wx) * v10 + t.wx * v11);
      }
    }
  }

  return make_op(std::move(out), {frame_chw, crop_chw}, [frame_chw, crop_chw, taps, r, c](VarNode& nd) {
    if (frame_chw.requires_grad()) {
      Tensor g = nd.grad;
      for (int k = 0; k < c; ++k)
        for (int i = r.y0; i < r.y1; ++i)
          for (int j = r.x0; j < r.x1; ++j) g.at(k, i, j) = 0.0;  // replaced pixels do not see the frame
      frame_chw.node()->accumulate(g);
    }
    if (crop_chw.requires_grad()) {
      Tensor& g = crop_chw.node()->ensure_grad();
      for (int k = 0; k < c; ++k) {
        for (int i = 0; i < r.height(); ++i) {
          for (int j = 0; j < r.width(); ++j) {
            const BilinearTap& t = (*taps)[static_cast<std::size_t>(i) * r.width() + j];
            const double gy = nd.grad.at(k, r.y0 + i, r.x0 + j);
            g.at(k, t.y0, t.x0) += gy * (1.0 - t.wy) * (1.0 - t.wx);
            g.at(k, t.y0, t.x1) += gy * (1.0 - t.wy) * t.wx;
            g.at(k, t.y1, t.x0) += gy * t.wy * (1.0 - t.wx);
            g.at(k, t.y1, t.x1) += gy * t.wy * t.wx;
          }
        }
      }
    }
  });
}

ImageBuffer paste_composite(const ImageBuffer& frame, const Box& box, const ImageBuffer& crop) {
  NoGradGuard ng;
  Var f = constant(frame.to_chw());
  Var c = constant(crop.to_chw());
  return ImageBuffer::from_chw(paste_composite(f, box, c).value(), /*clamp=*/false);
}

ImageBuffer crop_region(const ImageBuffer& frame, const Box& box) {
  const PixelRect r = rasterize_box(box, frame.width(), frame.height());
  if (r.width() <= 0 || r.height() <= 0) throw std::invalid_argument("crop_region: empty region");
  ImageBuffer out(r.height(), r.width());
  for (int y = 0; y < r.height(); ++y)
    for (int x = 0; x < r.width(); ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = frame.at(r.y0 + y, r.x0 + x, c);
  return out;
}

Var resize_bilinear(const Var& image_chw, int out_h, int out_w) {
  const auto& s = image_chw.value().shape();
  if (s[1] == out_h && s[2] == out_w) return image_chw;
  Box full{0.0, 0.0, static_cast<double>(s[2] - 1), static_cast<double>(s[1] - 1)};
  if (s[1] == 1) full.y2 = 0.5;  // keep box valid for single-row sources
  if (s[2] == 1) full.x2 = 0.5;
  return grid_sample(image_chw, make_crop_grid(full, out_h, out_w));
}

}  // namespace anonact
