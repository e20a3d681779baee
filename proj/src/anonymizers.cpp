#include "anonact/anonymizers.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "anonact/rng.hpp"

namespace anonact {

AnonMethod parse_method(const std::string& name) {
  if (name == "none") return AnonMethod::None;
  if (name == "blur") return AnonMethod::Blur;
  if (name == "mask") return AnonMethod::Mask;
  if (name == "noise") return AnonMethod::Noise;
  if (name == "superpixel") return AnonMethod::Superpixel;
  if (name == "edge") return AnonMethod::Edge;
  if (name == "learned") return AnonMethod::Learned;
  throw std::invalid_argument("unknown anonymizer method: " + name);
}

std::string method_name(AnonMethod m) {
  switch (m) {
    case AnonMethod::None: return "none";
    case AnonMethod::Blur: return "blur";
    case AnonMethod::Mask: return "mask";
    case AnonMethod::Noise: return "noise";
    case AnonMethod::Superpixel: return "superpixel";
    case AnonMethod::Edge: return "edge";
    case AnonMethod::Learned: return "learned";
  }
  return "?";
}

AnonymizerSpec AnonymizerSpec::parse(const std::string& method, double param, std::uint64_t seed) {
  AnonymizerSpec s;
  s.method = parse_method(method);
  s.param = param;
  s.seed = seed;
  if (s.method == AnonMethod::Blur) {
    if (param <= 0.0) s.param = 8.0;
    if (s.param < 1.0) throw std::invalid_argument("blur: target side must be >= 1");
  } else if (s.method == AnonMethod::Noise) {
    if (param <= 0.0) s.param = 0.1;
  } else if (s.method == AnonMethod::Superpixel) {
    if (param <= 0.0) s.param = 64.0;
    if (s.param < 1.0) throw std::invalid_argument("superpixel: count must be >= 1");
  }
  return s;
}

std::string AnonymizerSpec::label() const {
  std::ostringstream os;
  os << method_name(method);
  if (method == AnonMethod::Blur || method == AnonMethod::Superpixel) {
    os << static_cast<int>(param);
  } else if (method == AnonMethod::Noise) {
    os << param;
  }
  return os.str();
}

ImageBuffer area_downsample(const ImageBuffer& img, int s) {
  const int h = img.height(), w = img.width();
  ImageBuffer out(s, s);
  const double sy = static_cast<double>(h) / s;
  const double sx = static_cast<double>(w) / s;
  for (int oy = 0; oy < s; ++oy) {
    const double y0 = oy * sy, y1 = (oy + 1) * sy;
    for (int ox = 0; ox < s; ++ox) {
      const double x0 = ox * sx, x1 = (ox + 1) * sx;
      double acc[3] = {0, 0, 0};
      double area = 0.0;
      for (int y = static_cast<int>(std::floor(y0)); y < static_cast<int>(std::ceil(y1)); ++y) {
        const double cy = std::min(y1, static_cast<double>(y + 1)) - std::max(y0, static_cast<double>(y));
        if (cy <= 0.0) continue;
        for (int x = static_cast<int>(std::floor(x0)); x < static_cast<int>(std::ceil(x1)); ++x) {
          const double cx = std::min(x1, static_cast<double>(x + 1)) - std::max(x0, static_cast<double>(x));
          if (cx <= 0.0) continue;
          const double cov = cx * cy;
          for (int c = 0; c < 3; ++c) acc[c] += cov * img.at(std::min(y, h - 1), std::min(x, w - 1), c);
          area += cov;
        }
      }
      for (int c = 0; c < 3; ++c) out.at(oy, ox, c) = acc[c] / area;
    }
  }
  return out;
}

ImageBuffer anonymize_blur(const ImageBuffer& crop, int s) {
  if (s < 1) throw std::invalid_argument("blur: target side must be >= 1");
  if (s > crop.height() || s > crop.width()) return crop;
  ImageBuffer low = area_downsample(crop, s);
  Box full{0.0, 0.0, std::max(0.5, static_cast<double>(s - 1)), std::max(0.5, static_cast<double>(s - 1))};
  ImageBuffer up = grid_sample(low, make_crop_grid(full, crop.height(), crop.width()));
  up.clamp01();
  return up;
}

ImageBuffer anonymize_mask(const ImageBuffer& crop) {
  ImageBuffer out(crop.height(), crop.width());
  out.fill(0.0);
  return out;
}

ImageBuffer anonymize_noise(const ImageBuffer& crop, double var, std::uint64_t seed) {
  if (var < 0.0) throw std::invalid_argument("noise: variance must be non-negative");
  ImageBuffer out = crop;
  if (var == 0.0) return out;
  Rng rng(seed);
  const double sd = std::sqrt(var);
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) += rng.normal(0.0, sd);
  out.clamp01();
  return out;
}

void rgb_to_lab(double r, double g, double b, double* L, double* a, double* bb) {
  auto lin = [](double u) { return u <= 0.04045 ? u / 12.92 : std::pow((u + 0.055) / 1.055, 2.4); };
  const double rl = lin(r), gl = lin(g), bl = lin(b);
  // sRGB D65
  const double X = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl;
  const double Y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
  const double Z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl;
  auto f = [](double t) { return t > 0.008856 ? std::cbrt(t) : 7.787 * t + 16.0 / 116.0; };
  const double fx = f(X / 0.95047), fy = f(Y / 1.0), fz = f(Z / 1.08883);
  *L = 116.0 * fy - 16.0;
  *a = 500.0 * (fx - fy);
  *bb = 200.0 * (fy - fz);
}

std::vector<int> slic_segments(const ImageBuffer& img, int k, int* n_segments) {
  if (k < 1) throw std::invalid_argument("superpixel: count must be >= 1");
  const int h = img.height(), w = img.width();
  const int n = h * w;
  const double step = std::sqrt(static_cast<double>(n) / k);
  const int gh = std::max(1, static_cast<int>(std::lround(h / step)));
  const int gw = std::max(1, static_cast<int>(std::lround(w / step)));
  const int nc = gh * gw;

  std::vector<double> lab(static_cast<std::size_t>(n) * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      rgb_to_lab(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2), &lab[(static_cast<std::size_t>(y) * w + x) * 3],
                 &lab[(static_cast<std::size_t>(y) * w + x) * 3 + 1], &lab[(static_cast<std::size_t>(y) * w + x) * 3 + 2]);

  struct Center {
    double L, a, b, x, y;
  };
  std::vector<Center> centers(static_cast<std::size_t>(nc));
  for (int gy = 0; gy < gh; ++gy) {
    for (int gx = 0; gx < gw; ++gx) {
      const int cy = std::min(h - 1, static_cast<int>((gy + 0.5) * h / gh));
      const int cx = std::min(w - 1, static_cast<int>((gx + 0.5) * w / gw));
      const std::size_t p = (static_cast<std::size_t>(cy) * w + cx) * 3;
      centers[static_cast<std::size_t>(gy) * gw + gx] = {lab[p], lab[p + 1], lab[p + 2], static_cast<double>(cx),
                                                         static_cast<double>(cy)};
    }
  }

  const double compactness = 10.0;
  const double spatial_w = (compactness / step) * (compactness / step);
  std::vector<int> assign(static_cast<std::size_t>(n), -1);
  std::vector<double> best(static_cast<std::size_t>(n));

  for (int it = 0; it < 10; ++it) {
    std::fill(best.begin(), best.end(), 1e300);
    const int win = std::max(1, static_cast<int>(std::ceil(2.0 * step)));
    for (int ci = 0; ci < nc; ++ci) {
      const Center& c = centers[static_cast<std::size_t>(ci)];
      const int y0 = std::max(0, static_cast<int>(c.y) - win), y1 = std::min(h - 1, static_cast<int>(c.y) + win);
      const int x0 = std::max(0, static_cast<int>(c.x) - win), x1 = std::min(w - 1, static_cast<int>(c.x) + win);
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          const std::size_t p = static_cast<std::size_t>(y) * w + x;
          const double dL = lab[p * 3] - c.L, da = lab[p * 3 + 1] - c.a, db = lab[p * 3 + 2] - c.b;
          const double dx = x - c.x, dy = y - c.y;
          const double d = dL * dL + da * da + db * db + spatial_w * (dx * dx + dy * dy);
          if (d < best[p]) {
            best[p] = d;
            assign[p] = ci;
          }
        }
      }
    }
    // pixels out of every window fall back to nearest center spatially
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * w + x;
        if (assign[p] >= 0) continue;
        double bd = 1e300;
        for (int ci = 0; ci < nc; ++ci) {
          const double dx = x - centers[static_cast<std::size_t>(ci)].x, dy = y - centers[static_cast<std::size_t>(ci)].y;
          const double d = dx * dx + dy * dy;
          if (d < bd) {
            bd = d;
            assign[p] = ci;
          }
        }
      }
    }
    // recompute centers
    std::vector<double> sums(static_cast<std::size_t>(nc) * 5, 0.0);
    std::vector<int> counts(static_cast<std::size_t>(nc), 0);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * w + x;
        const int ci = assign[p];
        double* s = &sums[static_cast<std::size_t>(ci) * 5];
        s[0] += lab[p * 3];
        s[1] += lab[p * 3 + 1];
        s[2] += lab[p * 3 + 2];
        s[3] += x;
        s[4] += y;
        ++counts[static_cast<std::size_t>(ci)];
      }
    }
    for (int ci = 0; ci < nc; ++ci) {
      if (counts[static_cast<std::size_t>(ci)] == 0) continue;
      const double inv = 1.0 / counts[static_cast<std::size_t>(ci)];
      double* s = &sums[static_cast<std::size_t>(ci) * 5];
      centers[static_cast<std::size_t>(ci)] = {s[0] * inv, s[1] * inv, s[2] * inv, s[3] * inv, s[4] * inv};
    }
  }
  if (n_segments) *n_segments = nc;
  return assign;
}

ImageBuffer anonymize_superpixel(const ImageBuffer& crop, int k) {
  int nc = 0;
  std::vector<int> seg = slic_segments(crop, k, &nc);
  const int h = crop.height(), w = crop.width();
  std::vector<double> mean(static_cast<std::size_t>(nc) * 3, 0.0);
  std::vector<int> count(static_cast<std::size_t>(nc), 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int ci = seg[static_cast<std::size_t>(y) * w + x];
      for (int c = 0; c < 3; ++c) mean[static_cast<std::size_t>(ci) * 3 + c] += crop.at(y, x, c);
      ++count[static_cast<std::size_t>(ci)];
    }
  }
  for (int ci = 0; ci < nc; ++ci)
    if (count[static_cast<std::size_t>(ci)] > 0)
      for (int c = 0; c < 3; ++c) mean[static_cast<std::size_t>(ci) * 3 + c] /= count[static_cast<std::size_t>(ci)];
  ImageBuffer out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int ci = seg[static_cast<std::size_t>(y) * w + x];
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = mean[static_cast<std::size_t>(ci) * 3 + c];
    }
  return out;
}

ImageBuffer anonymize_edge(const ImageBuffer& crop) {
  const int h = crop.height(), w = crop.width();
  std::vector<double> luma(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      luma[static_cast<std::size_t>(y) * w + x] =
          0.299 * crop.at(y, x, 0) + 0.587 * crop.at(y, x, 1) + 0.114 * crop.at(y, x, 2);
  auto L = [&](int y, int x) {
    y = std::clamp(y, 0, h - 1);
    x = std::clamp(x, 0, w - 1);
    return luma[static_cast<std::size_t>(y) * w + x];
  };
  ImageBuffer out(h, w);
  double mx = 0.0;
  std::vector<double> mag(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double gx = -L(y - 1, x - 1) + L(y - 1, x + 1) - 2.0 * L(y, x - 1) + 2.0 * L(y, x + 1) - L(y + 1, x - 1) +
                        L(y + 1, x + 1);
      const double gy = -L(y - 1, x - 1) - 2.0 * L(y - 1, x) - L(y - 1, x + 1) + L(y + 1, x - 1) + 2.0 * L(y + 1, x) +
                        L(y + 1, x + 1);
      const double m = std::sqrt(gx * gx + gy * gy);
      mag[static_cast<std::size_t>(y) * w + x] = m;
      mx = std::max(mx, m);
    }
  }
  if (mx > 0.0) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = mag[static_cast<std::size_t>(y) * w + x] / mx;
  }
  return out;
}

ImageBuffer apply_anonymizer(const ImageBuffer& frame, const std::vector<Box>& faces, const AnonymizerSpec& spec,
                             const std::function<Var(const Var&)>* modifier, int work_res) {
  if (spec.method == AnonMethod::None) return frame;
  if (spec.method == AnonMethod::Learned && (modifier == nullptr || work_res <= 0))
    throw std::invalid_argument("apply_anonymizer: learned method requires a modifier and work resolution");
  ImageBuffer out = frame;
  int face_idx = 0;
  for (const Box& face : faces) {
    const Box big = enlarge_box(face, spec.enlarge, frame.width(), frame.height());
    if (spec.method == AnonMethod::Learned) {
      NoGradGuard ng;
      Var f = constant(out.to_chw());
      Var crop = grid_sample(f, make_crop_grid(big, work_res, work_res));
      Var modified = (*modifier)(crop);
      out = ImageBuffer::from_chw(paste_composite(f, big, modified).value());
    } else {
      ImageBuffer sub = crop_region(out, big);
      ImageBuffer anon;
      switch (spec.method) {
        case AnonMethod::Blur: anon = anonymize_blur(sub, static_cast<int>(spec.param)); break;
        case AnonMethod::Mask: anon = anonymize_mask(sub); break;
        case AnonMethod::Noise:
          anon = anonymize_noise(sub, spec.param, spec.seed + 1000003ULL * static_cast<std::uint64_t>(face_idx));
          break;
        case AnonMethod::Superpixel: anon = anonymize_superpixel(sub, static_cast<int>(spec.param)); break;
        case AnonMethod::Edge: anon = anonymize_edge(sub); break;
        default: anon = sub; break;
      }
      out = paste_composite(out, big, anon);
    }
    ++face_idx;
  }
  return out;
}

}  // namespace anonact
