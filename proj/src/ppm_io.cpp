#include "anonact/ppm_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace anonact {

namespace {

int next_token(std::istream& in) {
  // skips whitespace and '#' comments, returns a non-negative integer
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      c = in.get();
    } else {
      break;
    }
  }
  if (c == EOF || !std::isdigit(c)) throw std::runtime_error("image: malformed header");
  int v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    c = in.get();
  }
  return v;
}

}  // namespace

ImageBuffer load_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open image");
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  const bool color = (m0 == 'P' && m1 == '6');
  const bool gray = (m0 == 'P' && m1 == '5');
  if (!color && !gray) throw std::runtime_error(path + ": unsupported image format (want P6/P5)");
  const int w = next_token(in);
  const int h = next_token(in);
  const int maxval = next_token(in);
  if (w <= 0 || h <= 0 || maxval != 255) throw std::runtime_error(path + ": unsupported image header");
  const int ch = color ? 3 : 1;
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * ch);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw std::runtime_error(path + ": truncated image");
  ImageBuffer img(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const unsigned char b = raw[(static_cast<std::size_t>(y) * w + x) * ch + (color ? c : 0)];
        img.at(y, x, c) = static_cast<double>(b) / 255.0;
      }
    }
  }
  return img;
}

void save_image(const std::string& path, const ImageBuffer& img) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(tmp + ": cannot open for writing");
    out << "P6\n" << img.width() << " " << img.height() << "\n255\n";
    std::vector<unsigned char> raw(static_cast<std::size_t>(img.width()) * img.height() * 3);
    for (int y = 0; y < img.height(); ++y) {
      for (int x = 0; x < img.width(); ++x) {
        for (int c = 0; c < 3; ++c) {
          double v = img.at(y, x, c);
          v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
          raw[(static_cast<std::size_t>(y) * img.width() + x) * 3 + c] =
              static_cast<unsigned char>(std::lround(v * 255.0));
        }
      }
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw std::runtime_error(path + ": rename failed");
}

}  // namespace anonact
