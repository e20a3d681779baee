#pragma once

#include <string>

#include "anonact/image.hpp"

namespace anonact {

// 8-bit binary PPM (P6) / PGM (P5). Grayscale sources are replicated to
// three channels on load. Values map linearly between [0,255] and [0,1];
// writing rounds to nearest, so load->save of our own files is byte-exact.
ImageBuffer load_image(const std::string& path);
void save_image(const std::string& path, const ImageBuffer& img);

}  // namespace anonact
