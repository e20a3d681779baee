#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "anonact/image.hpp"
#include "anonact/image_ops.hpp"

namespace anonact {

enum class AnonMethod { None, Blur, Mask, Noise, Superpixel, Edge, Learned };

struct AnonymizerSpec {
  AnonMethod method = AnonMethod::None;
  double param = 0.0;       // blur target side s, noise variance, superpixel count k
  std::uint64_t seed = 0;   // noise only
  double enlarge = 1.6;     // face box enlargement before modification

  static AnonymizerSpec parse(const std::string& method, double param, std::uint64_t seed);
  std::string label() const;  // e.g. "blur8", "noise0.1"
};

AnonMethod parse_method(const std::string& name);
std::string method_name(AnonMethod m);

// Each baseline preserves shape and [0,1] range and is deterministic
// given its seed.
ImageBuffer anonymize_blur(const ImageBuffer& crop, int s);
ImageBuffer anonymize_mask(const ImageBuffer& crop);
ImageBuffer anonymize_noise(const ImageBuffer& crop, double var, std::uint64_t seed);
ImageBuffer anonymize_superpixel(const ImageBuffer& crop, int k);
ImageBuffer anonymize_edge(const ImageBuffer& crop);

// Area-average downsample to s x s (exact box filter, fractional coverage).
ImageBuffer area_downsample(const ImageBuffer& img, int s);

// SLIC-style segmentation over (L,a,b,x,y); returns per-pixel segment ids
// and the number of segments. Fixed 10 iterations, deterministic grid init.
std::vector<int> slic_segments(const ImageBuffer& img, int k, int* n_segments);

// sRGB -> CIELab (D65)
void rgb_to_lab(double r, double g, double b, double* L, double* a, double* bb);

// Applies `spec` to every face box: enlarge, crop, modify, composite back.
// Baselines operate on the exact rasterized region; the learned method crops
// through the sampling grid at `work_res` and runs `modifier`.
ImageBuffer apply_anonymizer(const ImageBuffer& frame, const std::vector<Box>& faces, const AnonymizerSpec& spec,
                             const std::function<Var(const Var&)>* modifier = nullptr, int work_res = 0);

}  // namespace anonact
