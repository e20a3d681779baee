#pragma once

#include <cstdint>
#include <string>

#include "anonact/manifest.hpp"
#include "anonact/rng.hpp"

namespace anonact {

// Procedural stand-in for the face and action datasets. Identity is carried
// by face/hair colors (with render jitter per sample); the action class is
// carried by a stripe pattern drawn over the face region, so that destroying
// the face area destroys the class evidence while the geometry survives
// structure-preserving modification.
struct SyntheticSpec {
  int n_identities = 20;
  int n_faces = 200;  // total face images, spread round-robin over identities
  int n_frames = 100;  // split into train/eval by eval_fraction
  int n_classes = 3;
  int face_image_size = 32;
  int frame_size = 96;
  double eval_fraction = 0.2;
  int n_pairs = 120;  // half positive, half negative
  std::uint64_t seed = 0;
};

struct SyntheticPaths {
  std::string faces_manifest;
  std::string frames_train_manifest;
  std::string frames_eval_manifest;
  std::string pairs_manifest;
};

SyntheticPaths make_synthetic(const std::string& out_dir, const SyntheticSpec& spec);

// Exposed for tests and tooling: deterministic render of one face sample.
ImageBuffer render_face(const SyntheticSpec& spec, int identity, Rng& sample_rng);

}  // namespace anonact
