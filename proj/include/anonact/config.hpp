#pragma once

#include <string>
#include <vector>

#include "anonact/anonymizers.hpp"
#include "anonact/face_identity.hpp"
#include "anonact/modifier_net.hpp"
#include "anonact/trainer.hpp"

namespace anonact {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetConfig {
  std::string image_root;
  std::string faces;
  std::string frames_train;
  std::string frames_eval;
  std::string pairs;
  int frame_short_side = 0;  // 0 = native resolution
};

struct EvalConfig {
  double score_thresh = 0.05;
  double nms_iou = 0.5;
  double map_iou = 0.5;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  DatasetConfig dataset;
  TrainingConfig training;
  ModifierConfig modifier{32, 16, 2};                 // desk profile defaults
  FaceClassifierConfig classifier{32, 32, 16, 64, 4};
  DetectorConfig detector = [] {
    DetectorConfig d;
    d.base_channels = 16;
    return d;
  }();
  EvalConfig eval;
  std::vector<AnonymizerSpec> anonymizers;
};

// Strict loader: unknown keys are rejected, types are checked, and the
// dataset paths named in the file must exist. Profile presets ("desk",
// "jhmdb", "daly") apply before explicit keys. Environment variables
// override paths only: ANONACT_IMAGE_ROOT, ANONACT_FACES,
// ANONACT_FRAMES_TRAIN, ANONACT_FRAMES_EVAL, ANONACT_PAIRS,
// ANONACT_OUTPUT_DIR.
ExperimentConfig load_experiment_config(const std::string& path, bool check_paths = true);

}  // namespace anonact
