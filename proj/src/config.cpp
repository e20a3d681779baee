#include "anonact/config.hpp"

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

namespace anonact {

using nlohmann::json;

namespace {

void require_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config: bad type for '") + key + "'");
  }
}

void apply_profile(ExperimentConfig& cfg, const std::string& profile) {
  if (profile == "desk") {
    cfg.modifier = {32, 16, 2};
    cfg.classifier = {32, 32, 16, 64, 4};
    cfg.detector.base_channels = 16;
    cfg.detector.anchor_scales = {16.0, 32.0, 64.0};
    cfg.dataset.frame_short_side = 0;
  } else if (profile == "jhmdb") {
    cfg.modifier = {256, 64, 9};
    cfg.classifier = {112, 96, 32, 128, 4};
    cfg.detector.num_classes = 21;
    cfg.detector.base_channels = 64;
    cfg.detector.anchor_scales = {64.0, 128.0, 256.0};
    cfg.dataset.frame_short_side = 340;
  } else if (profile == "daly") {
    cfg.modifier = {256, 64, 9};
    cfg.classifier = {112, 96, 32, 128, 4};
    cfg.detector.num_classes = 10;
    cfg.detector.base_channels = 64;
    cfg.detector.anchor_scales = {64.0, 128.0, 256.0};
    cfg.dataset.frame_short_side = 600;
  } else {
    throw ConfigError("config: unknown profile '" + profile + "' (want desk, jhmdb, or daly)");
  }
}

void env_override(std::string& value, const char* name) {
  if (const char* v = std::getenv(name); v && *v) value = v;
}

}  // namespace

ExperimentConfig load_experiment_config(const std::string& path, bool check_paths) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }

  require_keys(j, path,
               {"seed", "output_dir", "profile", "dataset", "training", "modifier", "classifier", "detector", "eval",
                "anonymizers"});

  ExperimentConfig cfg;
  if (j.contains("profile")) apply_profile(cfg, j.at("profile").get<std::string>());

  read(j, "seed", cfg.seed);
  read(j, "output_dir", cfg.output_dir);

  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    require_keys(d, "dataset", {"image_root", "faces", "frames_train", "frames_eval", "pairs", "frame_short_side"});
    read(d, "image_root", cfg.dataset.image_root);
    read(d, "faces", cfg.dataset.faces);
    read(d, "frames_train", cfg.dataset.frames_train);
    read(d, "frames_eval", cfg.dataset.frames_eval);
    read(d, "pairs", cfg.dataset.pairs);
    read(d, "frame_short_side", cfg.dataset.frame_short_side);
  }

  if (j.contains("training")) {
    const json& t = j.at("training");
    require_keys(t, "training",
                 {"t1", "t2", "lambda_l1", "lr_detector", "lr_modifier", "lr_classifier", "adam_beta1", "adam_beta2",
                  "epochs", "lr_drop_epoch", "face_batch", "frame_batch", "modifier_objective", "margin_anneal_steps",
                  "plateau_window", "d_warmup", "checkpoint_every", "face_score_threshold", "enlarge_factor"});
    read(t, "t1", cfg.training.t1);
    read(t, "t2", cfg.training.t2);
    read(t, "lambda_l1", cfg.training.lambda_l1);
    read(t, "lr_detector", cfg.training.lr_detector);
    read(t, "lr_modifier", cfg.training.lr_modifier);
    read(t, "lr_classifier", cfg.training.lr_classifier);
    read(t, "adam_beta1", cfg.training.adam_beta1);
    read(t, "adam_beta2", cfg.training.adam_beta2);
    read(t, "epochs", cfg.training.epochs);
    read(t, "lr_drop_epoch", cfg.training.lr_drop_epoch);
    read(t, "face_batch", cfg.training.face_batch);
    read(t, "frame_batch", cfg.training.frame_batch);
    read(t, "margin_anneal_steps", cfg.training.margin_anneal_steps);
    read(t, "plateau_window", cfg.training.plateau_window);
    read(t, "d_warmup", cfg.training.d_warmup);
    read(t, "checkpoint_every", cfg.training.checkpoint_every);
    read(t, "face_score_threshold", cfg.training.face_score_threshold);
    read(t, "enlarge_factor", cfg.training.enlarge_factor);
    if (t.contains("modifier_objective")) {
      const std::string mo = t.at("modifier_objective").get<std::string>();
      if (mo == "gradient_ascent")
        cfg.training.modifier_objective = ModifierObjective::GradientAscent;
      else if (mo == "random_target")
        cfg.training.modifier_objective = ModifierObjective::RandomTarget;
      else
        throw ConfigError("config: modifier_objective must be gradient_ascent or random_target");
    }
    if (cfg.training.t1 < 0 || cfg.training.t2 < 0) throw ConfigError("config: iteration counts must be >= 0");
    if (cfg.training.lr_detector <= 0 || cfg.training.lr_modifier <= 0 || cfg.training.lr_classifier <= 0)
      throw ConfigError("config: learning rates must be positive");
    if (cfg.training.lambda_l1 < 0) throw ConfigError("config: lambda_l1 must be >= 0");
    if (cfg.training.face_batch < 1 || cfg.training.frame_batch < 0)
      throw ConfigError("config: batch sizes out of range");
    if (cfg.training.face_score_threshold < 0 || cfg.training.face_score_threshold > 1)
      throw ConfigError("config: face_score_threshold must be in [0,1]");
  }

  if (j.contains("modifier")) {
    const json& m = j.at("modifier");
    require_keys(m, "modifier", {"work_res", "base_channels", "residual_blocks"});
    read(m, "work_res", cfg.modifier.work_res);
    read(m, "base_channels", cfg.modifier.base_channels);
    read(m, "residual_blocks", cfg.modifier.residual_blocks);
    if (cfg.modifier.work_res < 4 || cfg.modifier.work_res % 4 != 0)
      throw ConfigError("config: modifier work_res must be a positive multiple of 4");
    if (cfg.modifier.residual_blocks < 1) throw ConfigError("config: residual_blocks must be >= 1");
  }

  if (j.contains("classifier")) {
    const json& c = j.at("classifier");
    require_keys(c, "classifier", {"input_h", "input_w", "base_channels", "embed_dim", "margin"});
    read(c, "input_h", cfg.classifier.input_h);
    read(c, "input_w", cfg.classifier.input_w);
    read(c, "base_channels", cfg.classifier.base_channels);
    read(c, "embed_dim", cfg.classifier.embed_dim);
    read(c, "margin", cfg.classifier.margin);
    if (cfg.classifier.margin < 1) throw ConfigError("config: classifier margin must be >= 1");
    if (cfg.classifier.input_h % 16 != 0 || cfg.classifier.input_w % 16 != 0)
      throw ConfigError("config: classifier input extents must be divisible by 16");
  }

  if (j.contains("detector")) {
    const json& d = j.at("detector");
    require_keys(d, "detector", {"num_classes", "base_channels", "anchor_scales", "anchor_ratios", "head_dim"});
    read(d, "num_classes", cfg.detector.num_classes);
    read(d, "base_channels", cfg.detector.base_channels);
    read(d, "anchor_scales", cfg.detector.anchor_scales);
    read(d, "anchor_ratios", cfg.detector.anchor_ratios);
    read(d, "head_dim", cfg.detector.head_dim);
    if (cfg.detector.num_classes < 1) throw ConfigError("config: detector num_classes must be >= 1");
    if (cfg.detector.anchor_scales.empty() || cfg.detector.anchor_ratios.empty())
      throw ConfigError("config: detector needs anchor scales and ratios");
  }

  if (j.contains("eval")) {
    const json& e = j.at("eval");
    require_keys(e, "eval", {"score_thresh", "nms_iou", "map_iou"});
    read(e, "score_thresh", cfg.eval.score_thresh);
    read(e, "nms_iou", cfg.eval.nms_iou);
    read(e, "map_iou", cfg.eval.map_iou);
    if (cfg.eval.map_iou <= 0.0 || cfg.eval.map_iou > 1.0) throw ConfigError("config: map_iou must be in (0,1]");
  }

  if (j.contains("anonymizers")) {
    for (const auto& a : j.at("anonymizers")) {
      require_keys(a, "anonymizers[]", {"method", "param", "seed"});
      try {
        cfg.anonymizers.push_back(AnonymizerSpec::parse(a.at("method").get<std::string>(), a.value("param", 0.0),
                                                        a.value("seed", 0ULL)));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
      }
      cfg.anonymizers.back().enlarge = cfg.training.enlarge_factor;
    }
  }

  env_override(cfg.dataset.image_root, "ANONACT_IMAGE_ROOT");
  env_override(cfg.dataset.faces, "ANONACT_FACES");
  env_override(cfg.dataset.frames_train, "ANONACT_FRAMES_TRAIN");
  env_override(cfg.dataset.frames_eval, "ANONACT_FRAMES_EVAL");
  env_override(cfg.dataset.pairs, "ANONACT_PAIRS");
  env_override(cfg.output_dir, "ANONACT_OUTPUT_DIR");

  if (check_paths) {
    for (const auto& [label, p] : {std::pair<const char*, std::string>{"faces", cfg.dataset.faces},
                                   {"frames_train", cfg.dataset.frames_train},
                                   {"frames_eval", cfg.dataset.frames_eval},
                                   {"pairs", cfg.dataset.pairs}}) {
      if (!p.empty() && !std::filesystem::exists(p))
        throw ConfigError(std::string("config: dataset.") + label + " path does not exist: " + p);
    }
  }
  return cfg;
}

}  // namespace anonact
