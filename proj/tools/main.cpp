// anonact: adversarial face anonymization with action detection.
//
// Verbs: train, anonymize, evaluate, make-synthetic, ablate-d.
// Exit codes: 0 success, 2 config error, 3 runtime abort.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "anonact/checkpoint.hpp"
#include "anonact/config.hpp"
#include "anonact/evaluate.hpp"
#include "anonact/image_ops.hpp"
#include "anonact/ppm_io.hpp"
#include "anonact/synthetic.hpp"
#include "anonact/trainer.hpp"

namespace {

using namespace anonact;

struct Nets {
  std::unique_ptr<ModifierNetwork> m;
  std::unique_ptr<FaceClassifier> d;
  std::unique_ptr<DetectorNetwork> a;
};

Nets build_nets(const ExperimentConfig& cfg, int num_identities) {
  Nets n;
  Rng rng(cfg.seed ^ 0xab12cd34ULL);
  n.m = std::make_unique<ModifierNetwork>(cfg.modifier, rng);
  n.d = std::make_unique<FaceClassifier>(cfg.classifier, num_identities, rng);
  n.a = std::make_unique<DetectorNetwork>(cfg.detector, rng);
  return n;
}

Nets load_nets(const ExperimentConfig& cfg, const std::string& ckpt_dir) {
  using nlohmann::json;
  const std::string echo = checkpoint_config_echo(ckpt_dir + "/classifier.ckpt");
  json j = json::parse(echo);
  const int num_identities = j.at("classifier").at("identities").get<int>();
  Nets n = build_nets(cfg, num_identities);
  ParamList mp = n.m->parameters(), dp = n.d->parameters(), ap = n.a->parameters();
  load_checkpoint(ckpt_dir + "/modifier.ckpt", mp);
  load_checkpoint(ckpt_dir + "/classifier.ckpt", dp);
  load_checkpoint(ckpt_dir + "/detector.ckpt", ap);
  return n;
}

int cmd_make_synthetic(const std::string& out, int identities, int faces, int frames, int classes, std::uint64_t seed,
                       int face_size, int frame_size) {
  SyntheticSpec spec;
  spec.n_identities = identities;
  spec.n_faces = faces;
  spec.n_frames = frames;
  spec.n_classes = classes;
  spec.seed = seed;
  spec.face_image_size = face_size;
  spec.frame_size = frame_size;
  SyntheticPaths paths = make_synthetic(out, spec);
  std::cout << "wrote " << paths.faces_manifest << "\n"
            << "wrote " << paths.frames_train_manifest << "\n"
            << "wrote " << paths.frames_eval_manifest << "\n"
            << "wrote " << paths.pairs_manifest << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, std::int64_t seed_override) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
  cfg.training.seed = cfg.seed;
  if (cfg.dataset.faces.empty() || cfg.dataset.frames_train.empty())
    throw ConfigError("train: config must name dataset.faces and dataset.frames_train");

  auto faces = load_faces_manifest(cfg.dataset.faces);
  auto frames = load_frames_manifest(cfg.dataset.frames_train);
  Nets nets = build_nets(cfg, identity_count(faces));

  AdversarialTrainer trainer(cfg.training, *nets.m, *nets.d, *nets.a, cfg.dataset.image_root);
  TrainingState state = trainer.run(faces, frames, cfg.output_dir);
  std::cout << "phase1 steps: " << state.phase1_steps << "\nphase2 steps: " << state.phase2_steps << "\n"
            << "checkpoints and loss_history.csv in " << cfg.output_dir << "\n";
  return 0;
}

int cmd_anonymize(const std::string& config_path, const std::string& method, double param, const std::string& frames_path,
                  const std::string& out_dir, const std::string& ckpt_dir, std::int64_t seed_override) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
  AnonymizerSpec spec = AnonymizerSpec::parse(method, param, cfg.seed);
  spec.enlarge = cfg.training.enlarge_factor;

  const std::string manifest = frames_path.empty() ? cfg.dataset.frames_eval : frames_path;
  if (manifest.empty()) throw ConfigError("anonymize: no frames manifest given");
  auto frames = load_frames_manifest(manifest);

  Nets nets;
  std::function<Var(const Var&)> mf;
  if (spec.method == AnonMethod::Learned) {
    if (ckpt_dir.empty()) throw ConfigError("anonymize: learned method requires --checkpoint-dir");
    nets = load_nets(cfg, ckpt_dir);
    mf = [&nets](const Var& crop) {
      Var batch = reshape(crop, {1, 3, crop.value().dim(1), crop.value().dim(2)});
      return reshape(nets.m->forward(batch), {3, crop.value().dim(1), crop.value().dim(2)});
    };
  }

  std::filesystem::create_directories(out_dir);
  nlohmann::json sidecar = nlohmann::json::array();
  for (const auto& rec : frames) {
    ImageBuffer img = load_image(cfg.dataset.image_root.empty() ? rec.image_ref
                                                                : cfg.dataset.image_root + "/" + rec.image_ref);
    std::vector<Box> boxes;
    for (const auto& det : filter_face_detections(rec.faces, cfg.training.face_score_threshold))
      boxes.push_back(det.box);
    ImageBuffer out = apply_anonymizer(img, boxes, spec, mf ? &mf : nullptr,
                                       nets.m ? nets.m->config().work_res : 0);
    const std::string name = std::filesystem::path(rec.image_ref).filename().string();
    save_image(out_dir + "/" + name, out);
    nlohmann::json entry;
    entry["image"] = name;
    entry["boxes"] = nlohmann::json::array();
    for (const Box& b : boxes) {
      const Box big = enlarge_box(b, spec.enlarge, img.width(), img.height());
      entry["boxes"].push_back({big.x1, big.y1, big.x2, big.y2});
    }
    sidecar.push_back(entry);
  }
  std::ofstream side(out_dir + "/processed_boxes.json");
  side << sidecar.dump(2) << "\n";
  std::cout << "anonymized " << frames.size() << " images into " << out_dir << "\n";
  return 0;
}

int cmd_evaluate(const std::string& config_path, const std::string& ckpt_dir, const std::vector<std::string>& methods,
                 const std::string& out_dir_flag, std::int64_t seed_override) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
  if (cfg.dataset.frames_eval.empty() || cfg.dataset.pairs.empty())
    throw ConfigError("evaluate: config must name dataset.frames_eval and dataset.pairs");
  const std::string ckpts = ckpt_dir.empty() ? cfg.output_dir : ckpt_dir;
  Nets nets = load_nets(cfg, ckpts);

  auto frames = load_frames_manifest(cfg.dataset.frames_eval);
  auto pairs = load_pairs_manifest(cfg.dataset.pairs);

  std::vector<AnonymizerSpec> specs;
  if (!methods.empty()) {
    for (const auto& mstr : methods) {
      auto spec = AnonymizerSpec::parse(mstr, 0.0, cfg.seed);
      spec.enlarge = cfg.training.enlarge_factor;
      specs.push_back(spec);
    }
  } else if (!cfg.anonymizers.empty()) {
    specs = cfg.anonymizers;
  } else {
    specs.push_back(AnonymizerSpec::parse("none", 0, cfg.seed));
    specs.push_back(AnonymizerSpec::parse("learned", 0, cfg.seed));
  }

  const std::string out_dir = out_dir_flag.empty() ? cfg.output_dir : out_dir_flag;
  std::filesystem::create_directories(out_dir);

  std::vector<TradeoffPoint> points;
  std::vector<std::pair<std::string, APResult>> per_class_rows;
  for (const auto& spec : specs) {
    std::vector<std::vector<Detection>> dets;
    APResult ap = evaluate_map(frames, cfg.dataset.image_root, spec, nets.m.get(), *nets.a, cfg.eval,
                               cfg.training.face_score_threshold, &dets);
    VerifyResult vr = evaluate_verification(pairs, cfg.dataset.image_root, spec, nets.m.get(), *nets.d);
    points.push_back({spec.label(), 1.0 - vr.accuracy, ap.map});
    per_class_rows.emplace_back(spec.label(), ap);
    std::vector<std::string> refs;
    for (const auto& r : frames) refs.push_back(r.image_ref);
    save_detections(out_dir + "/dets_" + spec.label() + ".jsonl", refs, dets);
    std::cout << spec.label() << ": verification_error=" << 1.0 - vr.accuracy << " map=" << ap.map << "\n";
  }
  write_tradeoff_csv(out_dir + "/tradeoff.csv", points);
  write_per_class_csv(out_dir + "/per_class.csv", per_class_rows, cfg.detector.num_classes);
  std::cout << "wrote " << out_dir << "/tradeoff.csv and per_class.csv\n";
  return 0;
}

int cmd_ablate_d(const std::string& config_path, const std::string& ckpt_dir, const std::string& out_dir_flag,
                 std::int64_t seed_override) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
  if (cfg.dataset.pairs.empty()) throw ConfigError("ablate-d: config must name dataset.pairs");
  const std::string ckpts = ckpt_dir.empty() ? cfg.output_dir : ckpt_dir;
  Nets nets = load_nets(cfg, ckpts);
  auto pairs = load_pairs_manifest(cfg.dataset.pairs);

  auto none = AnonymizerSpec::parse("none", 0, cfg.seed);
  auto learned = AnonymizerSpec::parse("learned", 0, cfg.seed);
  VerifyResult orig = evaluate_verification(pairs, cfg.dataset.image_root, none, nets.m.get(), *nets.d);
  VerifyResult modified = evaluate_verification(pairs, cfg.dataset.image_root, learned, nets.m.get(), *nets.d);

  std::cout << "original_accuracy=" << orig.accuracy << " modified_accuracy=" << modified.accuracy << "\n";
  const std::string out_dir = out_dir_flag.empty() ? cfg.output_dir : out_dir_flag;
  std::filesystem::create_directories(out_dir);
  append_tradeoff_rows(out_dir + "/tradeoff.csv", {{"d_on_original", 1.0 - orig.accuracy},
                                                   {"d_on_modified", 1.0 - modified.accuracy}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adversarial face anonymization with action detection"};
  app.require_subcommand(1);

  std::string config_path, method = "none", frames_path, out_dir, ckpt_dir;
  std::vector<std::string> methods;
  std::int64_t seed_flag = -1;
  double param = 0.0;

  auto* mk = app.add_subcommand("make-synthetic", "generate a procedural dataset");
  std::string mk_out = "data";
  int mk_ids = 20, mk_faces = 200, mk_frames = 100, mk_classes = 3, mk_face_size = 32, mk_frame_size = 96;
  std::uint64_t mk_seed = 0;
  mk->add_option("--out", mk_out, "output directory");
  mk->add_option("--identities", mk_ids, "number of identities (>= 2)");
  mk->add_option("--faces", mk_faces, "number of face images");
  mk->add_option("--frames", mk_frames, "number of action frames");
  mk->add_option("--classes", mk_classes, "number of action classes");
  mk->add_option("--face-size", mk_face_size, "face image side in pixels");
  mk->add_option("--frame-size", mk_frame_size, "frame side in pixels");
  mk->add_option("--seed", mk_seed, "generator seed");

  auto* tr = app.add_subcommand("train", "run adversarial training (phases 1 and 2)");
  tr->add_option("--config", config_path, "experiment config JSON")->required();
  tr->add_option("--seed", seed_flag, "seed override");

  auto* an = app.add_subcommand("anonymize", "apply an anonymizer to manifest frames");
  an->add_option("--config", config_path, "experiment config JSON")->required();
  an->add_option("--method", method, "none|blur|mask|noise|superpixel|edge|learned")->required();
  an->add_option("--param", param, "method parameter (blur side, noise variance, superpixel count)");
  an->add_option("--frames", frames_path, "frames manifest (defaults to dataset.frames_eval)");
  an->add_option("--out", out_dir, "output directory")->required();
  an->add_option("--checkpoint-dir", ckpt_dir, "checkpoint directory (learned method)");
  an->add_option("--seed", seed_flag, "seed override");

  auto* ev = app.add_subcommand("evaluate", "privacy/utility tradeoff over anonymizers");
  ev->add_option("--config", config_path, "experiment config JSON")->required();
  ev->add_option("--checkpoint-dir", ckpt_dir, "checkpoint directory (defaults to output_dir)");
  ev->add_option("--method", methods, "methods to evaluate (repeatable)");
  ev->add_option("--out", out_dir, "report directory (defaults to output_dir)");
  ev->add_option("--seed", seed_flag, "seed override");

  auto* ab = app.add_subcommand("ablate-d", "classifier accuracy on original vs modified pairs");
  ab->add_option("--config", config_path, "experiment config JSON")->required();
  ab->add_option("--checkpoint-dir", ckpt_dir, "checkpoint directory (defaults to output_dir)");
  ab->add_option("--out", out_dir, "report directory (defaults to output_dir)");
  ab->add_option("--seed", seed_flag, "seed override");

  CLI11_PARSE(app, argc, argv);

  try {
    if (mk->parsed())
      return cmd_make_synthetic(mk_out, mk_ids, mk_faces, mk_frames, mk_classes, mk_seed, mk_face_size, mk_frame_size);
    if (tr->parsed()) return cmd_train(config_path, seed_flag);
    if (an->parsed()) return cmd_anonymize(config_path, method, param, frames_path, out_dir, ckpt_dir, seed_flag);
    if (ev->parsed()) return cmd_evaluate(config_path, ckpt_dir, methods, out_dir, seed_flag);
    if (ab->parsed()) return cmd_ablate_d(config_path, ckpt_dir, out_dir, seed_flag);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ManifestError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const TrainAbort& e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
