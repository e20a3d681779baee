#include "anonact/evaluate.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "anonact/image_ops.hpp"
#include "anonact/ppm_io.hpp"

namespace anonact {

namespace {

std::string join_path(const std::string& root, const std::string& ref) {
  if (root.empty() || (!ref.empty() && ref.front() == '/')) return ref;
  return root + "/" + ref;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

void atomic_write(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error(tmp + ": cannot open for writing");
    f << content;
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw std::runtime_error(path + ": rename failed");
}

std::function<Var(const Var&)> modifier_fn(const ModifierNetwork* m) {
  return [m](const Var& crop) {
    Var batch = reshape(crop, {1, 3, crop.value().dim(1), crop.value().dim(2)});
    return reshape(m->forward(batch), {3, crop.value().dim(1), crop.value().dim(2)});
  };
}

}  // namespace

APResult evaluate_map(const std::vector<FrameRecord>& frames, const std::string& image_root, const AnonymizerSpec& spec,
                      const ModifierNetwork* m, const DetectorNetwork& a, const EvalConfig& eval,
                      double face_score_threshold, std::vector<std::vector<Detection>>* dets_out) {
  std::vector<std::vector<Detection>> dets;
  std::vector<std::vector<ActionInstance>> gts;
  std::function<Var(const Var&)> mf;
  if (spec.method == AnonMethod::Learned) {
    if (!m) throw std::invalid_argument("evaluate: learned method requires a modifier checkpoint");
    mf = modifier_fn(m);
  }
  for (const auto& rec : frames) {
    ImageBuffer img = load_image(join_path(image_root, rec.image_ref));
    std::vector<Box> boxes;
    for (const auto& det : filter_face_detections(rec.faces, face_score_threshold)) boxes.push_back(det.box);
    ImageBuffer anon = apply_anonymizer(img, boxes, spec, mf ? &mf : nullptr, m ? m->config().work_res : 0);
    dets.push_back(a.detect(anon, eval.score_thresh, eval.nms_iou));
    gts.push_back(rec.actions);
  }
  APResult res = mean_average_precision(dets, gts, eval.map_iou);
  if (dets_out) *dets_out = std::move(dets);
  return res;
}

ImageBuffer anonymize_face_image(const ImageBuffer& img, const AnonymizerSpec& spec, const ModifierNetwork* m) {
  if (spec.method == AnonMethod::None) return img;
  const Box full{0.0, 0.0, static_cast<double>(img.width()), static_cast<double>(img.height())};
  std::function<Var(const Var&)> mf;
  if (spec.method == AnonMethod::Learned) {
    if (!m) throw std::invalid_argument("anonymize: learned method requires a modifier checkpoint");
    mf = modifier_fn(m);
  }
  AnonymizerSpec whole = spec;
  whole.enlarge = 1.0;  // the image is already the face region
  return apply_anonymizer(img, {full}, whole, mf ? &mf : nullptr, m ? m->config().work_res : 0);
}

VerifyResult evaluate_verification(const std::vector<PairRecord>& pairs, const std::string& image_root,
                                   const AnonymizerSpec& spec, const ModifierNetwork* m, const FaceClassifier& d) {
  std::map<std::string, std::vector<double>> cache;
  PairEmbedder embedder = [&](const std::string& ref) {
    auto it = cache.find(ref);
    if (it != cache.end()) return it->second;
    ImageBuffer img = load_image(join_path(image_root, ref));
    img = anonymize_face_image(img, spec, m);
    NoGradGuard ng;
    Var v = constant(img.to_chw());
    const Box full{0.0, 0.0, static_cast<double>(img.width()), static_cast<double>(img.height())};
    Var crop = grid_sample(v, make_crop_grid(full, d.config().input_h, d.config().input_w));
    std::vector<double> e = d.embed(ImageBuffer::from_chw(crop.value(), /*clamp=*/false));
    cache.emplace(ref, e);
    return e;
  };
  return verify_pairs(pairs, embedder);
}

void write_tradeoff_csv(const std::string& path, const std::vector<TradeoffPoint>& points) {
  std::string out = "method,verification_error,map\n";
  for (const auto& p : points) out += p.method + "," + fmt_double(p.verification_error) + "," + fmt_double(p.map) + "\n";
  atomic_write(path, out);
}

void append_tradeoff_rows(const std::string& path, const std::vector<std::pair<std::string, double>>& labeled_errors) {
  std::string content;
  if (std::filesystem::exists(path)) {
    std::ifstream in(path, std::ios::binary);
    content.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  } else {
    content = "method,verification_error,map\n";
  }
  for (const auto& [label, err] : labeled_errors) content += label + "," + fmt_double(err) + ",\n";
  atomic_write(path, content);
}

void write_per_class_csv(const std::string& path, const std::vector<std::pair<std::string, APResult>>& rows,
                         int num_classes) {
  std::string out = "method";
  for (int c = 0; c < num_classes; ++c) out += ",class_" + std::to_string(c);
  out += ",map\n";
  for (const auto& [method, ap] : rows) {
    out += method;
    for (int c = 0; c < num_classes; ++c) {
      auto it = ap.per_class.find(c);
      out += ",";
      if (it != ap.per_class.end()) out += fmt_double(it->second);
    }
    out += "," + fmt_double(ap.map) + "\n";
  }
  atomic_write(path, out);
}

}  // namespace anonact
