#include "anonact/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "anonact/checkpoint.hpp"
#include "anonact/image_ops.hpp"
#include "anonact/ppm_io.hpp"

namespace anonact {

using nlohmann::json;

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

json bundle_json(const LossBundle& b) {
  json j;
  auto put = [&j](const char* k, const std::optional<double>& v) {
    if (v)
      j[k] = *v;
    else
      j[k] = nullptr;
  };
  put("rpn_cls", b.rpn_cls);
  put("rpn_reg", b.rpn_reg);
  put("rcnn_cls", b.rcnn_cls);
  put("rcnn_reg", b.rcnn_reg);
  put("adv", b.adv);
  put("l1", b.l1);
  return j;
}

LossBundle bundle_from_json(const json& j) {
  LossBundle b;
  auto get = [&j](const char* k) -> std::optional<double> {
    if (!j.contains(k) || j.at(k).is_null()) return std::nullopt;
    return j.at(k).get<double>();
  };
  b.rpn_cls = get("rpn_cls");
  b.rpn_reg = get("rpn_reg");
  b.rcnn_cls = get("rcnn_cls");
  b.rcnn_reg = get("rcnn_reg");
  b.adv = get("adv");
  b.l1 = get("l1");
  return b;
}

bool opt_eq(const std::optional<double>& a, const std::optional<double>& b) {
  if (a.has_value() != b.has_value()) return false;
  return !a || *a == *b;
}

}  // namespace

std::string TrainingState::to_json() const {
  json j;
  j["phase1_steps"] = phase1_steps;
  j["phase2_steps"] = phase2_steps;
  j["rng_state"] = rng_state;
  j["checkpoints"] = {{"modifier", modifier_ckpt}, {"classifier", classifier_ckpt}, {"detector", detector_ckpt}};
  j["history"] = json::array();
  for (const auto& r : history)
    j["history"].push_back({{"iter", r.iter}, {"phase", r.phase}, {"losses", bundle_json(r.losses)}});
  return j.dump(2);
}

TrainingState TrainingState::from_json(const std::string& text) {
  json j = json::parse(text);
  TrainingState s;
  s.phase1_steps = j.at("phase1_steps").get<int>();
  s.phase2_steps = j.at("phase2_steps").get<int>();
  s.rng_state = j.at("rng_state").get<std::string>();
  s.modifier_ckpt = j.at("checkpoints").at("modifier").get<std::string>();
  s.classifier_ckpt = j.at("checkpoints").at("classifier").get<std::string>();
  s.detector_ckpt = j.at("checkpoints").at("detector").get<std::string>();
  for (const auto& r : j.at("history")) {
    StepRecord rec;
    rec.iter = r.at("iter").get<int>();
    rec.phase = r.at("phase").get<int>();
    rec.losses = bundle_from_json(r.at("losses"));
    s.history.push_back(rec);
  }
  return s;
}

bool TrainingState::operator==(const TrainingState& o) const {
  if (phase1_steps != o.phase1_steps || phase2_steps != o.phase2_steps || rng_state != o.rng_state ||
      modifier_ckpt != o.modifier_ckpt || classifier_ckpt != o.classifier_ckpt || detector_ckpt != o.detector_ckpt ||
      history.size() != o.history.size())
    return false;
  for (std::size_t i = 0; i < history.size(); ++i) {
    const auto& a = history[i];
    const auto& b = o.history[i];
    if (a.iter != b.iter || a.phase != b.phase) return false;
    if (!opt_eq(a.losses.rpn_cls, b.losses.rpn_cls) || !opt_eq(a.losses.rpn_reg, b.losses.rpn_reg) ||
        !opt_eq(a.losses.rcnn_cls, b.losses.rcnn_cls) || !opt_eq(a.losses.rcnn_reg, b.losses.rcnn_reg) ||
        !opt_eq(a.losses.adv, b.losses.adv) || !opt_eq(a.losses.l1, b.losses.l1))
      return false;
  }
  return true;
}

void write_loss_csv(const std::string& path, const std::vector<StepRecord>& history) {
  std::string out = "iter,phase,rpn_cls,rpn_reg,rcnn_cls,rcnn_reg,adv,l1,total\n";
  for (const auto& r : history) {
    auto cell = [](const std::optional<double>& v) { return v ? fmt_double(*v) : std::string(); };
    out += std::to_string(r.iter) + "," + std::to_string(r.phase) + "," + cell(r.losses.rpn_cls) + "," +
           cell(r.losses.rpn_reg) + "," + cell(r.losses.rcnn_cls) + "," + cell(r.losses.rcnn_reg) + "," +
           cell(r.losses.adv) + "," + cell(r.losses.l1) + "," + fmt_double(r.losses.total()) + "\n";
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error(tmp + ": cannot open for writing");
    f << out;
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw std::runtime_error(path + ": rename failed");
}

Var adversarial_combine(const Var& loss_modified, const Var& loss_original) {
  return neg(add(loss_modified, loss_original));
}

Var l1_loss_term(const Var& modified, const Var& original, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("l1: lambda must be non-negative");
  return scale(mean_all(abs_op(sub(modified, original))), lambda);
}

Var compose_modified_frame(const Var& frame_chw, const std::vector<Box>& faces, const ModifierNetwork& m,
                           double enlarge_factor) {
  const int h = frame_chw.value().dim(1), w = frame_chw.value().dim(2);
  const int wr = m.config().work_res;
  Var out = frame_chw;
  for (const Box& face : faces) {
    const Box big = enlarge_box(face, enlarge_factor, w, h);
    Var crop = grid_sample(out, make_crop_grid(big, wr, wr));
    Var crop_batch = reshape(crop, {1, 3, wr, wr});
    Var modified = reshape(m.forward(crop_batch), {3, wr, wr});
    out = paste_composite(out, big, modified);
  }
  return out;
}

AdversarialTrainer::AdversarialTrainer(const TrainingConfig& cfg, ModifierNetwork& m, FaceClassifier& d,
                                       DetectorNetwork& a, std::string image_root)
    : cfg_(cfg),
      m_(m),
      d_(d),
      a_(a),
      image_root_(std::move(image_root)),
      rng_(cfg.seed),
      opt_m_(m.parameters(), {cfg.lr_modifier, cfg.adam_beta1, cfg.adam_beta2, 1e-8}),
      opt_d_(d.parameters(), {cfg.lr_classifier, cfg.adam_beta1, cfg.adam_beta2, 1e-8}),
      opt_a_(a.parameters(), {cfg.lr_detector, cfg.adam_beta1, cfg.adam_beta2, 1e-8}) {
  if (cfg.t1 < 0 || cfg.t2 < 0) throw std::invalid_argument("trainer: iteration counts must be >= 0");
  if (cfg.lr_detector <= 0 || cfg.lr_modifier <= 0 || cfg.lr_classifier <= 0)
    throw std::invalid_argument("trainer: learning rates must be positive");
}

const ImageBuffer& AdversarialTrainer::image(const std::string& ref) {
  auto it = cache_.find(ref);
  if (it != cache_.end()) return it->second;
  return cache_.emplace(ref, load_image(join_path(image_root_, ref))).first->second;
}

double AdversarialTrainer::margin_blend() const {
  if (cfg_.margin_anneal_steps <= 0) return 1.0;
  return std::min(1.0, static_cast<double>(global_step_) / cfg_.margin_anneal_steps);
}

void AdversarialTrainer::apply_lr_schedule(int total_steps) {
  double s = 1.0;
  if (cfg_.epochs > 0 && total_steps > 0) {
    const int drop_step = static_cast<int>(
        std::ceil(static_cast<double>(total_steps) * cfg_.lr_drop_epoch / cfg_.epochs));
    if (global_step_ >= drop_step) s = 0.1;
  }
  opt_m_.set_lr_scale(s);
  opt_d_.set_lr_scale(s);
  opt_a_.set_lr_scale(s);
}

Var AdversarialTrainer::face_crop_const(const FaceRecord& rec, int out_h, int out_w) {
  const ImageBuffer& img = image(rec.image_ref);
  NoGradGuard ng;
  Var v = constant(img.to_chw());
  return grid_sample(v, make_crop_grid(rec.align_box, out_h, out_w));
}

namespace {
struct FaceBatch {
  Var mod_in;  // [B,3,wr,wr]
  Var d_in;    // [B,3,ih,iw] original faces at classifier resolution
  std::vector<int> ids;
};
}  // namespace

static FaceBatch build_face_batch(AdversarialTrainer& tr, const ModifierNetwork& m, const FaceClassifier& d,
                                  const std::vector<FaceRecord>& batch,
                                  Var (AdversarialTrainer::*crop)(const FaceRecord&, int, int)) {
  if (batch.empty()) throw std::invalid_argument("trainer: empty face batch");
  FaceBatch fb;
  std::vector<Var> mod_crops, d_crops;
  for (const auto& rec : batch) {
    mod_crops.push_back((tr.*crop)(rec, m.config().work_res, m.config().work_res));
    d_crops.push_back((tr.*crop)(rec, d.config().input_h, d.config().input_w));
    fb.ids.push_back(rec.identity);
  }
  NoGradGuard ng;
  fb.mod_in = stack_rows(mod_crops);
  fb.d_in = stack_rows(d_crops);
  return fb;
}

DStepResult AdversarialTrainer::step_update_d(const std::vector<FaceRecord>& face_batch) {
  FaceBatch fb = build_face_batch(*this, m_, d_, face_batch, &AdversarialTrainer::face_crop_const);
  const double blend = margin_blend();

  Var m_out_const;
  {
    NoGradGuard ng;  // M is frozen during the D update
    m_out_const = resize_bilinear(m_.forward(fb.mod_in), d_.config().input_h, d_.config().input_w);
  }

  opt_d_.zero();
  Var ce_mod = d_.classification_loss(m_out_const, fb.ids, blend);
  Var ce_orig = d_.classification_loss(fb.d_in, fb.ids, blend);
  Var d_loss = add(ce_mod, ce_orig);
  if (!std::isfinite(d_loss.value().item())) throw TrainAbort("non-finite loss in D update");
  backward(d_loss);
  opt_d_.step();
  d_.renormalize_head();

  DStepResult res;
  res.loss_modified = ce_mod.value().item();
  res.loss_original = ce_orig.value().item();
  res.losses.adv = -(res.loss_modified + res.loss_original);
  return res;
}

DetectorLossParts AdversarialTrainer::frame_losses(const FrameRecord& rec, bool modifier_tracked, Var*) {
  const ImageBuffer& img = image(rec.image_ref);
  std::vector<Box> boxes;
  for (const auto& det : filter_face_detections(rec.faces, cfg_.face_score_threshold)) boxes.push_back(det.box);
  Var frame = constant(img.to_chw());
  Var composited;
  if (modifier_tracked) {
    composited = compose_modified_frame(frame, boxes, m_, cfg_.enlarge_factor);
  } else {
    NoGradGuard ng;
    composited = compose_modified_frame(frame, boxes, m_, cfg_.enlarge_factor);
  }
  return a_.loss(composited, rec.actions, rng_);
}

MAStepResult AdversarialTrainer::step_update_ma(const std::vector<FaceRecord>& face_batch,
                                                const std::vector<FrameRecord>& frame_batch) {
  FaceBatch fb = build_face_batch(*this, m_, d_, face_batch, &AdversarialTrainer::face_crop_const);
  const double blend = margin_blend();
  const int ih = d_.config().input_h, iw = d_.config().input_w;

  MAStepResult res;
  res.ascent_dot = std::numeric_limits<double>::quiet_NaN();

  ParamList m_params = m_.parameters();
  ParamList d_params = d_.parameters();

  if (record_ascent_ && cfg_.modifier_objective == ModifierObjective::GradientAscent) {
    // independent gradient of the classification loss w.r.t. theta_M
    zero_grads(m_params);
    {
      Var ce = d_.classification_loss(resize_bilinear(m_.forward(fb.mod_in), ih, iw), fb.ids, blend);
      backward(ce);
    }
    std::vector<Tensor> g_ce;
    for (auto& p : m_params) g_ce.push_back(p.var.has_grad() ? p.var.grad() : Tensor(p.var.value().shape()));
    zero_grads(m_params);
    zero_grads(d_params);
    // gradient of the adversarial term as wired into the objective
    {
      Var adv = neg(d_.classification_loss(resize_bilinear(m_.forward(fb.mod_in), ih, iw), fb.ids, blend));
      backward(adv);
    }
    double dot = 0.0;
    for (std::size_t i = 0; i < m_params.size(); ++i) {
      const Tensor g_adv =
          m_params[i].var.has_grad() ? m_params[i].var.grad() : Tensor(m_params[i].var.value().shape());
      for (std::int64_t k = 0; k < g_adv.numel(); ++k) dot += (-g_adv[k]) * g_ce[i][k];
    }
    res.ascent_dot = dot;
    ascent_dots_.push_back(dot);
    zero_grads(m_params);
    zero_grads(d_params);
  }

  zero_grads(m_params);
  opt_a_.zero();

  Var m_out = m_.forward(fb.mod_in);
  Var m_out_d = resize_bilinear(m_out, ih, iw);

  Var adv_term;
  if (cfg_.modifier_objective == ModifierObjective::GradientAscent) {
    Var ce_mod = d_.classification_loss(m_out_d, fb.ids, blend);
    double ce_orig_val;
    {
      NoGradGuard ng;  // constant w.r.t. M
      ce_orig_val = d_.classification_loss(fb.d_in, fb.ids, blend).value().item();
    }
    adv_term = add_const(neg(ce_mod), -ce_orig_val);  // Eq. 2 value, gradient from the modified term only
  } else {
    // steer M toward a per-sample random wrong identity
    std::vector<int> targets(fb.ids.size());
    const int c = d_.identity_count();
    for (std::size_t i = 0; i < targets.size(); ++i) {
      if (c < 2) throw std::invalid_argument("random_target: needs at least two identities");
      int j = static_cast<int>(rng_.randint(c - 1));
      if (j >= fb.ids[i]) ++j;
      targets[i] = j;
    }
    adv_term = d_.classification_loss(m_out_d, targets, blend);
  }

  Var l1_term = l1_loss_term(m_out, fb.mod_in, cfg_.lambda_l1);

  Var objective = add(adv_term, l1_term);
  LossBundle bundle;
  if (!frame_batch.empty()) {
    Var det_sum;
    double rc = 0, rr = 0, cc = 0, cr = 0;
    for (std::size_t i = 0; i < frame_batch.size(); ++i) {
      DetectorLossParts lp = frame_losses(frame_batch[i], /*modifier_tracked=*/true, nullptr);
      Var frame_total = lp.sum();
      det_sum = det_sum.defined() ? add(det_sum, frame_total) : frame_total;
      rc += lp.rpn_cls.value().item();
      rr += lp.rpn_reg.value().item();
      cc += lp.rcnn_cls.value().item();
      cr += lp.rcnn_reg.value().item();
    }
    const double inv = 1.0 / static_cast<double>(frame_batch.size());
    bundle.rpn_cls = rc * inv;
    bundle.rpn_reg = rr * inv;
    bundle.rcnn_cls = cc * inv;
    bundle.rcnn_reg = cr * inv;
    objective = add(objective, scale(det_sum, inv));
  }
  bundle.adv = adv_term.value().item();
  bundle.l1 = l1_term.value().item();

  res.objective = objective.value().item();
  if (!std::isfinite(res.objective)) throw TrainAbort("non-finite loss in M,A update");
  backward(objective);
  opt_m_.step();
  opt_a_.step();
  zero_grads(d_params);  // D collected gradients through the adversarial term; it is frozen here

  res.losses = bundle;
  return res;
}

LossBundle AdversarialTrainer::step_finetune_a(const std::vector<FrameRecord>& frame_batch) {
  if (frame_batch.empty()) throw std::invalid_argument("trainer: empty frame batch");
  opt_a_.zero();
  Var det_sum;
  double rc = 0, rr = 0, cc = 0, cr = 0;
  for (const auto& rec : frame_batch) {
    DetectorLossParts lp = frame_losses(rec, /*modifier_tracked=*/false, nullptr);
    Var frame_total = lp.sum();
    det_sum = det_sum.defined() ? add(det_sum, frame_total) : frame_total;
    rc += lp.rpn_cls.value().item();
    rr += lp.rpn_reg.value().item();
    cc += lp.rcnn_cls.value().item();
    cr += lp.rcnn_reg.value().item();
  }
  const double inv = 1.0 / static_cast<double>(frame_batch.size());
  Var objective = scale(det_sum, inv);
  if (!std::isfinite(objective.value().item())) throw TrainAbort("non-finite loss in finetune");
  backward(objective);
  opt_a_.step();
  LossBundle b;
  b.rpn_cls = rc * inv;
  b.rpn_reg = rr * inv;
  b.rcnn_cls = cc * inv;
  b.rcnn_reg = cr * inv;
  return b;
}

TrainingState AdversarialTrainer::run(const std::vector<FaceRecord>& faces, const std::vector<FrameRecord>& frames,
                                      const std::string& out_dir) {
  if (faces.empty()) throw std::invalid_argument("trainer: empty face dataset");
  std::vector<FrameRecord> usable_frames;
  for (const auto& f : frames)
    if (!f.actions.empty()) usable_frames.push_back(f);  // Eq. 1 presumes ground truth
  if (cfg_.t1 + cfg_.t2 > 0 && usable_frames.empty())
    throw std::invalid_argument("trainer: no frames with action ground truth");

  std::filesystem::create_directories(out_dir);
  TrainingState state;
  state.modifier_ckpt = out_dir + "/modifier.ckpt";
  state.classifier_ckpt = out_dir + "/classifier.ckpt";
  state.detector_ckpt = out_dir + "/detector.ckpt";

  json echo;
  echo["modifier"] = {{"work_res", m_.config().work_res},
                      {"base_channels", m_.config().base_channels},
                      {"residual_blocks", m_.config().residual_blocks}};
  echo["classifier"] = {{"input_h", d_.config().input_h},
                        {"input_w", d_.config().input_w},
                        {"embed_dim", d_.config().embed_dim},
                        {"margin", d_.config().margin},
                        {"identities", d_.identity_count()}};
  echo["detector"] = {{"num_classes", a_.config().num_classes}, {"base_channels", a_.config().base_channels}};
  const std::string echo_s = echo.dump();

  auto save_all = [&]() {
    save_checkpoint(state.modifier_ckpt, m_.parameters(), echo_s);
    save_checkpoint(state.classifier_ckpt, d_.parameters(), echo_s);
    save_checkpoint(state.detector_ckpt, a_.parameters(), echo_s);
  };
  save_all();

  auto draw_faces = [&]() {
    std::vector<FaceRecord> batch;
    for (int i = 0; i < cfg_.face_batch; ++i)
      batch.push_back(faces[static_cast<std::size_t>(rng_.randint(static_cast<std::int64_t>(faces.size())))]);
    return batch;
  };
  auto draw_frames = [&]() {
    std::vector<FrameRecord> batch;
    for (int i = 0; i < cfg_.frame_batch; ++i)
      batch.push_back(
          usable_frames[static_cast<std::size_t>(rng_.randint(static_cast<std::int64_t>(usable_frames.size())))]);
    return batch;
  };

  const int total_steps = cfg_.t1 + cfg_.t2;

  for (int w = 0; w < cfg_.d_warmup; ++w) {
    FaceBatch fb = build_face_batch(*this, m_, d_, draw_faces(), &AdversarialTrainer::face_crop_const);
    opt_d_.zero();
    Var ce = d_.classification_loss(fb.d_in, fb.ids, margin_blend());
    if (!std::isfinite(ce.value().item())) throw TrainAbort("non-finite loss in D warmup");
    backward(ce);
    opt_d_.step();
    d_.renormalize_head();
  }

  for (int t = 1; t <= cfg_.t1; ++t) {
    apply_lr_schedule(total_steps);
    step_update_d(draw_faces());
    MAStepResult ma = step_update_ma(draw_faces(), draw_frames());
    ++global_step_;
    state.history.push_back({t, 1, ma.losses});
    ++state.phase1_steps;
    if (!ma.losses.all_finite()) throw TrainAbort("non-finite loss at iteration " + std::to_string(t));
    if (cfg_.checkpoint_every > 0 && t % cfg_.checkpoint_every == 0) save_all();

    if (cfg_.plateau_window > 0 && state.phase1_steps >= 2 * cfg_.plateau_window) {
      double recent = 0.0, previous = 0.0;
      const auto& h = state.history;
      for (int k = 0; k < cfg_.plateau_window; ++k) {
        recent += h[h.size() - 1 - static_cast<std::size_t>(k)].losses.total();
        previous += h[h.size() - 1 - static_cast<std::size_t>(k + cfg_.plateau_window)].losses.total();
      }
      if (std::fabs(recent - previous) < 0.01 * std::fabs(previous)) break;
    }
  }

  for (int tau = 1; tau <= cfg_.t2; ++tau) {
    apply_lr_schedule(total_steps);
    LossBundle b = step_finetune_a(draw_frames());
    ++global_step_;
    state.history.push_back({state.phase1_steps + tau, 2, b});
    ++state.phase2_steps;
    if (!b.all_finite()) throw TrainAbort("non-finite loss in phase 2 at iteration " + std::to_string(tau));
    if (cfg_.checkpoint_every > 0 && tau % cfg_.checkpoint_every == 0) save_all();
  }

  save_all();
  state.rng_state = rng_.serialize();
  write_loss_csv(out_dir + "/loss_history.csv", state.history);
  {
    const std::string tmp = out_dir + "/state.json.tmp";
    std::ofstream f(tmp, std::ios::trunc);
    f << state.to_json() << "\n";
    f.close();
    if (std::rename(tmp.c_str(), (out_dir + "/state.json").c_str()) != 0)
      throw std::runtime_error(out_dir + "/state.json: rename failed");
  }
  return state;
}

}  // namespace anonact
