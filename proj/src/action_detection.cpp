#include "anonact/action_detection.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "anonact/image_ops.hpp"

namespace anonact {

using nlohmann::json;

double LossBundle::total() const {
  double t = 0.0;
  for (const auto& v : {rpn_cls, rpn_reg, rcnn_cls, rcnn_reg, adv, l1})
    if (v) t += *v;
  return t;
}

bool LossBundle::all_finite() const {
  for (const auto& v : {rpn_cls, rpn_reg, rcnn_cls, rcnn_reg, adv, l1})
    if (v && !std::isfinite(*v)) return false;
  return true;
}

double iou(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) throw std::invalid_argument("iou: invalid box");
  const double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

std::array<double, 4> encode_box(const Box& anchor, const Box& target) {
  const double wa = anchor.width(), ha = anchor.height();
  return {(target.cx() - anchor.cx()) / wa, (target.cy() - anchor.cy()) / ha, std::log(target.width() / wa),
          std::log(target.height() / ha)};
}

Box decode_box(const Box& anchor, const std::array<double, 4>& d) {
  const double wa = anchor.width(), ha = anchor.height();
  const double cx = anchor.cx() + d[0] * wa;
  const double cy = anchor.cy() + d[1] * ha;
  // clamped to keep exp() and downstream arithmetic finite
  const double w = wa * std::exp(std::min(d[2], 6.0));
  const double h = ha * std::exp(std::min(d[3], 6.0));
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

std::vector<int> nms_keep(const std::vector<Box>& boxes, const std::vector<double>& scores, double iou_thresh) {
  if (boxes.size() != scores.size()) throw std::invalid_argument("nms: box/score count mismatch");
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  std::vector<int> keep;
  std::vector<bool> dead(boxes.size(), false);
  for (int i : order) {
    if (dead[i]) continue;
    keep.push_back(i);
    for (int j : order) {
      if (j == i || dead[j]) continue;
      if (iou(boxes[i], boxes[j]) >= iou_thresh) dead[j] = true;
    }
  }
  return keep;
}

AnchorAssignment assign_anchors(const std::vector<Box>& anchors, const std::vector<Box>& gts, double pos_iou,
                                double neg_iou) {
  AnchorAssignment out;
  out.labels.assign(anchors.size(), -1);
  out.matched_gt.assign(anchors.size(), -1);
  if (gts.empty()) {
    std::fill(out.labels.begin(), out.labels.end(), 0);
    return out;
  }
  std::vector<double> best_iou(anchors.size(), 0.0);
  std::vector<double> gt_best(gts.size(), 0.0);
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(anchors[i], gts[g]);
      if (v > best_iou[i]) {
        best_iou[i] = v;
        out.matched_gt[i] = static_cast<int>(g);
      }
      gt_best[g] = std::max(gt_best[g], v);
    }
  }
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    if (best_iou[i] >= pos_iou)
      out.labels[i] = 1;
    else if (best_iou[i] <= neg_iou)
      out.labels[i] = 0;
  }
  // every ground truth also claims its best-overlapping anchor
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (gt_best[g] <= 0.0) continue;
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      if (out.matched_gt[i] == static_cast<int>(g) && best_iou[i] == gt_best[g]) {
        out.labels[i] = 1;
      }
    }
  }
  return out;
}

APResult mean_average_precision(const std::vector<std::vector<Detection>>& dets_per_frame,
                                const std::vector<std::vector<ActionInstance>>& gts_per_frame, double delta) {
  if (delta <= 0.0 || delta > 1.0) throw std::invalid_argument("mAP: delta must be in (0,1]");
  if (dets_per_frame.size() != gts_per_frame.size()) throw std::invalid_argument("mAP: frame count mismatch");
  std::set<int> classes;
  for (const auto& gts : gts_per_frame)
    for (const auto& g : gts) classes.insert(g.action_class);
  if (classes.empty()) throw std::invalid_argument("mAP: no ground truth instances");

  APResult res;
  double ap_sum = 0.0;
  for (int cls : classes) {
    int n_gt = 0;
    for (const auto& gts : gts_per_frame)
      for (const auto& g : gts)
        if (g.action_class == cls) ++n_gt;

    struct Cand {
      int frame;
      int idx;
      double score;
      Box box;
    };
    std::vector<Cand> pool;
    for (std::size_t f = 0; f < dets_per_frame.size(); ++f)
      for (std::size_t k = 0; k < dets_per_frame[f].size(); ++k)
        if (dets_per_frame[f][k].action_class == cls)
          pool.push_back({static_cast<int>(f), static_cast<int>(k), dets_per_frame[f][k].score, dets_per_frame[f][k].box});
    std::sort(pool.begin(), pool.end(), [](const Cand& a, const Cand& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.frame != b.frame) return a.frame < b.frame;
      return a.idx < b.idx;
    });

    std::vector<std::vector<bool>> used(gts_per_frame.size());
    for (std::size_t f = 0; f < gts_per_frame.size(); ++f) used[f].assign(gts_per_frame[f].size(), false);

    std::vector<bool> is_tp(pool.size(), false);
    std::vector<double> prec(pool.size(), 0.0);
    int tp = 0;
    for (std::size_t k = 0; k < pool.size(); ++k) {
      const auto& gts = gts_per_frame[static_cast<std::size_t>(pool[k].frame)];
      int best = -1;
      double best_v = 0.0;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (gts[g].action_class != cls || used[static_cast<std::size_t>(pool[k].frame)][g]) continue;
        const double v = iou(pool[k].box, gts[g].box);
        if (v >= delta && v > best_v) {
          best_v = v;
          best = static_cast<int>(g);
        }
      }
      if (best >= 0) {
        used[static_cast<std::size_t>(pool[k].frame)][static_cast<std::size_t>(best)] = true;
        is_tp[k] = true;
        ++tp;
      }
      prec[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
    }

    // precision envelope from the right
    std::vector<double> pmax(pool.size(), 0.0);
    double running = 0.0;
    for (std::size_t k = pool.size(); k-- > 0;) {
      running = std::max(running, prec[k]);
      pmax[k] = running;
    }
    double ap = 0.0;
    for (std::size_t k = 0; k < pool.size(); ++k)
      if (is_tp[k]) ap += pmax[k] / static_cast<double>(n_gt);
    res.per_class[cls] = ap;
    ap_sum += ap;
  }
  res.map = ap_sum / static_cast<double>(classes.size());
  return res;
}

// ---- network ----

DetectorNetwork::DetectorNetwork(const DetectorConfig& cfg, Rng& rng) : cfg_(cfg) {
  const int b = cfg.base_channels;
  t1_ = Conv2dLayer(3, b, 3, 2, 1, rng);
  tn1_ = InstanceNorm2dLayer(b);
  t2_ = Conv2dLayer(b, 2 * b, 3, 2, 1, rng);
  tn2_ = InstanceNorm2dLayer(2 * b);
  t3_ = Conv2dLayer(2 * b, 4 * b, 3, 2, 1, rng);
  tn3_ = InstanceNorm2dLayer(4 * b);
  t4_ = Conv2dLayer(4 * b, 4 * b, 3, 1, 1, rng);
  tn4_ = InstanceNorm2dLayer(4 * b);
  const int a = static_cast<int>(cfg.anchor_scales.size() * cfg.anchor_ratios.size());
  rpn_conv_ = Conv2dLayer(4 * b, 4 * b, 3, 1, 1, rng);
  rpn_obj_ = Conv2dLayer(4 * b, a, 1, 1, 0, rng);
  rpn_reg_ = Conv2dLayer(4 * b, 4 * a, 1, 1, 0, rng);
  head_fc_ = LinearLayer(4 * b * cfg.roi_pool * cfg.roi_pool, cfg.head_dim, rng);
  head_cls_ = LinearLayer(cfg.head_dim, cfg.num_classes + 1, rng);
  head_reg_ = LinearLayer(cfg.head_dim, 4 * cfg.num_classes, rng);
}

Var DetectorNetwork::backbone(const Var& x) const {
  Var y = add_const(scale(x, 2.0), -1.0);
  y = relu(tn1_.forward(t1_.forward(y)));
  y = relu(tn2_.forward(t2_.forward(y)));
  y = relu(tn3_.forward(t3_.forward(y)));
  y = relu(tn4_.forward(t4_.forward(y)));
  return y;
}

void DetectorNetwork::rpn_forward(const Var& features, Var* obj_logits, Var* deltas) const {
  Var h = relu(rpn_conv_.forward(features));
  *obj_logits = rpn_obj_.forward(h);
  *deltas = rpn_reg_.forward(h);
}

std::vector<Box> DetectorNetwork::anchors_for(int feat_h, int feat_w) const {
  std::vector<Box> anchors;
  anchors.reserve(cfg_.anchor_scales.size() * cfg_.anchor_ratios.size() * feat_h * feat_w);
  for (double scale : cfg_.anchor_scales) {
    for (double ratio : cfg_.anchor_ratios) {
      const double h = scale * std::sqrt(ratio);
      const double w = scale / std::sqrt(ratio);
      for (int i = 0; i < feat_h; ++i) {
        const double cy = (i + 0.5) * kFeatureStride - 0.5;
        for (int j = 0; j < feat_w; ++j) {
          const double cx = (j + 0.5) * kFeatureStride - 0.5;
          anchors.push_back({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h});
        }
      }
    }
  }
  return anchors;
}

std::vector<Box> DetectorNetwork::make_proposals(const Tensor& obj, const Tensor& deltas, int feat_h, int feat_w,
                                                 int img_w, int img_h, int post_nms_top) const {
  const std::vector<Box> anchors = anchors_for(feat_h, feat_w);
  const int a = static_cast<int>(cfg_.anchor_scales.size() * cfg_.anchor_ratios.size());
  const std::int64_t cell = static_cast<std::int64_t>(feat_h) * feat_w;
  std::vector<Box> boxes;
  std::vector<double> scores;
  boxes.reserve(anchors.size());
  scores.reserve(anchors.size());
  for (int ai = 0; ai < a; ++ai) {
    for (std::int64_t p = 0; p < cell; ++p) {
      const std::size_t idx = static_cast<std::size_t>(ai) * cell + p;
      const Box& an = anchors[idx];
      std::array<double, 4> d;
      for (int k = 0; k < 4; ++k) d[static_cast<std::size_t>(k)] = deltas[(static_cast<std::int64_t>(4 * ai + k)) * cell + p];
      Box dec = decode_box(an, d);
      dec = clip_box(dec, img_w, img_h);
      if (dec.width() < cfg_.min_proposal_size || dec.height() < cfg_.min_proposal_size) continue;
      boxes.push_back(dec);
      scores.push_back(obj[static_cast<std::int64_t>(ai) * cell + p]);
    }
  }
  // top pre-NMS by objectness
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return scores[x] > scores[y]; });
  if (static_cast<int>(order.size()) > cfg_.pre_nms_top) order.resize(static_cast<std::size_t>(cfg_.pre_nms_top));
  std::vector<Box> cand;
  std::vector<double> cand_scores;
  for (int i : order) {
    cand.push_back(boxes[static_cast<std::size_t>(i)]);
    cand_scores.push_back(scores[static_cast<std::size_t>(i)]);
  }
  std::vector<int> keep = nms_keep(cand, cand_scores, cfg_.proposal_nms_iou);
  if (static_cast<int>(keep.size()) > post_nms_top) keep.resize(static_cast<std::size_t>(post_nms_top));
  std::vector<Box> out;
  out.reserve(keep.size());
  for (int i : keep) out.push_back(cand[static_cast<std::size_t>(i)]);
  return out;
}

Var DetectorNetwork::roi_features(const Var& features_chw, const std::vector<Box>& rois) const {
  const int c = features_chw.value().dim(0);
  std::vector<Var> pooled;
  pooled.reserve(rois.size());
  for (const Box& r : rois) {
    // image coords -> feature-map coords (pixel centers aligned)
    Box f{(r.x1 + 0.5) / kFeatureStride - 0.5, (r.y1 + 0.5) / kFeatureStride - 0.5,
          (r.x2 + 0.5) / kFeatureStride - 0.5, (r.y2 + 0.5) / kFeatureStride - 0.5};
    if (!f.valid()) {
      const double eps = 1e-3;
      f.x2 = f.x1 + std::max(f.width(), eps);
      f.y2 = f.y1 + std::max(f.height(), eps);
    }
    Var feat = grid_sample(features_chw, make_crop_grid(f, cfg_.roi_pool, cfg_.roi_pool));
    pooled.push_back(reshape(feat, {c * cfg_.roi_pool * cfg_.roi_pool}));
  }
  return stack_rows(pooled);
}

DetectorLossParts DetectorNetwork::loss(const Var& frame01, const std::vector<ActionInstance>& gts, Rng& rng,
                                        const std::vector<Box>* fixed_proposals) const {
  if (gts.empty()) throw std::invalid_argument("detector loss: no ground truth instances");
  const auto& s = frame01.value().shape();
  if (s.size() != 3 || s[0] != 3) throw std::invalid_argument("detector loss: frame must be [3,H,W]");
  const int img_h = s[1], img_w = s[2];
  for (const auto& g : gts) {
    if (!g.box.valid()) throw std::invalid_argument("detector loss: invalid ground-truth box");
    if (g.action_class < 0 || g.action_class >= cfg_.num_classes)
      throw std::out_of_range("detector loss: action class outside category count");
  }

  Var x = reshape(frame01, {1, 3, img_h, img_w});
  Var features = backbone(x);
  const int feat_h = features.value().dim(2), feat_w = features.value().dim(3);
  Var obj, deltas;
  rpn_forward(features, &obj, &deltas);
  const int a = static_cast<int>(cfg_.anchor_scales.size() * cfg_.anchor_ratios.size());
  const std::int64_t cell = static_cast<std::int64_t>(feat_h) * feat_w;

  // ---- RPN targets ----
  std::vector<Box> gt_boxes;
  for (const auto& g : gts) gt_boxes.push_back(g.box);
  const std::vector<Box> anchors = anchors_for(feat_h, feat_w);
  AnchorAssignment assign = assign_anchors(anchors, gt_boxes, cfg_.rpn_pos_iou, cfg_.rpn_neg_iou);

  std::vector<int> pos_idx, neg_idx;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    if (assign.labels[i] == 1)
      pos_idx.push_back(static_cast<int>(i));
    else if (assign.labels[i] == 0)
      neg_idx.push_back(static_cast<int>(i));
  }
  const int max_pos = std::max(1, static_cast<int>(cfg_.rpn_batch * cfg_.rpn_fg_fraction));
  if (static_cast<int>(pos_idx.size()) > max_pos) {
    rng.shuffle(pos_idx);
    pos_idx.resize(static_cast<std::size_t>(max_pos));
    std::sort(pos_idx.begin(), pos_idx.end());
  }
  const int want_neg = cfg_.rpn_batch - static_cast<int>(pos_idx.size());
  if (static_cast<int>(neg_idx.size()) > want_neg) {
    rng.shuffle(neg_idx);
    neg_idx.resize(static_cast<std::size_t>(std::max(want_neg, 1)));
    std::sort(neg_idx.begin(), neg_idx.end());
  }

  std::vector<int> sample_idx = pos_idx;
  sample_idx.insert(sample_idx.end(), neg_idx.begin(), neg_idx.end());
  Tensor cls_targets({static_cast<int>(sample_idx.size())});
  for (std::size_t k = 0; k < pos_idx.size(); ++k) cls_targets[static_cast<std::int64_t>(k)] = 1.0;

  Var obj_flat = reshape(obj, {static_cast<int>(a * cell)});
  Var obj_sampled = select_rows(obj_flat, sample_idx);
  Var rpn_cls = bce_logits(obj_sampled, cls_targets);

  Var rpn_reg;
  if (!pos_idx.empty()) {
    std::vector<int> delta_idx;
    Tensor reg_targets({static_cast<int>(pos_idx.size()) * 4});
    for (std::size_t k = 0; k < pos_idx.size(); ++k) {
      const int i = pos_idx[k];
      const int ai = static_cast<int>(i / cell);
      const std::int64_t p = i % cell;
      const auto t = encode_box(anchors[static_cast<std::size_t>(i)],
                                gt_boxes[static_cast<std::size_t>(assign.matched_gt[static_cast<std::size_t>(i)])]);
      for (int k4 = 0; k4 < 4; ++k4) {
        delta_idx.push_back(static_cast<int>((static_cast<std::int64_t>(4 * ai + k4)) * cell + p));
        reg_targets[static_cast<std::int64_t>(4 * k + k4)] = t[static_cast<std::size_t>(k4)];
      }
    }
    Var deltas_flat = reshape(deltas, {static_cast<int>(4 * a * cell)});
    Var pred = select_rows(deltas_flat, delta_idx);
    rpn_reg = scale(smooth_l1_sum(pred, reg_targets), 1.0 / static_cast<double>(sample_idx.size()));
  } else {
    rpn_reg = constant(Tensor::scalar(0.0));
  }

  // ---- proposals (constant w.r.t. gradients) ----
  std::vector<Box> rois;
  if (fixed_proposals) {
    rois = *fixed_proposals;
  } else {
    rois = make_proposals(obj.value(), deltas.value(), feat_h, feat_w, img_w, img_h, cfg_.post_nms_top_train);
    for (const Box& g : gt_boxes) rois.push_back(g);  // guarantees foreground regions
  }

  // ---- region targets ----
  std::vector<int> roi_label(rois.size(), cfg_.num_classes);  // background
  std::vector<int> roi_gt(rois.size(), -1);
  std::vector<int> fg, bg;
  for (std::size_t i = 0; i < rois.size(); ++i) {
    double best = 0.0;
    for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
      const double v = iou(rois[i], gt_boxes[g]);
      if (v > best) {
        best = v;
        roi_gt[i] = static_cast<int>(g);
      }
    }
    if (roi_gt[i] >= 0 && best >= cfg_.roi_fg_iou) {
      roi_label[i] = gts[static_cast<std::size_t>(roi_gt[i])].action_class;
      fg.push_back(static_cast<int>(i));
    } else {
      bg.push_back(static_cast<int>(i));
    }
  }
  const int max_fg = std::max(1, static_cast<int>(cfg_.roi_batch * cfg_.roi_fg_fraction));
  if (static_cast<int>(fg.size()) > max_fg) {
    rng.shuffle(fg);
    fg.resize(static_cast<std::size_t>(max_fg));
    std::sort(fg.begin(), fg.end());
  }
  const int want_bg = cfg_.roi_batch - static_cast<int>(fg.size());
  if (static_cast<int>(bg.size()) > want_bg && want_bg >= 0) {
    rng.shuffle(bg);
    bg.resize(static_cast<std::size_t>(want_bg));
    std::sort(bg.begin(), bg.end());
  }
  std::vector<int> sampled = fg;
  sampled.insert(sampled.end(), bg.begin(), bg.end());

  std::vector<Box> sampled_rois;
  std::vector<int> sampled_labels;
  for (int i : sampled) {
    sampled_rois.push_back(rois[static_cast<std::size_t>(i)]);
    sampled_labels.push_back(roi_label[static_cast<std::size_t>(i)]);
  }

  Var feat_chw = reshape(features, {features.value().dim(1), feat_h, feat_w});
  Var pooled = roi_features(feat_chw, sampled_rois);
  Var hidden = relu(head_fc_.forward(pooled));
  Var cls_logits = head_cls_.forward(hidden);
  Var reg_out = head_reg_.forward(hidden);

  Var rcnn_cls = cross_entropy_logits(cls_logits, sampled_labels);

  Var rcnn_reg;
  {
    std::vector<int> reg_idx;
    std::vector<double> reg_target_vals;
    for (std::size_t k = 0; k < sampled.size(); ++k) {
      const int i = sampled[static_cast<std::size_t>(k)];
      if (roi_label[static_cast<std::size_t>(i)] == cfg_.num_classes) continue;  // background
      const auto t = encode_box(rois[static_cast<std::size_t>(i)],
                                gt_boxes[static_cast<std::size_t>(roi_gt[static_cast<std::size_t>(i)])]);
      const int cls = roi_label[static_cast<std::size_t>(i)];
      for (int k4 = 0; k4 < 4; ++k4) {
        reg_idx.push_back(static_cast<int>(k) * (4 * cfg_.num_classes) + 4 * cls + k4);
        reg_target_vals.push_back(t[static_cast<std::size_t>(k4)]);
      }
    }
    if (!reg_idx.empty()) {
      Var reg_flat = reshape(reg_out, {static_cast<int>(sampled.size()) * 4 * cfg_.num_classes});
      Var pred = select_rows(reg_flat, reg_idx);
      Tensor tgt({static_cast<int>(reg_target_vals.size())}, reg_target_vals);
      rcnn_reg = scale(smooth_l1_sum(pred, tgt), 1.0 / static_cast<double>(sampled.size()));
    } else {
      rcnn_reg = constant(Tensor::scalar(0.0));
    }
  }

  return {rpn_cls, rpn_reg, rcnn_cls, rcnn_reg};
}

Var DetectorLossParts::sum() const { return add(add(rpn_cls, rpn_reg), add(rcnn_cls, rcnn_reg)); }

LossBundle DetectorLossParts::bundle() const {
  LossBundle b;
  b.rpn_cls = rpn_cls.value().item();
  b.rpn_reg = rpn_reg.value().item();
  b.rcnn_cls = rcnn_cls.value().item();
  b.rcnn_reg = rcnn_reg.value().item();
  return b;
}

std::vector<Box> DetectorNetwork::propose(const ImageBuffer& frame) const {
  NoGradGuard ng;
  Tensor chw = frame.to_chw();
  Var x = constant(chw.reshaped({1, 3, frame.height(), frame.width()}));
  Var features = backbone(x);
  Var obj, deltas;
  rpn_forward(features, &obj, &deltas);
  return make_proposals(obj.value(), deltas.value(), features.value().dim(2), features.value().dim(3), frame.width(),
                        frame.height(), cfg_.post_nms_top_eval);
}

std::vector<Detection> DetectorNetwork::detect(const ImageBuffer& frame, double score_thresh, double nms_iou) const {
  NoGradGuard ng;
  Tensor chw = frame.to_chw();
  Var x = constant(chw.reshaped({1, 3, frame.height(), frame.width()}));
  Var features = backbone(x);
  Var obj, deltas;
  rpn_forward(features, &obj, &deltas);
  const int feat_h = features.value().dim(2), feat_w = features.value().dim(3);
  std::vector<Box> rois =
      make_proposals(obj.value(), deltas.value(), feat_h, feat_w, frame.width(), frame.height(), cfg_.post_nms_top_eval);
  if (rois.empty()) return {};

  Var feat_chw = reshape(features, {features.value().dim(1), feat_h, feat_w});
  Var pooled = roi_features(feat_chw, rois);
  Var hidden = relu(head_fc_.forward(pooled));
  Tensor probs = softmax_rows(head_cls_.forward(hidden).value());
  const Tensor& reg = head_reg_.forward(hidden).value();

  std::vector<Detection> out;
  for (int cls = 0; cls < cfg_.num_classes; ++cls) {
    std::vector<Box> boxes;
    std::vector<double> scores;
    for (std::size_t i = 0; i < rois.size(); ++i) {
      const double sc = probs.at(static_cast<int>(i), cls);
      if (sc <= score_thresh) continue;
      std::array<double, 4> d;
      for (int k = 0; k < 4; ++k) d[static_cast<std::size_t>(k)] = reg.at(static_cast<int>(i), 4 * cls + k);
      Box b = clip_box(decode_box(rois[i], d), frame.width(), frame.height());
      if (!b.valid()) continue;
      boxes.push_back(b);
      scores.push_back(sc);
    }
    for (int k : nms_keep(boxes, scores, nms_iou))
      out.push_back({boxes[static_cast<std::size_t>(k)], cls, scores[static_cast<std::size_t>(k)]});
  }
  std::stable_sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
  return out;
}

ParamList DetectorNetwork::parameters() const {
  ParamList out;
  t1_.collect("a.t1", out);
  tn1_.collect("a.tn1", out);
  t2_.collect("a.t2", out);
  tn2_.collect("a.tn2", out);
  t3_.collect("a.t3", out);
  tn3_.collect("a.tn3", out);
  t4_.collect("a.t4", out);
  tn4_.collect("a.tn4", out);
  rpn_conv_.collect("a.rpn_conv", out);
  rpn_obj_.collect("a.rpn_obj", out);
  rpn_reg_.collect("a.rpn_reg", out);
  head_fc_.collect("a.head_fc", out);
  head_cls_.collect("a.head_cls", out);
  head_reg_.collect("a.head_reg", out);
  return out;
}

void save_detections(const std::string& path, const std::vector<std::string>& image_refs,
                     const std::vector<std::vector<Detection>>& dets) {
  if (image_refs.size() != dets.size()) throw std::invalid_argument("save_detections: ref/dets count mismatch");
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error(tmp + ": cannot open for writing");
    for (std::size_t i = 0; i < dets.size(); ++i) {
      json j;
      j["image"] = image_refs[i];
      j["dets"] = json::array();
      for (const auto& d : dets[i])
        j["dets"].push_back({{"box", {d.box.x1, d.box.y1, d.box.x2, d.box.y2}}, {"class", d.action_class},
                             {"score", d.score}});
      out << j.dump() << "\n";
    }
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw std::runtime_error(path + ": rename failed");
}

std::vector<std::pair<std::string, std::vector<Detection>>> load_detections(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open detections");
  std::vector<std::pair<std::string, std::vector<Detection>>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    std::vector<Detection> dets;
    for (const auto& d : j.at("dets")) {
      Detection det;
      det.box = {d.at("box")[0].get<double>(), d.at("box")[1].get<double>(), d.at("box")[2].get<double>(),
                 d.at("box")[3].get<double>()};
      det.action_class = d.at("class").get<int>();
      det.score = d.at("score").get<double>();
      dets.push_back(det);
    }
    out.emplace_back(j.at("image").get<std::string>(), std::move(dets));
  }
  return out;
}

}  // namespace anonact
