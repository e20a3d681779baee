#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>

#include "anonact/image.hpp"
#include "anonact/manifest.hpp"
#include "anonact/nn.hpp"

namespace anonact {

struct Detection {
  Box box;
  int action_class = 0;
  double score = 0.0;
};

// Named scalar losses; absent entries allowed.
struct LossBundle {
  std::optional<double> rpn_cls, rpn_reg, rcnn_cls, rcnn_reg, adv, l1;

  double total() const;
  bool all_finite() const;
};

double iou(const Box& a, const Box& b);

// Faster-RCNN box parameterization: (dx, dy, dw, dh) about the anchor.
std::array<double, 4> encode_box(const Box& anchor, const Box& target);
Box decode_box(const Box& anchor, const std::array<double, 4>& deltas);

// Greedy class-agnostic NMS; returns kept indices in score order.
// Boxes with IoU >= thresh against a kept box are suppressed.
std::vector<int> nms_keep(const std::vector<Box>& boxes, const std::vector<double>& scores, double iou_thresh);

// Anchor labels: 1 positive, 0 negative, -1 ignored. An anchor is positive
// when IoU >= pos_iou with some ground truth or when it is the best anchor
// for a ground truth; negative when its best IoU <= neg_iou.
struct AnchorAssignment {
  std::vector<int> labels;
  std::vector<int> matched_gt;  // index into gts for positives
};
AnchorAssignment assign_anchors(const std::vector<Box>& anchors, const std::vector<Box>& gts, double pos_iou,
                                double neg_iou);

struct APResult {
  double map = 0.0;
  std::map<int, double> per_class;
};

// Pooled, class-wise greedy matching at IoU >= delta; all-point
// precision-envelope integration; classes without ground truth excluded.
APResult mean_average_precision(const std::vector<std::vector<Detection>>& dets_per_frame,
                                const std::vector<std::vector<ActionInstance>>& gts_per_frame, double delta);

struct DetectorConfig {
  int num_classes = 3;  // action categories; background is internal
  int base_channels = 16;
  std::vector<double> anchor_scales = {16.0, 32.0, 64.0};
  std::vector<double> anchor_ratios = {0.5, 1.0, 2.0};
  double rpn_pos_iou = 0.7;
  double rpn_neg_iou = 0.3;
  int rpn_batch = 128;
  double rpn_fg_fraction = 0.5;
  int pre_nms_top = 256;
  int post_nms_top_train = 64;
  int post_nms_top_eval = 32;
  double proposal_nms_iou = 0.7;
  int roi_batch = 32;
  double roi_fg_fraction = 0.5;
  double roi_fg_iou = 0.5;
  int roi_pool = 7;
  int head_dim = 128;
  double min_proposal_size = 2.0;

  bool operator==(const DetectorConfig&) const = default;
};

struct DetectorLossParts {
  Var rpn_cls, rpn_reg, rcnn_cls, rcnn_reg;
  Var sum() const;
  LossBundle bundle() const;
};

// Compact two-stage detector: shared convolutional trunk (stride 8), a
// region-proposal head, and a per-region classification/regression head
// pooled through the shared bilinear grid sampler. Gradients from the loss
// reach both the parameters and the input frame; proposal boxes are treated
// as constants.
class DetectorNetwork {
 public:
  static constexpr int kFeatureStride = 8;

  DetectorNetwork(const DetectorConfig& cfg, Rng& rng);

  // frame01: [3,H,W] in [0,1]. Sampling of anchors and regions draws from
  // `rng`; pass a fresh seeded Rng for reproducible losses.
  // When `fixed_proposals` is given, the proposal stage is bypassed.
  DetectorLossParts loss(const Var& frame01, const std::vector<ActionInstance>& gts, Rng& rng,
                         const std::vector<Box>* fixed_proposals = nullptr) const;

  std::vector<Detection> detect(const ImageBuffer& frame, double score_thresh = 0.05, double nms_iou = 0.5) const;

  // Proposal boxes for a frame (inference settings, no gradients).
  std::vector<Box> propose(const ImageBuffer& frame) const;

  std::vector<Box> anchors_for(int feat_h, int feat_w) const;

  ParamList parameters() const;
  const DetectorConfig& config() const { return cfg_; }

 private:
  Var backbone(const Var& frame01_nchw) const;
  void rpn_forward(const Var& features, Var* obj_logits, Var* deltas) const;
  std::vector<Box> make_proposals(const Tensor& obj_logits, const Tensor& deltas, int feat_h, int feat_w, int img_w,
                                  int img_h, int post_nms_top) const;
  Var roi_features(const Var& features_chw, const std::vector<Box>& rois) const;

  DetectorConfig cfg_;
  Conv2dLayer t1_, t2_, t3_, t4_;
  InstanceNorm2dLayer tn1_, tn2_, tn3_, tn4_;
  Conv2dLayer rpn_conv_, rpn_obj_, rpn_reg_;
  LinearLayer head_fc_, head_cls_, head_reg_;
};

// Line-delimited JSON detections for offline scoring.
void save_detections(const std::string& path, const std::vector<std::string>& image_refs,
                     const std::vector<std::vector<Detection>>& dets);
std::vector<std::pair<std::string, std::vector<Detection>>> load_detections(const std::string& path);

}  // namespace anonact
