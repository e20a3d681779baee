#pragma once

#include <map>
#include <string>

#include "anonact/action_detection.hpp"
#include "anonact/anonymizers.hpp"
#include "anonact/face_identity.hpp"
#include "anonact/modifier_net.hpp"

namespace anonact {

// Training stopped on a non-finite loss; the last written checkpoints stay.
class TrainAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ModifierObjective { GradientAscent, RandomTarget };

struct TrainingConfig {
  int t1 = 400;  // adversarial iterations (one D step + one M,A step each)
  int t2 = 150;  // detector finetune iterations with M and D frozen
  double lambda_l1 = 0.02;
  double lr_detector = 0.001;
  double lr_modifier = 0.0003;
  double lr_classifier = 0.0003;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  int epochs = 12;        // schedule granularity over t1+t2 steps
  int lr_drop_epoch = 7;  // learning rates x0.1 after this epoch
  int face_batch = 8;
  int frame_batch = 2;
  std::uint64_t seed = 0;
  ModifierObjective modifier_objective = ModifierObjective::GradientAscent;
  int margin_anneal_steps = 0;  // softmax -> full margin blend over first steps
  int plateau_window = 0;       // >0 ends phase 1 early on <1% relative change
  int d_warmup = 0;             // D-only steps on original faces before phase 1
  int checkpoint_every = 0;     // 0 = initial and final only
  double face_score_threshold = 0.8;
  double enlarge_factor = 1.6;
};

struct StepRecord {
  int iter = 0;
  int phase = 1;
  LossBundle losses;
};

struct TrainingState {
  int phase1_steps = 0;
  int phase2_steps = 0;
  std::vector<StepRecord> history;  // append-only
  std::string modifier_ckpt, classifier_ckpt, detector_ckpt;
  std::string rng_state;

  std::string to_json() const;
  static TrainingState from_json(const std::string& text);
  bool operator==(const TrainingState&) const;
};

void write_loss_csv(const std::string& path, const std::vector<StepRecord>& history);

// Negated sum of the classification losses on modified and original faces.
Var adversarial_combine(const Var& loss_modified, const Var& loss_original);

// lambda * mean absolute pixel difference
Var l1_loss_term(const Var& modified, const Var& original, double lambda);

// v' = v - r_v + M(r_v) for every filtered face box; no boxes -> v unchanged.
Var compose_modified_frame(const Var& frame_chw, const std::vector<Box>& faces, const ModifierNetwork& m,
                           double enlarge_factor);

struct DStepResult {
  LossBundle losses;               // adv filled with the Eq. 2 value
  double loss_modified = 0.0;      // mean L_D(M(f), i_f)
  double loss_original = 0.0;      // mean L_D(f, i_f)
};

struct MAStepResult {
  LossBundle losses;        // det components averaged over the frame batch, adv, l1
  double objective = 0.0;   // scalar actually minimized (Eq. 4 value)
  double ascent_dot = 0.0;  // only when ascent recording is on
};

class AdversarialTrainer {
 public:
  AdversarialTrainer(const TrainingConfig& cfg, ModifierNetwork& m, FaceClassifier& d, DetectorNetwork& a,
                     std::string image_root);

  // One Adam step on D minimizing L_D(M(f),i_f) + L_D(f,i_f); M, A untouched.
  DStepResult step_update_d(const std::vector<FaceRecord>& face_batch);

  // One joint Adam step on M and A minimizing Eq. 4's M,A-relevant terms;
  // D untouched. An empty frame batch trains on the face terms alone.
  MAStepResult step_update_ma(const std::vector<FaceRecord>& face_batch, const std::vector<FrameRecord>& frame_batch);

  // Phase 2: detector-only step on frames composited with the frozen M.
  LossBundle step_finetune_a(const std::vector<FrameRecord>& frame_batch);

  TrainingState run(const std::vector<FaceRecord>& faces, const std::vector<FrameRecord>& frames,
                    const std::string& out_dir);

  Rng& rng() { return rng_; }
  void set_record_ascent(bool on) { record_ascent_ = on; }
  const std::vector<double>& ascent_dots() const { return ascent_dots_; }
  const ImageBuffer& image(const std::string& ref);

 private:
  double margin_blend() const;
  void apply_lr_schedule(int total_steps);
  Var face_crop_const(const FaceRecord& rec, int out_h, int out_w);
  DetectorLossParts frame_losses(const FrameRecord& rec, bool with_modifier, Var* det_sum_accum);

  TrainingConfig cfg_;
  ModifierNetwork& m_;
  FaceClassifier& d_;
  DetectorNetwork& a_;
  std::string image_root_;
  std::map<std::string, ImageBuffer> cache_;
  Rng rng_;
  Adam opt_m_, opt_d_, opt_a_;
  int global_step_ = 0;
  bool record_ascent_ = false;
  std::vector<double> ascent_dots_;
};

}  // namespace anonact
