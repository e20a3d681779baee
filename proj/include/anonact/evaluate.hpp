#pragma once

#include "anonact/action_detection.hpp"
#include "anonact/anonymizers.hpp"
#include "anonact/config.hpp"
#include "anonact/face_identity.hpp"
#include "anonact/modifier_net.hpp"

namespace anonact {

struct TradeoffPoint {
  std::string method;
  double verification_error = 0.0;
  double map = 0.0;
};

// Anonymizes every eval frame with `spec`, runs the detector, and scores
// mAP at `delta`. Detections per frame are returned through `dets_out`
// when non-null.
APResult evaluate_map(const std::vector<FrameRecord>& frames, const std::string& image_root, const AnonymizerSpec& spec,
                      const ModifierNetwork* m, const DetectorNetwork& a, const EvalConfig& eval,
                      double face_score_threshold = 0.8, std::vector<std::vector<Detection>>* dets_out = nullptr);

// Verification accuracy on the pairs manifest; for anonymizing methods both
// pair images are modified (the whole image is treated as the face region)
// before embedding.
VerifyResult evaluate_verification(const std::vector<PairRecord>& pairs, const std::string& image_root,
                                   const AnonymizerSpec& spec, const ModifierNetwork* m, const FaceClassifier& d);

ImageBuffer anonymize_face_image(const ImageBuffer& img, const AnonymizerSpec& spec, const ModifierNetwork* m);

void write_tradeoff_csv(const std::string& path, const std::vector<TradeoffPoint>& points);
void append_tradeoff_rows(const std::string& path, const std::vector<std::pair<std::string, double>>& labeled_errors);
void write_per_class_csv(const std::string& path, const std::vector<std::pair<std::string, APResult>>& rows,
                         int num_classes);

}  // namespace anonact
