#pragma once

#include <functional>

#include "anonact/image.hpp"
#include "anonact/manifest.hpp"
#include "anonact/nn.hpp"

namespace anonact {

struct FaceClassifierConfig {
  int input_h = 112;
  int input_w = 96;
  int base_channels = 32;
  int embed_dim = 128;
  int margin = 4;  // angular margin multiplier

  bool operator==(const FaceClassifierConfig&) const = default;
};

// SphereFace-style multiplicative angular margin, psi(theta) =
// (-1)^k cos(m*theta) - 2k on [k*pi/m, (k+1)*pi/m], expressed in cos(theta).
double psi_margin_value(double cos_theta, int m);
Var angular_margin_psi(const Var& cos_vals, int m);

// Identity classifier: convolutional trunk ending in a fully-connected
// embedding, plus a bias-free head of unit-norm per-identity weights.
class FaceClassifier {
 public:
  FaceClassifier(const FaceClassifierConfig& cfg, int num_identities, Rng& rng);

  // [N,3,H,W] in [0,1] -> [N,d] features after the last fully-connected layer
  Var embed_batch(const Var& faces01) const;

  // Mean angular-margin cross-entropy. margin_blend linearly mixes the
  // plain cosine logit (0) with the full-margin logit (1) on the true class.
  Var classification_loss(const Var& faces01, const std::vector<int>& identities, double margin_blend = 1.0,
                          int margin_override = -1) const;

  std::vector<double> embed(const ImageBuffer& face) const;

  // Head rows are renormalized to unit length after every update.
  void renormalize_head();

  ParamList parameters() const;
  const FaceClassifierConfig& config() const { return cfg_; }
  int identity_count() const { return num_identities_; }

 private:
  FaceClassifierConfig cfg_;
  int num_identities_ = 0;
  Conv2dLayer c1_, c2_, c3_, c4_;
  InstanceNorm2dLayer n1_, n2_, n3_, n4_;
  LinearLayer fc_;
  Var head_;  // [num_identities, embed_dim]
};

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

struct VerifyResult {
  double accuracy = 0.0;
  double threshold = 0.0;
};

// Picks the threshold maximizing accuracy over all midpoints between sorted
// similarities (pairs with sim > threshold are predicted "same").
VerifyResult best_threshold_accuracy(const std::vector<std::pair<double, bool>>& sims);

using PairEmbedder = std::function<std::vector<double>(const std::string& image_ref)>;

// Requires at least one positive and one negative pair.
VerifyResult verify_pairs(const std::vector<PairRecord>& pairs, const PairEmbedder& embed_ref);

}  // namespace anonact
