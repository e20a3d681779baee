#include "anonact/face_identity.hpp"

#include <algorithm>
#include <cmath>

namespace anonact {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Chebyshev T_m(c) and T'_m(c) = m*U_{m-1}(c)
void chebyshev(double c, int m, double* t, double* dt) {
  double t_prev = 1.0, t_cur = c;      // T0, T1
  double u_prev = 1.0, u_cur = 2.0 * c;  // U0, U1
  if (m == 0) {
    *t = 1.0;
    *dt = 0.0;
    return;
  }
  for (int i = 2; i <= m; ++i) {
    const double t_next = 2.0 * c * t_cur - t_prev;
    t_prev = t_cur;
    t_cur = t_next;
  }
  for (int i = 2; i <= m - 1; ++i) {
    const double u_next = 2.0 * c * u_cur - u_prev;
    u_prev = u_cur;
    u_cur = u_next;
  }
  *t = t_cur;
  *dt = static_cast<double>(m) * (m == 1 ? 1.0 : u_cur);
}

void psi_and_derivative(double c, int m, double* psi, double* dpsi) {
  const double cc = std::clamp(c, -1.0, 1.0);
  const double theta = std::acos(cc);
  int k = static_cast<int>(std::floor(theta * m / kPi));
  k = std::clamp(k, 0, m - 1);
  double t, dt;
  chebyshev(cc, m, &t, &dt);
  const double sign = (k % 2 == 0) ? 1.0 : -1.0;
  *psi = sign * t - 2.0 * k;
  *dpsi = sign * dt;
}

}  // namespace

double psi_margin_value(double cos_theta, int m) {
  if (m < 1) throw std::invalid_argument("angular margin must be >= 1");
  double p, d;
  psi_and_derivative(cos_theta, m, &p, &d);
  return p;
}

Var angular_margin_psi(const Var& cos_vals, int m) {
  if (m < 1) throw std::invalid_argument("angular margin must be >= 1");
  const std::int64_t n = cos_vals.value().numel();
  Tensor out(cos_vals.value().shape());
  auto deriv = std::make_shared<Tensor>(cos_vals.value().shape());
  for (std::int64_t i = 0; i < n; ++i) {
    double p, d;
    psi_and_derivative(cos_vals.value()[i], m, &p, &d);
    out[i] = p;
    (*deriv)[i] = d;
  }
  return make_op(std::move(out), {cos_vals}, [cos_vals, deriv, n](VarNode& nd) {
    Tensor g = nd.grad;
    for (std::int64_t i = 0; i < n; ++i) g[i] *= (*deriv)[i];
    cos_vals.node()->accumulate(g);
  });
}

FaceClassifier::FaceClassifier(const FaceClassifierConfig& cfg, int num_identities, Rng& rng)
    : cfg_(cfg), num_identities_(num_identities) {
  if (num_identities < 1) throw std::invalid_argument("face classifier: needs at least one identity");
  if (cfg.input_h % 16 != 0 || cfg.input_w % 16 != 0)
    throw std::invalid_argument("face classifier: input extents must be divisible by 16");
  const int b = cfg.base_channels;
  c1_ = Conv2dLayer(3, b, 3, 2, 1, rng);
  n1_ = InstanceNorm2dLayer(b);
  c2_ = Conv2dLayer(b, 2 * b, 3, 2, 1, rng);
  n2_ = InstanceNorm2dLayer(2 * b);
  c3_ = Conv2dLayer(2 * b, 4 * b, 3, 2, 1, rng);
  n3_ = InstanceNorm2dLayer(4 * b);
  c4_ = Conv2dLayer(4 * b, 4 * b, 3, 2, 1, rng);
  n4_ = InstanceNorm2dLayer(4 * b);
  const int flat = (cfg.input_h / 16) * (cfg.input_w / 16) * 4 * b;
  fc_ = LinearLayer(flat, cfg.embed_dim, rng);
  Tensor head({num_identities, cfg.embed_dim});
  for (std::int64_t i = 0; i < head.numel(); ++i) head[i] = rng.normal(0.0, 1.0);
  head_ = Var(std::move(head), true);
  renormalize_head();
}

Var FaceClassifier::embed_batch(const Var& faces01) const {
  const auto& s = faces01.value().shape();
  if (s.size() != 4 || s[1] != 3 || s[2] != cfg_.input_h || s[3] != cfg_.input_w)
    throw std::invalid_argument("face classifier: input must be [N,3," + std::to_string(cfg_.input_h) + "," +
                                std::to_string(cfg_.input_w) + "], got " + faces01.value().shape_str());
  Var x = add_const(scale(faces01, 2.0), -1.0);
  x = relu(n1_.forward(c1_.forward(x)));
  x = relu(n2_.forward(c2_.forward(x)));
  x = relu(n3_.forward(c3_.forward(x)));
  x = relu(n4_.forward(c4_.forward(x)));
  const auto& xs = x.value().shape();
  x = reshape(x, {xs[0], xs[1] * xs[2] * xs[3]});
  return fc_.forward(x);
}

Var FaceClassifier::classification_loss(const Var& faces01, const std::vector<int>& identities, double margin_blend,
                                        int margin_override) const {
  const int m = margin_override > 0 ? margin_override : cfg_.margin;
  const int n = faces01.value().dim(0);
  if (static_cast<int>(identities.size()) != n)
    throw std::invalid_argument("classification_loss: identity count mismatch");
  for (int id : identities)
    if (id < 0 || id >= num_identities_) throw std::out_of_range("classification_loss: invalid identity id");

  Var emb = embed_batch(faces01);

  // non-target logits ||x|| cos(theta_j) = x . W_j / ||W_j||
  Var scores = matmul_nt(emb, normalize_rows(head_));

  Var xnorm = l2norm_rows(emb);                      // [N]
  Var target_score = gather_labels(scores, identities);  // ||x|| cos(theta_y)
  Var cos_y = div_elem(target_score, xnorm);
  Var psi = angular_margin_psi(cos_y, m);
  Var blended = add(scale(cos_y, 1.0 - margin_blend), scale(psi, margin_blend));
  Var target_logit = mul(xnorm, blended);
  Var logits = replace_labels(scores, identities, target_logit);
  return cross_entropy_logits(logits, identities);
}

std::vector<double> FaceClassifier::embed(const ImageBuffer& face) const {
  NoGradGuard ng;
  Tensor chw = face.to_chw();
  Var x = constant(chw.reshaped({1, 3, face.height(), face.width()}));
  Var e = embed_batch(x);
  std::vector<double> out(static_cast<std::size_t>(e.value().numel()));
  for (std::int64_t i = 0; i < e.value().numel(); ++i) out[static_cast<std::size_t>(i)] = e.value()[i];
  return out;
}

void FaceClassifier::renormalize_head() {
  Tensor& w = head_.mutable_value();
  const int c = w.dim(0), d = w.dim(1);
  for (int j = 0; j < c; ++j) {
    double s = 0.0;
    for (int k = 0; k < d; ++k) s += w.at(j, k) * w.at(j, k);
    const double inv = 1.0 / std::max(std::sqrt(s), 1e-30);
    for (int k = 0; k < d; ++k) w.at(j, k) *= inv;
  }
}

ParamList FaceClassifier::parameters() const {
  ParamList out;
  c1_.collect("d.c1", out);
  n1_.collect("d.n1", out);
  c2_.collect("d.c2", out);
  n2_.collect("d.n2", out);
  c3_.collect("d.c3", out);
  n3_.collect("d.n3", out);
  c4_.collect("d.c4", out);
  n4_.collect("d.n4", out);
  fc_.collect("d.fc", out);
  out.push_back({"d.head", head_});
  return out;
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("cosine: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / std::max(std::sqrt(na) * std::sqrt(nb), 1e-30);
}

VerifyResult best_threshold_accuracy(const std::vector<std::pair<double, bool>>& sims) {
  if (sims.empty()) throw std::invalid_argument("verify: no pairs");
  bool has_pos = false, has_neg = false;
  for (const auto& [s, same] : sims) (same ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg) throw std::invalid_argument("verify: need both positive and negative pairs");

  std::vector<double> values;
  values.reserve(sims.size());
  for (const auto& [s, same] : sims) values.push_back(s);
  std::sort(values.begin(), values.end());
  std::vector<double> candidates;
  candidates.push_back(values.front() - 1.0);  // predict everything "same"
  for (std::size_t i = 0; i + 1 < values.size(); ++i)
    if (values[i] < values[i + 1]) candidates.push_back(0.5 * (values[i] + values[i + 1]));
  candidates.push_back(values.back() + 1.0);  // predict everything "different"

  VerifyResult best{-1.0, 0.0};
  for (double t : candidates) {
    int correct = 0;
    for (const auto& [s, same] : sims)
      if ((s > t) == same) ++correct;
    const double acc = static_cast<double>(correct) / static_cast<double>(sims.size());
    if (acc > best.accuracy) best = {acc, t};
  }
  return best;
}

VerifyResult verify_pairs(const std::vector<PairRecord>& pairs, const PairEmbedder& embed_ref) {
  if (pairs.empty()) throw std::invalid_argument("verify: no pairs");
  std::vector<std::pair<double, bool>> sims;
  sims.reserve(pairs.size());
  for (const auto& p : pairs) {
    sims.emplace_back(cosine_similarity(embed_ref(p.ref_a), embed_ref(p.ref_b)), p.same);
  }
  return best_threshold_accuracy(sims);
}

}  // namespace anonact
