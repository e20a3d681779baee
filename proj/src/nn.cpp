#include "anonact/nn.hpp"

#include <cmath>
#include <cstring>

namespace anonact {

std::uint64_t param_hash(const ParamList& params) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* p, std::size_t len) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& p : params) {
    mix(p.name.data(), p.name.size());
    mix(p.var.value().data(), static_cast<std::size_t>(p.var.value().numel()) * sizeof(double));
  }
  return h;
}

void zero_grads(ParamList& params) {
  for (auto& p : params) p.var.zero_grad();
}

namespace {
Tensor he_init(const std::vector<int>& shape, std::int64_t fan_in, Rng& rng) {
  Tensor t(shape);
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, std);
  return t;
}
}  // namespace

Conv2dLayer::Conv2dLayer(int in_ch, int out_ch, int kernel, int stride, int pad, Rng& rng)
    : stride_(stride), pad_(pad) {
  const std::int64_t fan_in = static_cast<std::int64_t>(in_ch) * kernel * kernel;
  w_ = Var(he_init({out_ch, in_ch, kernel, kernel}, fan_in, rng), true);
  b_ = Var(Tensor({out_ch}), true);
}

void Conv2dLayer::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".w", w_});
  out.push_back({prefix + ".b", b_});
}

InstanceNorm2dLayer::InstanceNorm2dLayer(int channels) {
  gamma_ = Var(Tensor::full({channels}, 1.0), true);
  beta_ = Var(Tensor({channels}), true);
}

void InstanceNorm2dLayer::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gamma", gamma_});
  out.push_back({prefix + ".beta", beta_});
}

LinearLayer::LinearLayer(int in_dim, int out_dim, Rng& rng) {
  w_ = Var(he_init({out_dim, in_dim}, in_dim, rng), true);
  b_ = Var(Tensor({out_dim}), true);
}

void LinearLayer::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".w", w_});
  out.push_back({prefix + ".b", b_});
}

Adam::Adam(ParamList params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.var.value().shape());
    v_.emplace_back(p.var.value().shape());
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const double lr = cfg_.lr * lr_scale_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var& p = params_[i].var;
    if (!p.has_grad()) continue;
    const Tensor& g = p.grad();
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    Tensor& val = p.mutable_value();
    for (std::int64_t k = 0; k < g.numel(); ++k) {
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      val[k] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
  for (auto& p : params_) p.var.zero_grad();
}

}  // namespace anonact
