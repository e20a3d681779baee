#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "anonact/autograd.hpp"
#include "anonact/rng.hpp"

namespace anonact {

struct NamedParam {
  std::string name;
  Var var;
};

using ParamList = std::vector<NamedParam>;

// FNV-1a over parameter value bytes; used by the update-isolation tests.
std::uint64_t param_hash(const ParamList& params);

void zero_grads(ParamList& params);

// ---- layers ----

class Conv2dLayer {
 public:
  Conv2dLayer() = default;
  Conv2dLayer(int in_ch, int out_ch, int kernel, int stride, int pad, Rng& rng);
  Var forward(const Var& x) const { return conv2d(x, w_, b_, stride_, pad_); }
  void collect(const std::string& prefix, ParamList& out) const;

 private:
  Var w_, b_;
  int stride_ = 1, pad_ = 0;
};

class InstanceNorm2dLayer {
 public:
  InstanceNorm2dLayer() = default;
  explicit InstanceNorm2dLayer(int channels);
  Var forward(const Var& x) const { return instance_norm(x, gamma_, beta_); }
  void collect(const std::string& prefix, ParamList& out) const;

 private:
  Var gamma_, beta_;
};

class LinearLayer {
 public:
  LinearLayer() = default;
  LinearLayer(int in_dim, int out_dim, Rng& rng);
  Var forward(const Var& x) const { return linear(x, w_, b_); }
  Var weight() const { return w_; }
  void collect(const std::string& prefix, ParamList& out) const;

 private:
  Var w_, b_;
};

// ---- optimizer ----

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(ParamList params, AdamConfig cfg);
  // applies one update from the accumulated gradients, then clears them
  void step();
  void zero() { zero_grads(params_); }
  void set_lr_scale(double s) { lr_scale_ = s; }
  std::int64_t step_count() const { return t_; }
  const ParamList& params() const { return params_; }

 private:
  ParamList params_;
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::int64_t t_ = 0;
  double lr_scale_ = 1.0;
};

}  // namespace anonact
