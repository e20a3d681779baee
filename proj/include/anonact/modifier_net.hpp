#pragma once

#include "anonact/nn.hpp"

namespace anonact {

struct ModifierConfig {
  int work_res = 256;      // square input/output resolution
  int base_channels = 64;  // width of the first convolution
  int residual_blocks = 9;

  bool operator==(const ModifierConfig&) const = default;
};

// Image-to-image face modifier: downsampling convolutions, a residual
// trunk, nearest-neighbor upsampling convolutions, instance normalization
// throughout, and a tanh squashed affinely back to [0,1]. Input and output
// are [N,3,res,res] in [0,1].
class ModifierNetwork {
 public:
  ModifierNetwork(const ModifierConfig& cfg, Rng& rng);

  Var forward(const Var& x01) const;
  const ModifierConfig& config() const { return cfg_; }
  ParamList parameters() const;

 private:
  struct ResBlock {
    Conv2dLayer c1, c2;
    InstanceNorm2dLayer n1, n2;
  };

  ModifierConfig cfg_;
  Conv2dLayer head_;
  InstanceNorm2dLayer head_n_;
  Conv2dLayer down1_, down2_;
  InstanceNorm2dLayer down1_n_, down2_n_;
  std::vector<ResBlock> blocks_;
  Conv2dLayer up1_, up2_;
  InstanceNorm2dLayer up1_n_, up2_n_;
  Conv2dLayer tail_;
};

}  // namespace anonact
