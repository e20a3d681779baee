#include "anonact/modifier_net.hpp"

namespace anonact {

ModifierNetwork::ModifierNetwork(const ModifierConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.work_res < 4 || cfg.work_res % 4 != 0)
    throw std::invalid_argument("modifier: work resolution must be a multiple of 4");
  const int b = cfg.base_channels;
  head_ = Conv2dLayer(3, b, 7, 1, 3, rng);
  head_n_ = InstanceNorm2dLayer(b);
  down1_ = Conv2dLayer(b, 2 * b, 3, 2, 1, rng);
  down1_n_ = InstanceNorm2dLayer(2 * b);
  down2_ = Conv2dLayer(2 * b, 4 * b, 3, 2, 1, rng);
  down2_n_ = InstanceNorm2dLayer(4 * b);
  blocks_.resize(static_cast<std::size_t>(cfg.residual_blocks));
  for (auto& blk : blocks_) {
    blk.c1 = Conv2dLayer(4 * b, 4 * b, 3, 1, 1, rng);
    blk.n1 = InstanceNorm2dLayer(4 * b);
    blk.c2 = Conv2dLayer(4 * b, 4 * b, 3, 1, 1, rng);
    blk.n2 = InstanceNorm2dLayer(4 * b);
  }
  up1_ = Conv2dLayer(4 * b, 2 * b, 3, 1, 1, rng);
  up1_n_ = InstanceNorm2dLayer(2 * b);
  up2_ = Conv2dLayer(2 * b, b, 3, 1, 1, rng);
  up2_n_ = InstanceNorm2dLayer(b);
  tail_ = Conv2dLayer(b, 3, 7, 1, 3, rng);
}

Var ModifierNetwork::forward(const Var& x01) const {
  const auto& s = x01.value().shape();
  if (s.size() != 4 || s[1] != 3 || s[2] != cfg_.work_res || s[3] != cfg_.work_res)
    throw std::invalid_argument("modifier: input must be [N,3," + std::to_string(cfg_.work_res) + "," +
                                std::to_string(cfg_.work_res) + "], got " + x01.value().shape_str());
  // [0,1] -> [-1,1] at the boundary
  Var x = add_const(scale(x01, 2.0), -1.0);
  x = relu(head_n_.forward(head_.forward(x)));
  x = relu(down1_n_.forward(down1_.forward(x)));
  x = relu(down2_n_.forward(down2_.forward(x)));
  for (const auto& blk : blocks_) {
    Var y = relu(blk.n1.forward(blk.c1.forward(x)));
    y = blk.n2.forward(blk.c2.forward(y));
    x = add(x, y);
  }
  x = relu(up1_n_.forward(up1_.forward(upsample_nearest2(x))));
  x = relu(up2_n_.forward(up2_.forward(upsample_nearest2(x))));
  x = tanh_op(tail_.forward(x));
  // [-1,1] -> [0,1]
  return scale(add_const(x, 1.0), 0.5);
}

ParamList ModifierNetwork::parameters() const {
  ParamList out;
  head_.collect("m.head", out);
  head_n_.collect("m.head_n", out);
  down1_.collect("m.down1", out);
  down1_n_.collect("m.down1_n", out);
  down2_.collect("m.down2", out);
  down2_n_.collect("m.down2_n", out);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = "m.res" + std::to_string(i);
    blocks_[i].c1.collect(p + ".c1", out);
    blocks_[i].n1.collect(p + ".n1", out);
    blocks_[i].c2.collect(p + ".c2", out);
    blocks_[i].n2.collect(p + ".n2", out);
  }
  up1_.collect("m.up1", out);
  up1_n_.collect("m.up1_n", out);
  up2_.collect("m.up2", out);
  up2_n_.collect("m.up2_n", out);
  tail_.collect("m.tail", out);
  return out;
}

}  // namespace anonact
