#pragma once

// Line Feature head. Three Dynamic Line Extractors (bilateral 1xN / Nx1
// dynamic convolutions, concat, 1x1 merge) at different kernel lengths,
// fused by a 1x1 convolution, concatenated back onto the stage features
// and classified into train-only auxiliary seg logits.

#include "plseg/dynamic_conv.hpp"
#include "plseg/losses.hpp"

#include <array>
#include <vector>

namespace plseg {

template <class T>
class DynamicLineExtractor {
 public:
  DynamicLineExtractor(std::string name, uint64_t seed, int64_t channels, int64_t length,
                       int64_t num_experts, T temperature, int64_t gate_reduction)
      : name_(std::move(name)),
        length_(length),
        dyn_h_(name_ + ".dyn_h", seed, channels, channels, 1, length, num_experts,
               temperature, gate_reduction),
        dyn_v_(name_ + ".dyn_v", seed, channels, channels, length, 1, num_experts,
               temperature, gate_reduction),
        fuse_w_(make_param_normal<T>(name_ + ".fuse.w", seed,
                                     {channels, 2 * channels, 1, 1},
                                     he_std<T>(2 * channels))),
        bn_gamma_(make_param_const<T>({channels}, T(1))),
        bn_beta_(make_param_const<T>({channels}, T(0))),
        bn_rmean_(make_param_const<T>({channels}, T(0), false)),
        bn_rvar_(make_param_const<T>({channels}, T(1), false)) {
    if (length % 2 == 0)
      throw ConfigError("dynamic line extractor '" + name_ +
                        "': kernel length must be odd, got " + std::to_string(length));
  }

  // concat of the horizontal and vertical dynamic conv branches
  Var<T> bilateral_features(const Var<T>& x) const {
    return ops::concat_channels<T>({dyn_h_.forward(x), dyn_v_.forward(x)});
  }

  Var<T> forward(const Var<T>& x, bool training) {
    auto feat = bilateral_features(x);
    auto fused = ops::conv2d_nobias(feat, fuse_w_, 0, 0);
    auto normed = ops::batchnorm2d(fused, bn_gamma_, bn_beta_, bn_rmean_, bn_rvar_,
                                   training);
    return ops::relu(normed);
  }

  const DynamicConv2d<T>& horizontal() const { return dyn_h_; }
  const DynamicConv2d<T>& vertical() const { return dyn_v_; }
  DynamicConv2d<T>& horizontal() { return dyn_h_; }
  DynamicConv2d<T>& vertical() { return dyn_v_; }
  int64_t length() const { return length_; }

  void collect(ParamSet<T>& out, const std::string& component) const {
    dyn_h_.collect(out, component);
    dyn_v_.collect(out, component);
    out.push_back({name_ + ".fuse.w", component, ParamKind::kParam, fuse_w_});
    out.push_back({name_ + ".bn.gamma", component, ParamKind::kParam, bn_gamma_});
    out.push_back({name_ + ".bn.beta", component, ParamKind::kParam, bn_beta_});
    out.push_back({name_ + ".bn.rmean", component, ParamKind::kBuffer, bn_rmean_});
    out.push_back({name_ + ".bn.rvar", component, ParamKind::kBuffer, bn_rvar_});
  }

 private:
  std::string name_;
  int64_t length_;
  DynamicConv2d<T> dyn_h_, dyn_v_;
  Var<T> fuse_w_, bn_gamma_, bn_beta_, bn_rmean_, bn_rvar_;
};

template <class T>
class LineFeatureHead {
 public:
  LineFeatureHead(std::string name, uint64_t seed, int64_t channels,
                  std::array<int64_t, 3> dle_lengths, int64_t num_experts = 4,
                  T temperature = T(30), int64_t gate_reduction = 4)
      : name_(std::move(name)), channels_(channels) {
    dles_.reserve(3);
    for (int i = 0; i < 3; ++i)
      dles_.emplace_back(name_ + ".dle" + std::to_string(i), seed, channels,
                         dle_lengths[size_t(i)], num_experts, temperature,
                         gate_reduction);
    fusion_w_ = make_param_normal<T>(name_ + ".fusion.w", seed,
                                     {channels, 3 * channels, 1, 1},
                                     he_std<T>(3 * channels));
    fusion_b_ = make_param_const<T>({channels}, T(0));
    cls_w_ = make_param_normal<T>(name_ + ".cls.w", seed, {2, 2 * channels, 1, 1},
                                  he_std<T>(2 * channels));
    cls_b_ = make_param_const<T>({2}, T(0));
  }

  // auxiliary seg logits (B,2,H_stage,W_stage)
  Var<T> forward(const Var<T>& stage_features, bool training) {
    if (stage_features.shape().size() != 4 || stage_features.shape()[1] != channels_)
      throw ConfigError(name_ + ": expected " + std::to_string(channels_) +
                        " channels, got " + shape_str(stage_features.shape()));
    std::vector<Var<T>> outs;
    outs.reserve(3);
    for (auto& dle : dles_) outs.push_back(dle.forward(stage_features, training));
    auto fused = ops::conv2d(ops::concat_channels(outs), fusion_w_, fusion_b_, 0, 0);
    auto cat = ops::concat_channels<T>({fused, stage_features});
    return ops::conv2d(cat, cls_w_, cls_b_, 0, 0);
  }

  SegLossOut<T> loss(const Var<T>& aux_logits, const MaskBatch& gt, T ce_weight,
                     T dice_weight) const {
    return seg_loss(aux_logits, gt, ce_weight, dice_weight);
  }

  std::vector<DynamicLineExtractor<T>>& extractors() { return dles_; }
  Var<T>& fusion_weight() { return fusion_w_; }
  Var<T>& fusion_bias() { return fusion_b_; }
  Var<T>& cls_weight() { return cls_w_; }
  Var<T>& cls_bias() { return cls_b_; }

  void collect(ParamSet<T>& out, const std::string& component) const {
    for (const auto& dle : dles_) dle.collect(out, component);
    out.push_back({name_ + ".fusion.w", component, ParamKind::kParam, fusion_w_});
    out.push_back({name_ + ".fusion.b", component, ParamKind::kParam, fusion_b_});
    out.push_back({name_ + ".cls.w", component, ParamKind::kParam, cls_w_});
    out.push_back({name_ + ".cls.b", component, ParamKind::kParam, cls_b_});
  }

 private:
  std::string name_;
  int64_t channels_;
  std::vector<DynamicLineExtractor<T>> dles_;
  Var<T> fusion_w_, fusion_b_, cls_w_, cls_b_;
};

}  // namespace plseg
