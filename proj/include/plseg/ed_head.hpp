#pragma once

// Edge Detail head. Projects a low-level encoder stage to a single-channel
// seg map, converts prediction and target into a shared learnable edge
// space (fixed kernels -> convex 1x1 fusion -> batchnorm -> per-pixel
// softmax) and computes the CE + Dice loss there. Both branches run through
// the same converter parameters; gradient reaches the converter from both,
// never the ground-truth pixels themselves.

#include "plseg/fixed_kernels.hpp"
#include "plseg/losses.hpp"
#include "plseg/params.hpp"

namespace plseg {

template <class T>
struct EdLossOut {
  Var<T> total, ce, dice;
};

// CE + Dice over two per-pixel distributions in edge space:
// ce = mean over pixels of -sum_c yhat_c * log(xhat_c + eps), dice the
// squared-denominator form over all channels.
template <class T>
EdLossOut<T> edge_ce_dice(const Var<T>& xhat, const Var<T>& yhat, T alpha, T beta) {
  ops::check_same_shape(xhat, yhat, "edge_ce_dice");
  const Shape& s = xhat.shape();
  const T inv_px = T(1) / T(s[0] * s[2] * s[3]);
  auto ce = ops::mul_scalar(ops::sum_all(ops::mul(yhat, ops::log_eps(xhat, T(kLossEps)))),
                            -inv_px);
  auto dice = soft_dice(xhat, yhat);
  auto total = ops::add(ops::mul_scalar(ce, alpha), ops::mul_scalar(dice, beta));
  return {total, ce, dice};
}

template <class T>
class EdgeSpaceConverter {
 public:
  EdgeSpaceConverter(std::string name, uint64_t seed)
      : name_(std::move(name)),
        // small random logits: identical rows would make every output
        // channel the same mixture, leaving the converted map flat in the
        // input and the prediction branch without gradient
        fusion_raw_(make_param_normal<T>(name_ + ".fusion_raw", seed, {3, 3}, 0.5)),
        bn_gamma_(make_param_const<T>({3}, T(1))),
        bn_beta_(make_param_const<T>({3}, T(0))),
        bn_rmean_(make_param_const<T>({3}, T(0), false)),
        bn_rvar_(make_param_const<T>({3}, T(1), false)) {
    k_lap_ = fixed_kernel_tensor<T>(FixedKernelType::kLaplacian);
    k_sx_ = fixed_kernel_tensor<T>(FixedKernelType::kSobelX);
    k_sy_ = fixed_kernel_tensor<T>(FixedKernelType::kSobelY);
  }

  // raw responses of the three fixed kernels, channels (laplacian, sobelx, sobely)
  Var<T> edge_stack(const Var<T>& map) const {
    PLSEG_CONTRACT(map.shape().size() == 4 && map.shape()[1] == 1,
                   "edge_space_convert: input must be single-channel, got " +
                       shape_str(map.shape()));
    return ops::concat_channels<T>({apply_fixed_kernel(map, k_lap_),
                                    apply_fixed_kernel(map, k_sx_),
                                    apply_fixed_kernel(map, k_sy_)});
  }

  // each output channel is a convex reweighting of the three edge maps
  Var<T> effective_fusion_weights() const { return ops::softmax_rows(fusion_raw_); }

  Var<T> convert(const Var<T>& map, bool training) {
    auto stack = edge_stack(map);
    auto w = ops::reshape(effective_fusion_weights(), {3, 3, 1, 1});
    auto fused = ops::conv2d_nobias(stack, w, 0, 0);
    auto normed = ops::batchnorm2d(fused, bn_gamma_, bn_beta_, bn_rmean_, bn_rvar_,
                                   training);
    return ops::softmax_channels(normed);
  }

  void collect(ParamSet<T>& out, const std::string& component) const {
    out.push_back({name_ + ".fusion_raw", component, ParamKind::kParam, fusion_raw_});
    out.push_back({name_ + ".bn.gamma", component, ParamKind::kParam, bn_gamma_});
    out.push_back({name_ + ".bn.beta", component, ParamKind::kParam, bn_beta_});
    out.push_back({name_ + ".bn.rmean", component, ParamKind::kBuffer, bn_rmean_});
    out.push_back({name_ + ".bn.rvar", component, ParamKind::kBuffer, bn_rvar_});
  }

 private:
  std::string name_;
  Var<T> fusion_raw_, bn_gamma_, bn_beta_, bn_rmean_, bn_rvar_;
  Var<T> k_lap_, k_sx_, k_sy_;
};

template <class T>
class EdgeDetailHead {
 public:
  EdgeDetailHead(std::string name, uint64_t seed, int64_t in_ch)
      : name_(std::move(name)),
        in_ch_(in_ch),
        proj_w_(make_param_normal<T>(name_ + ".proj.w", seed, {1, in_ch, 1, 1},
                                     he_std<T>(in_ch))),
        proj_b_(make_param_const<T>({1}, T(0))),
        esc_(name_ + ".esc", seed) {}

  // learnable 1x1 projection squashed to (0,1)
  Var<T> project(const Var<T>& stage_features) const {
    if (stage_features.shape().size() != 4 || stage_features.shape()[1] != in_ch_)
      throw ConfigError(name_ + ".project: expected " + std::to_string(in_ch_) +
                        " channels, got " + shape_str(stage_features.shape()));
    return ops::sigmoid(ops::conv2d(stage_features, proj_w_, proj_b_, 0, 0));
  }

  Var<T> convert(const Var<T>& map, bool training) { return esc_.convert(map, training); }

  EdLossOut<T> loss(const Var<T>& pred_map, const MaskBatch& gt, bool training,
                    T alpha, T beta) {
    const Shape& s = pred_map.shape();
    PLSEG_CONTRACT(s.size() == 4 && s[1] == 1, "ed_loss: pred_map must be (B,1,H,W)");
    PLSEG_CONTRACT(s[0] == gt.batch && s[2] == gt.height && s[3] == gt.width,
                   "ed_loss: resolution mismatch, pred " + shape_str(s) + " vs mask " +
                       std::to_string(gt.batch) + "x" + std::to_string(gt.height) +
                       "x" + std::to_string(gt.width));
    auto xhat = esc_.convert(pred_map, training);
    auto yhat = esc_.convert(mask_to_plane<T>(gt), training);
    return edge_ce_dice(xhat, yhat, alpha, beta);
  }

  EdgeSpaceConverter<T>& converter() { return esc_; }
  const Var<T>& proj_weight() const { return proj_w_; }
  const Var<T>& proj_bias() const { return proj_b_; }

  void collect(ParamSet<T>& out, const std::string& component) const {
    out.push_back({name_ + ".proj.w", component, ParamKind::kParam, proj_w_});
    out.push_back({name_ + ".proj.b", component, ParamKind::kParam, proj_b_});
    esc_.collect(out, component);
  }

 private:
  std::string name_;
  int64_t in_ch_;
  Var<T> proj_w_, proj_b_;
  EdgeSpaceConverter<T> esc_;
};

}  // namespace plseg
