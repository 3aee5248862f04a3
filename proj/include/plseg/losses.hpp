#pragma once

// Shared CE + squared-denominator soft-Dice segmentation loss. CE goes
// through an exact log-softmax; the Dice term is computed on the line-class
// probability channel.

#include "plseg/mask.hpp"
#include "plseg/ops.hpp"

namespace plseg {

inline constexpr double kLossEps = 1e-6;

template <class T>
struct SegLossOut {
  Var<T> total, ce, dice;
};

// 1 - (2*sum(p*q)+eps) / (sum(p^2)+sum(q^2)+eps); zero for identical inputs.
template <class T>
Var<T> soft_dice(const Var<T>& p, const Var<T>& q) {
  auto inter = ops::sum_all(ops::mul(p, q));
  auto pp = ops::sum_all(ops::mul(p, p));
  auto qq = ops::sum_all(ops::mul(q, q));
  auto num = ops::add_scalar(ops::mul_scalar(inter, T(2)), T(kLossEps));
  auto den = ops::add_scalar(ops::add(pp, qq), T(kLossEps));
  return ops::sub(Var<T>::scalar(T(1)), ops::div(num, den));
}

template <class T>
SegLossOut<T> seg_loss(const Var<T>& logits, const MaskBatch& gt, T ce_weight = T(1),
                       T dice_weight = T(0.4)) {
  const Shape& s = logits.shape();
  PLSEG_CONTRACT(s.size() == 4 && s[1] == 2,
                 "seg_loss: logits must be (B,2,H,W), got " + shape_str(s));
  PLSEG_CONTRACT(s[0] == gt.batch && s[2] == gt.height && s[3] == gt.width,
                 "seg_loss: logits " + shape_str(s) + " do not match mask " +
                     std::to_string(gt.batch) + "x" + std::to_string(gt.height) +
                     "x" + std::to_string(gt.width));
  auto onehot = mask_to_onehot<T>(gt);
  const T inv_px = T(1) / T(s[0] * s[2] * s[3]);
  auto ce = ops::mul_scalar(ops::sum_all(ops::mul(onehot, ops::log_softmax_channels(logits))),
                            -inv_px);
  auto p1 = ops::slice_channels(ops::softmax_channels(logits), 1, 1);
  auto q1 = ops::slice_channels(onehot, 1, 1);
  auto dice = soft_dice(p1, q1);
  auto total = ops::add(ops::mul_scalar(ce, ce_weight), ops::mul_scalar(dice, dice_weight));
  return {total, ce, dice};
}

}  // namespace plseg
