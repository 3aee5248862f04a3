#pragma once

// U-shaped encoder/decoder with four tapped stages plus a bottleneck.
// Stages 1-2 are double 3x3 conv blocks, stages 3-4 and the bottleneck use
// depthwise 3x3 + pointwise expand/project blocks; the decoder mirrors the
// encoder with bilinear 2x upsampling and skip concatenation. Booster heads
// attach to the stage taps during training and are never touched by the
// inference path.

#include "plseg/ed_head.hpp"
#include "plseg/lf_head.hpp"
#include "plseg/model_config.hpp"

#include <memory>
#include <optional>

namespace plseg {

template <class T>
class ConvBnRelu {
 public:
  ConvBnRelu(std::string name, uint64_t seed, int64_t in_ch, int64_t out_ch,
             int64_t k = 3)
      : name_(std::move(name)),
        pad_(k / 2),
        w_(make_param_normal<T>(name_ + ".w", seed, {out_ch, in_ch, k, k},
                                he_std<T>(in_ch * k * k))),
        bn_gamma_(make_param_const<T>({out_ch}, T(1))),
        bn_beta_(make_param_const<T>({out_ch}, T(0))),
        bn_rmean_(make_param_const<T>({out_ch}, T(0), false)),
        bn_rvar_(make_param_const<T>({out_ch}, T(1), false)) {}

  Var<T> forward(const Var<T>& x, bool training) {
    auto y = ops::conv2d_nobias(x, w_, pad_, pad_);
    return ops::relu(ops::batchnorm2d(y, bn_gamma_, bn_beta_, bn_rmean_, bn_rvar_,
                                      training));
  }

  void collect(ParamSet<T>& out, const std::string& component) const {
    out.push_back({name_ + ".w", component, ParamKind::kParam, w_});
    out.push_back({name_ + ".bn.gamma", component, ParamKind::kParam, bn_gamma_});
    out.push_back({name_ + ".bn.beta", component, ParamKind::kParam, bn_beta_});
    out.push_back({name_ + ".bn.rmean", component, ParamKind::kBuffer, bn_rmean_});
    out.push_back({name_ + ".bn.rvar", component, ParamKind::kBuffer, bn_rvar_});
  }

 private:
  std::string name_;
  int64_t pad_;
  Var<T> w_, bn_gamma_, bn_beta_, bn_rmean_, bn_rvar_;
};

template <class T>
class ConvBlock {
 public:
  ConvBlock(const std::string& name, uint64_t seed, int64_t in_ch, int64_t out_ch)
      : c1_(name + ".c1", seed, in_ch, out_ch), c2_(name + ".c2", seed, out_ch, out_ch) {}

  Var<T> forward(const Var<T>& x, bool training) {
    return c2_.forward(c1_.forward(x, training), training);
  }

  void collect(ParamSet<T>& out, const std::string& component) const {
    c1_.collect(out, component);
    c2_.collect(out, component);
  }

 private:
  ConvBnRelu<T> c1_, c2_;
};

// depthwise 3x3 -> pointwise expand (2x) -> pointwise project
template <class T>
class DwPwBlock {
 public:
  DwPwBlock(std::string name, uint64_t seed, int64_t in_ch, int64_t out_ch)
      : name_(std::move(name)),
        dw_w_(make_param_normal<T>(name_ + ".dw.w", seed, {in_ch, 1, 3, 3},
                                   he_std<T>(9))),
        dw_bn_gamma_(make_param_const<T>({in_ch}, T(1))),
        dw_bn_beta_(make_param_const<T>({in_ch}, T(0))),
        dw_bn_rmean_(make_param_const<T>({in_ch}, T(0), false)),
        dw_bn_rvar_(make_param_const<T>({in_ch}, T(1), false)),
        expand_(name_ + ".expand", seed, in_ch, 2 * out_ch, 1),
        project_(name_ + ".project", seed, 2 * out_ch, out_ch, 1) {}

  Var<T> forward(const Var<T>& x, bool training) {
    auto y = ops::depthwise3x3(x, dw_w_);
    y = ops::relu(ops::batchnorm2d(y, dw_bn_gamma_, dw_bn_beta_, dw_bn_rmean_,
                                   dw_bn_rvar_, training));
    return project_.forward(expand_.forward(y, training), training);
  }

  void collect(ParamSet<T>& out, const std::string& component) const {
    out.push_back({name_ + ".dw.w", component, ParamKind::kParam, dw_w_});
    out.push_back({name_ + ".dw.bn.gamma", component, ParamKind::kParam, dw_bn_gamma_});
    out.push_back({name_ + ".dw.bn.beta", component, ParamKind::kParam, dw_bn_beta_});
    out.push_back({name_ + ".dw.bn.rmean", component, ParamKind::kBuffer, dw_bn_rmean_});
    out.push_back({name_ + ".dw.bn.rvar", component, ParamKind::kBuffer, dw_bn_rvar_});
    expand_.collect(out, component);
    project_.collect(out, component);
  }

 private:
  std::string name_;
  Var<T> dw_w_, dw_bn_gamma_, dw_bn_beta_, dw_bn_rmean_, dw_bn_rvar_;
  ConvBnRelu<T> expand_, project_;
};

template <class T>
struct StageFeatures {
  Var<T> s1, s2, s3, s4, bottleneck;
};

template <class T>
class Encoder {
 public:
  Encoder(uint64_t seed, const BackboneConfig& cfg)
      : b1_("enc.b1", seed, 3, cfg.stage_channels[0]),
        b2_("enc.b2", seed, cfg.stage_channels[0], cfg.stage_channels[1]),
        b3_("enc.b3", seed, cfg.stage_channels[1], cfg.stage_channels[2]),
        b4_("enc.b4", seed, cfg.stage_channels[2], cfg.stage_channels[3]),
        b5_("enc.b5", seed, cfg.stage_channels[3], cfg.bottleneck_channels) {}

  StageFeatures<T> forward(const Var<T>& image, bool training) {
    const Shape& s = image.shape();
    PLSEG_CONTRACT(s.size() == 4 && s[1] == 3,
                   "encoder_forward: image must be (B,3,H,W), got " + shape_str(s));
    PLSEG_CONTRACT(s[2] % 32 == 0 && s[3] % 32 == 0,
                   "encoder_forward: spatial dims must be divisible by 32, got " +
                       std::to_string(s[2]) + "x" + std::to_string(s[3]));
    StageFeatures<T> f;
    f.s1 = ops::maxpool2x2(b1_.forward(image, training));
    f.s2 = ops::maxpool2x2(b2_.forward(f.s1, training));
    f.s3 = ops::maxpool2x2(b3_.forward(f.s2, training));
    f.s4 = ops::maxpool2x2(b4_.forward(f.s3, training));
    f.bottleneck = ops::maxpool2x2(b5_.forward(f.s4, training));
    return f;
  }

  void collect(ParamSet<T>& out, const std::string& component) const {
    b1_.collect(out, component);
    b2_.collect(out, component);
    b3_.collect(out, component);
    b4_.collect(out, component);
    b5_.collect(out, component);
  }

 private:
  ConvBlock<T> b1_, b2_;
  DwPwBlock<T> b3_, b4_, b5_;
};

template <class T>
class Decoder {
 public:
  Decoder(uint64_t seed, const BackboneConfig& cfg)
      : d4_("dec.d4", seed, cfg.bottleneck_channels + cfg.stage_channels[3],
            cfg.stage_channels[3]),
        d3_("dec.d3", seed, cfg.stage_channels[3] + cfg.stage_channels[2],
            cfg.stage_channels[2]),
        d2_("dec.d2", seed, cfg.stage_channels[2] + cfg.stage_channels[1],
            cfg.stage_channels[1]),
        d1_("dec.d1", seed, cfg.stage_channels[1] + cfg.stage_channels[0],
            cfg.stage_channels[0]),
        final_("dec.final", seed, cfg.stage_channels[0], cfg.stage_channels[0]),
        cls_w_(make_param_normal<T>("dec.cls.w", seed,
                                    {cfg.num_classes, cfg.stage_channels[0], 1, 1},
                                    he_std<T>(cfg.stage_channels[0]))),
        cls_b_(make_param_const<T>({cfg.num_classes}, T(0))) {}

  Var<T> forward(const StageFeatures<T>& f, bool training) {
    auto x = ops::concat_channels<T>({ops::upsample_bilinear2x(f.bottleneck), f.s4});
    auto d4 = d4_.forward(x, training);
    x = ops::concat_channels<T>({ops::upsample_bilinear2x(d4), f.s3});
    auto d3 = d3_.forward(x, training);
    x = ops::concat_channels<T>({ops::upsample_bilinear2x(d3), f.s2});
    auto d2 = d2_.forward(x, training);
    x = ops::concat_channels<T>({ops::upsample_bilinear2x(d2), f.s1});
    auto d1 = d1_.forward(x, training);
    auto full = final_.forward(ops::upsample_bilinear2x(d1), training);
    return ops::conv2d(full, cls_w_, cls_b_, 0, 0);
  }

  void collect(ParamSet<T>& out, const std::string& component) const {
    d4_.collect(out, component);
    d3_.collect(out, component);
    d2_.collect(out, component);
    d1_.collect(out, component);
    final_.collect(out, component);
    out.push_back({"dec.cls.w", component, ParamKind::kParam, cls_w_});
    out.push_back({"dec.cls.b", component, ParamKind::kParam, cls_b_});
  }

 private:
  DwPwBlock<T> d4_, d3_;
  ConvBlock<T> d2_, d1_;
  ConvBnRelu<T> final_;
  Var<T> cls_w_, cls_b_;
};

template <class T>
struct LossBundle {
  Var<T> total;
  double l_decode = 0, l_ed1 = 0, l_ed2 = 0, l_lf1 = 0, l_lf2 = 0;
  double total_value = 0;
};

template <class T>
struct InferResult {
  int64_t batch = 0, height = 0, width = 0;
  std::vector<uint8_t> mask;  // argmax labels, (B,H,W)
  std::vector<T> probs;       // softmax probabilities, (B,2,H,W)
};

enum class ParamMode { kTrain, kInfer };

template <class T>
class LineSegNet {
 public:
  explicit LineSegNet(const ModelConfig& cfg)
      : cfg_(cfg), encoder_(cfg.seed, cfg.backbone), decoder_(cfg.seed, cfg.backbone) {
    if (cfg.backbone.num_classes != 2)
      throw ConfigError("model: only 2-class segmentation is supported");
    const auto& sc = cfg.backbone.stage_channels;
    if (cfg.heads.ed1) ed1_.emplace("ed1", cfg.seed, sc[0]);
    if (cfg.heads.ed2) ed2_.emplace("ed2", cfg.seed, sc[1]);
    if (cfg.heads.lf1)
      lf1_.emplace("lf1", cfg.seed, sc[2], cfg.dle_lengths, cfg.dyn_experts,
                   T(cfg.dyn_temperature), cfg.gate_reduction);
    if (cfg.heads.lf2)
      lf2_.emplace("lf2", cfg.seed, sc[3], cfg.dle_lengths, cfg.dyn_experts,
                   T(cfg.dyn_temperature), cfg.gate_reduction);
  }

  const ModelConfig& config() const { return cfg_; }

  StageFeatures<T> encoder_forward(const Var<T>& image, bool training) {
    return encoder_.forward(image, training);
  }

  Var<T> decoder_forward(const StageFeatures<T>& f, bool training) {
    return decoder_.forward(f, training);
  }

  LossBundle<T> forward_train(const Var<T>& image, const MaskBatch& gt) {
    const Shape& s = image.shape();
    PLSEG_CONTRACT(gt.batch == s[0] && gt.height == s[2] && gt.width == s[3],
                   "forward_train: mask resolution does not match image");
    check_mask_values(gt, "forward_train");
    const LossWeights& w = cfg_.loss;

    auto feats = encoder_.forward(image, true);
    auto logits = decoder_.forward(feats, true);
    auto decode = seg_loss(logits, gt, T(w.alpha), T(w.beta));

    LossBundle<T> bundle;
    bundle.l_decode = double(decode.total.item());
    auto total = ops::mul_scalar(decode.total, T(w.theta));

    if (ed1_) {
      auto l = ed1_->loss(ed1_->project(feats.s1), downsample_mask(gt, 2), true,
                          T(w.alpha), T(w.beta));
      bundle.l_ed1 = double(l.total.item());
      total = ops::add(total, ops::mul_scalar(l.total, T(w.iota)));
    }
    if (ed2_) {
      auto l = ed2_->loss(ed2_->project(feats.s2), downsample_mask(gt, 4), true,
                          T(w.alpha), T(w.beta));
      bundle.l_ed2 = double(l.total.item());
      total = ops::add(total, ops::mul_scalar(l.total, T(w.kappa)));
    }
    if (lf1_) {
      auto l = lf1_->loss(lf1_->forward(feats.s3, true), downsample_mask(gt, 8),
                          T(w.alpha), T(w.beta));
      bundle.l_lf1 = double(l.total.item());
      total = ops::add(total, ops::mul_scalar(l.total, T(w.lambda)));
    }
    if (lf2_) {
      auto l = lf2_->loss(lf2_->forward(feats.s4, true), downsample_mask(gt, 16),
                          T(w.alpha), T(w.beta));
      bundle.l_lf2 = double(l.total.item());
      total = ops::add(total, ops::mul_scalar(l.total, T(w.mu)));
    }
    bundle.total = total;
    bundle.total_value = double(total.item());
    return bundle;
  }

  // inference path: encoder + decoder only, no booster parameter is touched
  InferResult<T> forward_infer(const Var<T>& image) {
    NoGradGuard ng;
    auto feats = encoder_.forward(image, false);
    auto logits = decoder_.forward(feats, false);
    auto probs = ops::softmax_channels(logits);
    const Shape& s = probs.shape();
    InferResult<T> r;
    r.batch = s[0];
    r.height = s[2];
    r.width = s[3];
    r.probs = probs.val();
    const int64_t hw = r.height * r.width;
    r.mask.resize(size_t(r.batch * hw));
    for (int64_t b = 0; b < r.batch; ++b) {
      const T* p0 = r.probs.data() + (b * 2 + 0) * hw;
      const T* p1 = r.probs.data() + (b * 2 + 1) * hw;
      uint8_t* m = r.mask.data() + b * hw;
      for (int64_t i = 0; i < hw; ++i) m[i] = p1[i] > p0[i] ? 1 : 0;
    }
    return r;
  }

  ParamSet<T> parameters() const {
    ParamSet<T> set;
    encoder_.collect(set, "backbone");
    decoder_.collect(set, "backbone");
    if (ed1_) ed1_->collect(set, "ed1");
    if (ed2_) ed2_->collect(set, "ed2");
    if (lf1_) lf1_->collect(set, "lf1");
    if (lf2_) lf2_->collect(set, "lf2");
    return set;
  }

  int64_t count_params(ParamMode mode) const {
    int64_t n = 0;
    for (const auto& e : parameters()) {
      if (e.kind != ParamKind::kParam) continue;
      if (mode == ParamMode::kInfer && e.component != "backbone") continue;
      n += e.var.numel();
    }
    return n;
  }

  EdgeDetailHead<T>* ed1() { return ed1_ ? &*ed1_ : nullptr; }
  EdgeDetailHead<T>* ed2() { return ed2_ ? &*ed2_ : nullptr; }
  LineFeatureHead<T>* lf1() { return lf1_ ? &*lf1_ : nullptr; }
  LineFeatureHead<T>* lf2() { return lf2_ ? &*lf2_ : nullptr; }

 private:
  ModelConfig cfg_;
  Encoder<T> encoder_;
  Decoder<T> decoder_;
  std::optional<EdgeDetailHead<T>> ed1_, ed2_;
  std::optional<LineFeatureHead<T>> lf1_, lf2_;
};

}  // namespace plseg
