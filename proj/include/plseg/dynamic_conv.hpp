#pragma once

// Dynamic convolution: the effective kernel is a per-sample, gate-weighted
// sum of K expert kernels. The gate is global average pool -> reduction
// linear -> relu -> linear -> softmax(logits / temperature).

#include "plseg/ops.hpp"
#include "plseg/params.hpp"

namespace plseg {

template <class T>
class DynamicConv2d {
 public:
  DynamicConv2d(std::string name, uint64_t seed, int64_t in_ch, int64_t out_ch,
                int64_t kh, int64_t kw, int64_t num_experts = 4,
                T temperature = T(30), int64_t gate_reduction = 4)
      : name_(std::move(name)),
        in_ch_(in_ch),
        out_ch_(out_ch),
        kh_(kh),
        kw_(kw),
        num_experts_(num_experts),
        temperature_(temperature) {
    if (num_experts < 1)
      throw ConfigError("dynamic conv '" + name_ + "': needs at least one expert");
    if (in_ch < 1 || out_ch < 1 || kh < 1 || kw < 1)
      throw ConfigError("dynamic conv '" + name_ + "': bad kernel configuration");
    if (temperature <= T(0))
      throw ConfigError("dynamic conv '" + name_ + "': temperature must be positive");
    const int64_t red = std::max<int64_t>(1, in_ch / std::max<int64_t>(1, gate_reduction));
    experts_ = make_param_normal<T>(name_ + ".experts", seed,
                                    {num_experts, out_ch, in_ch, kh, kw},
                                    he_std<T>(in_ch * kh * kw));
    gate_w1_ = make_param_normal<T>(name_ + ".gate.w1", seed, {red, in_ch},
                                    he_std<T>(in_ch));
    gate_b1_ = make_param_const<T>({red}, T(0));
    // small init keeps the gate near uniform at the start
    gate_w2_ = make_param_normal<T>(name_ + ".gate.w2", seed, {num_experts, red},
                                    0.01 * he_std<T>(red));
    gate_b2_ = make_param_const<T>({num_experts}, T(0));
  }

  // (B,K) simplex weights per sample
  Var<T> gate(const Var<T>& x) const {
    auto z = ops::global_avg_pool(x);
    z = ops::relu(ops::linear(z, gate_w1_, gate_b1_));
    z = ops::linear(z, gate_w2_, gate_b2_);
    return ops::softmax_rows(ops::mul_scalar(z, T(1) / temperature_));
  }

  Var<T> forward_with_gate(const Var<T>& x, const Var<T>& g) const {
    if (x.shape().size() != 4 || x.shape()[1] != in_ch_)
      throw ConfigError("dynamic conv '" + name_ + "': input channels " +
                        shape_str(x.shape()) + " do not match in_ch " +
                        std::to_string(in_ch_));
    auto wagg = ops::weighted_expert_sum(g, experts_);
    return ops::conv2d_per_sample(x, wagg, kh_ / 2, kw_ / 2);
  }

  Var<T> forward(const Var<T>& x) const { return forward_with_gate(x, gate(x)); }

  const Var<T>& experts() const { return experts_; }
  Var<T>& experts() { return experts_; }
  int64_t num_experts() const { return num_experts_; }
  int64_t out_channels() const { return out_ch_; }

  void collect(ParamSet<T>& out, const std::string& component) const {
    out.push_back({name_ + ".experts", component, ParamKind::kParam, experts_});
    out.push_back({name_ + ".gate.w1", component, ParamKind::kParam, gate_w1_});
    out.push_back({name_ + ".gate.b1", component, ParamKind::kParam, gate_b1_});
    out.push_back({name_ + ".gate.w2", component, ParamKind::kParam, gate_w2_});
    out.push_back({name_ + ".gate.b2", component, ParamKind::kParam, gate_b2_});
  }

 private:
  std::string name_;
  int64_t in_ch_, out_ch_, kh_, kw_, num_experts_;
  T temperature_;
  Var<T> experts_, gate_w1_, gate_b1_, gate_w2_, gate_b2_;
};

}  // namespace plseg
