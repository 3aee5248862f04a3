#pragma once

// AdamW (decoupled weight decay) over a flat list of parameter tensors,
// plus the per-step cosine annealing schedule. Schedule endpoints are
// returned exactly by construction.

#include "plseg/params.hpp"

#include <cmath>

namespace plseg {

class CosineSchedule {
 public:
  CosineSchedule(double lr0, double lr_min, int64_t total_steps)
      : lr0_(lr0), lr_min_(lr_min), total_steps_(total_steps) {
    if (total_steps < 1) throw ConfigError("cosine schedule: total_steps must be >= 1");
    if (lr_min >= lr0) throw ConfigError("cosine schedule: lr_min must be < lr0");
  }

  double lr(int64_t step) const {
    if (step <= 0) return lr0_;
    if (step >= total_steps_ - 1) return lr_min_;
    const double t = double(step) / double(total_steps_ - 1);
    return lr_min_ + 0.5 * (lr0_ - lr_min_) * (1.0 + std::cos(t * 3.14159265358979323846));
  }

  int64_t total_steps() const { return total_steps_; }

 private:
  double lr0_, lr_min_;
  int64_t total_steps_;
};

template <class T>
class AdamW {
 public:
  struct Config {
    double weight_decay = 0.05;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  };

  AdamW(ParamSet<T> params, Config cfg = {}) : cfg_(cfg) {
    for (auto& e : params)
      if (e.kind == ParamKind::kParam) params_.push_back(std::move(e));
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(size_t(params_[i].var.numel()), T(0));
      v_[i].assign(size_t(params_[i].var.numel()), T(0));
    }
  }

  void zero_grad() {
    for (auto& e : params_) e.var.zero_grad();
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i].var;
      const auto& g = p.grad();
      if (g.empty()) continue;  // parameter untouched by this graph
      auto& pv = p.val();
      auto& m = m_[i];
      auto& v = v_[i];
      for (size_t j = 0; j < pv.size(); ++j) {
        const double gj = double(g[j]);
        m[j] = T(cfg_.beta1 * double(m[j]) + (1.0 - cfg_.beta1) * gj);
        v[j] = T(cfg_.beta2 * double(v[j]) + (1.0 - cfg_.beta2) * gj * gj);
        const double mhat = double(m[j]) / bc1;
        const double vhat = double(v[j]) / bc2;
        pv[j] = T(double(pv[j]) -
                  lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                        cfg_.weight_decay * double(pv[j])));
      }
    }
  }

  int64_t steps_taken() const { return t_; }
  void set_steps_taken(int64_t t) { t_ = t; }

  const ParamSet<T>& params() const { return params_; }
  std::vector<T>& moment1(size_t i) { return m_[i]; }
  std::vector<T>& moment2(size_t i) { return v_[i]; }
  size_t size() const { return params_.size(); }

 private:
  Config cfg_;
  ParamSet<T> params_;
  std::vector<std::vector<T>> m_, v_;
  int64_t t_ = 0;
};

}  // namespace plseg
