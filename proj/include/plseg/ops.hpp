#pragma once

// Autodiff ops over NCHW tensors. All convolutions are stride-1 with
// explicit zero padding; downsampling goes through maxpool2x2 and
// upsampling through bilinear 2x, matching the network's needs.

#include "plseg/gemm.hpp"
#include "plseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace plseg::ops {

template <class T>
bool all_finite(const std::vector<T>& v) {
  for (T x : v)
    if (!std::isfinite(double(x))) return false;
  return true;
}

template <class T>
void check_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                      " vs " + shape_str(b.shape()));
}

// ---------------------------------------------------------------- elementwise

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a, b, "add");
  std::vector<T> out(a.val());
  const auto& bv = b.val();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  auto an = a.node(), bn = b.node();
  return make_result<T>(a.shape(), std::move(out), {an, bn}, [an, bn](Node<T>& self) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a, b, "sub");
  std::vector<T> out(a.val());
  const auto& bv = b.val();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  auto an = a.node(), bn = b.node();
  return make_result<T>(a.shape(), std::move(out), {an, bn}, [an, bn](Node<T>& self) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  const auto& av = a.val();
  const auto& bv = b.val();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  auto an = a.node(), bn = b.node();
  return make_result<T>(a.shape(), std::move(out), {an, bn}, [an, bn](Node<T>& self) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->val[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->val[i];
    }
  });
}

template <class T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a, b, "div");
  std::vector<T> out(a.numel());
  const auto& av = a.val();
  const auto& bv = b.val();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[i];
  auto an = a.node(), bn = b.node();
  return make_result<T>(a.shape(), std::move(out), {an, bn}, [an, bn](Node<T>& self) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / bn->val[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i)
        g[i] -= self.grad[i] * an->val[i] / (bn->val[i] * bn->val[i]);
    }
  });
}

template <class T>
Var<T> mul_scalar(const Var<T>& a, T c) {
  std::vector<T> out(a.val());
  for (auto& x : out) x *= c;
  auto an = a.node();
  return make_result<T>(a.shape(), std::move(out), {an}, [an, c](Node<T>& self) {
    auto& g = an->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * c;
  });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T c) {
  std::vector<T> out(a.val());
  for (auto& x : out) x += c;
  auto an = a.node();
  return make_result<T>(a.shape(), std::move(out), {an}, [an](Node<T>& self) {
    auto& g = an->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <class T>
Var<T> relu(const Var<T>& a) {
  std::vector<T> out(a.val());
  for (auto& x : out) x = x > T(0) ? x : T(0);
  auto an = a.node();
  return make_result<T>(a.shape(), std::move(out), {an}, [an](Node<T>& self) {
    auto& g = an->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i)
      if (an->val[i] > T(0)) g[i] += self.grad[i];
  });
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
  std::vector<T> out(a.numel());
  const auto& av = a.val();
  for (size_t i = 0; i < out.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-av[i]));
  auto an = a.node();
  return make_result<T>(a.shape(), std::move(out), {an}, [an](Node<T>& self) {
    auto& g = an->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) {
      const T s = self.val[i];
      g[i] += self.grad[i] * s * (T(1) - s);
    }
  });
}

template <class T>
Var<T> log_eps(const Var<T>& a, T eps) {
  std::vector<T> out(a.numel());
  const auto& av = a.val();
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::log(av[i] + eps);
  auto an = a.node();
  return make_result<T>(a.shape(), std::move(out), {an}, [an, eps](Node<T>& self) {
    auto& g = an->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / (an->val[i] + eps);
  });
}

// ---------------------------------------------------------------- reductions

template <class T>
Var<T> sum_all(const Var<T>& a) {
  T acc = T(0);
  for (T x : a.val()) acc += x;
  auto an = a.node();
  return make_result<T>({1}, {acc}, {an}, [an](Node<T>& self) {
    auto& g = an->ensure_grad();
    const T go = self.grad[0];
    for (auto& x : g) x += go;
  });
}

template <class T>
Var<T> mean_all(const Var<T>& a) {
  return mul_scalar(sum_all(a), T(1) / T(a.numel()));
}

// ---------------------------------------------------------------- reshape/cat

template <class T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw ConfigError("reshape: numel mismatch " + shape_str(a.shape()) + " -> " +
                      shape_str(shape));
  auto an = a.node();
  return make_result<T>(std::move(shape), std::vector<T>(a.val()), {an},
                        [an](Node<T>& self) {
                          auto& g = an->ensure_grad();
                          for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                        });
}

template <class T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw ConfigError("concat_channels: empty input list");
  const Shape& s0 = xs[0].shape();
  if (s0.size() != 4) throw ConfigError("concat_channels: expects 4-D tensors");
  int64_t B = s0[0], H = s0[2], W = s0[3], Ctot = 0;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    if (s.size() != 4 || s[0] != B || s[2] != H || s[3] != W)
      throw ConfigError("concat_channels: incompatible shapes");
    Ctot += s[1];
  }
  std::vector<T> out(size_t(B * Ctot * H * W));
  const int64_t hw = H * W;
  int64_t coff = 0;
  for (const auto& x : xs) {
    const int64_t C = x.shape()[1];
    const auto& xv = x.val();
    for (int64_t b = 0; b < B; ++b)
      std::copy(xv.begin() + b * C * hw, xv.begin() + (b + 1) * C * hw,
                out.begin() + (b * Ctot + coff) * hw);
    coff += C;
  }
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::vector<int64_t> channels;
  for (const auto& x : xs) {
    parents.push_back(x.node());
    channels.push_back(x.shape()[1]);
  }
  auto pcopy = parents;
  return make_result<T>({B, Ctot, H, W}, std::move(out), std::move(parents),
                        [pcopy, channels, B, Ctot, hw](Node<T>& self) {
                          int64_t coff = 0;
                          for (size_t i = 0; i < pcopy.size(); ++i) {
                            const int64_t C = channels[i];
                            if (pcopy[i]->requires_grad) {
                              auto& g = pcopy[i]->ensure_grad();
                              for (int64_t b = 0; b < B; ++b) {
                                const T* src = self.grad.data() + (b * Ctot + coff) * hw;
                                T* dst = g.data() + b * C * hw;
                                for (int64_t j = 0; j < C * hw; ++j) dst[j] += src[j];
                              }
                            }
                            coff += C;
                          }
                        });
}

template <class T>
Var<T> slice_channels(const Var<T>& x, int64_t c0, int64_t len) {
  const Shape& s = x.shape();
  if (s.size() != 4 || c0 < 0 || c0 + len > s[1])
    throw ConfigError("slice_channels: bad range");
  const int64_t B = s[0], C = s[1], hw = s[2] * s[3];
  std::vector<T> out(size_t(B * len * hw));
  const auto& xv = x.val();
  for (int64_t b = 0; b < B; ++b)
    std::copy(xv.begin() + (b * C + c0) * hw, xv.begin() + (b * C + c0 + len) * hw,
              out.begin() + b * len * hw);
  auto xn = x.node();
  return make_result<T>({B, len, s[2], s[3]}, std::move(out), {xn},
                        [xn, B, C, c0, len, hw](Node<T>& self) {
                          auto& g = xn->ensure_grad();
                          for (int64_t b = 0; b < B; ++b) {
                            const T* src = self.grad.data() + b * len * hw;
                            T* dst = g.data() + (b * C + c0) * hw;
                            for (int64_t j = 0; j < len * hw; ++j) dst[j] += src[j];
                          }
                        });
}

template <class T>
Var<T> transpose_hw(const Var<T>& x) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw ConfigError("transpose_hw: expects 4-D");
  const int64_t B = s[0], C = s[1], H = s[2], W = s[3];
  std::vector<T> out(x.val().size());
  const auto& xv = x.val();
  for (int64_t bc = 0; bc < B * C; ++bc)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t xq = 0; xq < W; ++xq)
        out[bc * H * W + xq * H + y] = xv[bc * H * W + y * W + xq];
  auto xn = x.node();
  return make_result<T>({B, C, W, H}, std::move(out), {xn},
                        [xn, B, C, H, W](Node<T>& self) {
                          auto& g = xn->ensure_grad();
                          for (int64_t bc = 0; bc < B * C; ++bc)
                            for (int64_t y = 0; y < H; ++y)
                              for (int64_t xq = 0; xq < W; ++xq)
                                g[bc * H * W + y * W + xq] +=
                                    self.grad[bc * H * W + xq * H + y];
                        });
}

// ---------------------------------------------------------------- softmax

// softmax over the last dimension of a 2-D tensor
template <class T>
Var<T> softmax_rows(const Var<T>& x) {
  const Shape& s = x.shape();
  if (s.size() != 2) throw ConfigError("softmax_rows: expects 2-D");
  const int64_t R = s[0], C = s[1];
  std::vector<T> out(x.numel());
  const auto& xv = x.val();
  for (int64_t r = 0; r < R; ++r) {
    const T* row = xv.data() + r * C;
    T m = row[0];
    for (int64_t c = 1; c < C; ++c) m = std::max(m, row[c]);
    T sum = T(0);
    for (int64_t c = 0; c < C; ++c) {
      out[r * C + c] = std::exp(row[c] - m);
      sum += out[r * C + c];
    }
    for (int64_t c = 0; c < C; ++c) out[r * C + c] /= sum;
  }
  auto xn = x.node();
  return make_result<T>(s, std::move(out), {xn}, [xn, R, C](Node<T>& self) {
    auto& g = xn->ensure_grad();
    for (int64_t r = 0; r < R; ++r) {
      const T* p = self.val.data() + r * C;
      const T* go = self.grad.data() + r * C;
      T dot = T(0);
      for (int64_t c = 0; c < C; ++c) dot += go[c] * p[c];
      for (int64_t c = 0; c < C; ++c) g[r * C + c] += p[c] * (go[c] - dot);
    }
  });
}

namespace detail {
template <class T, bool kLog>
Var<T> softmax_channels_impl(const Var<T>& x) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw ConfigError("softmax_channels: expects 4-D");
  const int64_t B = s[0], C = s[1], HW = s[2] * s[3];
  std::vector<T> out(x.numel());
  const auto& xv = x.val();
  for (int64_t b = 0; b < B; ++b) {
    const T* xb = xv.data() + b * C * HW;
    T* ob = out.data() + b * C * HW;
    for (int64_t i = 0; i < HW; ++i) {
      T m = xb[i];
      for (int64_t c = 1; c < C; ++c) m = std::max(m, xb[c * HW + i]);
      T sum = T(0);
      for (int64_t c = 0; c < C; ++c) sum += std::exp(xb[c * HW + i] - m);
      if constexpr (kLog) {
        const T lse = m + std::log(sum);
        for (int64_t c = 0; c < C; ++c) ob[c * HW + i] = xb[c * HW + i] - lse;
      } else {
        for (int64_t c = 0; c < C; ++c) ob[c * HW + i] = std::exp(xb[c * HW + i] - m) / sum;
      }
    }
  }
  auto xn = x.node();
  return make_result<T>(s, std::move(out), {xn}, [xn, B, C, HW](Node<T>& self) {
    auto& g = xn->ensure_grad();
    for (int64_t b = 0; b < B; ++b) {
      const T* v = self.val.data() + b * C * HW;
      const T* go = self.grad.data() + b * C * HW;
      T* gx = g.data() + b * C * HW;
      for (int64_t i = 0; i < HW; ++i) {
        T dot = T(0);
        for (int64_t c = 0; c < C; ++c) dot += go[c * HW + i] * (kLog ? T(1) : v[c * HW + i]);
        for (int64_t c = 0; c < C; ++c) {
          const T p = kLog ? std::exp(v[c * HW + i]) : v[c * HW + i];
          gx[c * HW + i] += kLog ? (go[c * HW + i] - p * dot)
                                 : p * (go[c * HW + i] - dot);
        }
      }
    }
  });
}
}  // namespace detail

template <class T>
Var<T> softmax_channels(const Var<T>& x) {
  return detail::softmax_channels_impl<T, false>(x);
}

template <class T>
Var<T> log_softmax_channels(const Var<T>& x) {
  return detail::softmax_channels_impl<T, true>(x);
}

// ---------------------------------------------------------------- conv

// x: (B,Ci,H,W), w: (Co,Ci,kh,kw), optional bias (Co). Stride 1.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>* bias, int64_t ph,
              int64_t pw) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4) throw ConfigError("conv2d: expects 4-D tensors");
  if (xs[1] != ws[1])
    throw ConfigError("conv2d: input channels " + std::to_string(xs[1]) +
                      " != kernel channels " + std::to_string(ws[1]));
  const int64_t B = xs[0], Ci = xs[1], H = xs[2], W = xs[3];
  const int64_t Co = ws[0], kh = ws[2], kw = ws[3];
  const int64_t OH = H + 2 * ph - kh + 1, OW = W + 2 * pw - kw + 1;
  if (OH < 1 || OW < 1) throw ConfigError("conv2d: kernel larger than padded input");
  if (bias && bias->shape() != Shape{Co}) throw ConfigError("conv2d: bad bias shape");

  const int64_t K = Ci * kh * kw, N = OH * OW;
  std::vector<T> out(size_t(B * Co * N));
  std::vector<T> col(size_t(K * N));
  for (int64_t b = 0; b < B; ++b) {
    im2col(x.val().data() + b * Ci * H * W, Ci, H, W, kh, kw, ph, pw, col.data());
    T* ob = out.data() + b * Co * N;
    if (bias) {
      for (int64_t oc = 0; oc < Co; ++oc)
        std::fill(ob + oc * N, ob + (oc + 1) * N, bias->val()[oc]);
    }
    gemm_acc(Co, K, N, w.val().data(), col.data(), ob);
  }

  auto xn = x.node(), wn = w.node();
  auto bn = bias ? bias->node() : nullptr;
  return make_result<T>(
      {B, Co, OH, OW}, std::move(out), {xn, wn, bn},
      [xn, wn, bn, B, Ci, H, W, Co, kh, kw, ph, pw, K, N](Node<T>& self) {
        std::vector<T> col(size_t(K * N));
        std::vector<T> dcol, wt;
        const bool need_dx = xn->requires_grad;
        if (need_dx) {
          dcol.assign(size_t(K * N), T(0));
          wt.resize(size_t(K * Co));  // W transposed: (K, Co)
          for (int64_t oc = 0; oc < Co; ++oc)
            for (int64_t k = 0; k < K; ++k) wt[k * Co + oc] = wn->val[oc * K + k];
        }
        for (int64_t b = 0; b < B; ++b) {
          const T* go = self.grad.data() + b * Co * N;
          im2col(xn->val.data() + b * Ci * H * W, Ci, H, W, kh, kw, ph, pw, col.data());
          if (wn->requires_grad) {
            auto& gw = wn->ensure_grad();
            for (int64_t oc = 0; oc < Co; ++oc)
              for (int64_t k = 0; k < K; ++k)
                gw[oc * K + k] += dotv(N, go + oc * N, col.data() + k * N);
          }
          if (need_dx) {
            std::fill(dcol.begin(), dcol.end(), T(0));
            gemm_acc(K, Co, N, wt.data(), go, dcol.data());
            auto& gx = xn->ensure_grad();
            col2im_acc(dcol.data(), Ci, H, W, kh, kw, ph, pw,
                       gx.data() + b * Ci * H * W);
          }
        }
        if (bn && bn->requires_grad) {
          auto& gb = bn->ensure_grad();
          for (int64_t b = 0; b < B; ++b)
            for (int64_t oc = 0; oc < Co; ++oc) {
              const T* go = self.grad.data() + (b * Co + oc) * N;
              T acc = T(0);
              for (int64_t i = 0; i < N; ++i) acc += go[i];
              gb[oc] += acc;
            }
        }
      });
}

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, int64_t ph,
              int64_t pw) {
  return conv2d(x, w, &bias, ph, pw);
}

template <class T>
Var<T> conv2d_nobias(const Var<T>& x, const Var<T>& w, int64_t ph, int64_t pw) {
  return conv2d<T>(x, w, nullptr, ph, pw);
}

// Depthwise 3x3, pad 1. w: (C,1,3,3).
template <class T>
Var<T> depthwise3x3(const Var<T>& x, const Var<T>& w) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 4 || ws != Shape{xs[1], 1, 3, 3})
    throw ConfigError("depthwise3x3: bad shapes");
  const int64_t B = xs[0], C = xs[1], H = xs[2], W = xs[3];
  std::vector<T> out(x.numel(), T(0));
  const auto& xv = x.val();
  const auto& wv = w.val();
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const int64_t c = bc % C;
    const T* xp = xv.data() + bc * H * W;
    const T* k = wv.data() + c * 9;
    T* op = out.data() + bc * H * W;
    for (int64_t y = 0; y < H; ++y)
      for (int64_t dy = 0; dy < 3; ++dy) {
        const int64_t iy = y + dy - 1;
        if (iy < 0 || iy >= H) continue;
        const T* row = xp + iy * W;
        T* orow = op + y * W;
        for (int64_t dx = 0; dx < 3; ++dx) {
          const T kv = k[dy * 3 + dx];
          const int64_t x0 = std::max<int64_t>(0, 1 - dx);
          const int64_t x1 = std::min<int64_t>(W, W + 1 - dx);
          for (int64_t xx = x0; xx < x1; ++xx) orow[xx] += kv * row[xx + dx - 1];
        }
      }
  }
  auto xn = x.node(), wn = w.node();
  return make_result<T>(xs, std::move(out), {xn, wn},
                        [xn, wn, B, C, H, W](Node<T>& self) {
                          for (int64_t bc = 0; bc < B * C; ++bc) {
                            const int64_t c = bc % C;
                            const T* go = self.grad.data() + bc * H * W;
                            const T* xp = xn->val.data() + bc * H * W;
                            for (int64_t dy = 0; dy < 3; ++dy)
                              for (int64_t dx = 0; dx < 3; ++dx) {
                                T wacc = T(0);
                                const T kv = wn->val[c * 9 + dy * 3 + dx];
                                for (int64_t y = 0; y < H; ++y) {
                                  const int64_t iy = y + dy - 1;
                                  if (iy < 0 || iy >= H) continue;
                                  const int64_t x0 = std::max<int64_t>(0, 1 - dx);
                                  const int64_t x1 = std::min<int64_t>(W, W + 1 - dx);
                                  const T* grow = go + y * W;
                                  const T* xrow = xp + iy * W;
                                  if (wn->requires_grad)
                                    for (int64_t xx = x0; xx < x1; ++xx)
                                      wacc += grow[xx] * xrow[xx + dx - 1];
                                  if (xn->requires_grad) {
                                    T* gxrow = xn->ensure_grad().data() + bc * H * W + iy * W;
                                    for (int64_t xx = x0; xx < x1; ++xx)
                                      gxrow[xx + dx - 1] += kv * grow[xx];
                                  }
                                }
                                if (wn->requires_grad)
                                  wn->ensure_grad()[c * 9 + dy * 3 + dx] += wacc;
                              }
                          }
                        });
}

// Per-sample kernels: x (B,Ci,H,W), w (B,Co,Ci,kh,kw). Used by dynamic conv
// after expert aggregation.
template <class T>
Var<T> conv2d_per_sample(const Var<T>& x, const Var<T>& w, int64_t ph, int64_t pw) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 5 || ws[0] != xs[0] || ws[2] != xs[1])
    throw ConfigError("conv2d_per_sample: bad shapes " + shape_str(xs) + " / " +
                      shape_str(ws));
  const int64_t B = xs[0], Ci = xs[1], H = xs[2], W = xs[3];
  const int64_t Co = ws[1], kh = ws[3], kw = ws[4];
  const int64_t OH = H + 2 * ph - kh + 1, OW = W + 2 * pw - kw + 1;
  if (OH < 1 || OW < 1)
    throw ConfigError("conv2d_per_sample: kernel larger than padded input");
  const int64_t K = Ci * kh * kw, N = OH * OW;
  std::vector<T> out(size_t(B * Co * N), T(0));
  std::vector<T> col(size_t(K * N));
  for (int64_t b = 0; b < B; ++b) {
    im2col(x.val().data() + b * Ci * H * W, Ci, H, W, kh, kw, ph, pw, col.data());
    gemm_acc(Co, K, N, w.val().data() + b * Co * K, col.data(),
             out.data() + b * Co * N);
  }
  auto xn = x.node(), wn = w.node();
  return make_result<T>(
      {B, Co, OH, OW}, std::move(out), {xn, wn},
      [xn, wn, B, Ci, H, W, Co, kh, kw, ph, pw, K, N](Node<T>& self) {
        std::vector<T> col(size_t(K * N));
        std::vector<T> dcol, wt;
        if (xn->requires_grad) {
          dcol.assign(size_t(K * N), T(0));
          wt.resize(size_t(K * Co));
        }
        for (int64_t b = 0; b < B; ++b) {
          const T* go = self.grad.data() + b * Co * N;
          const T* wb = wn->val.data() + b * Co * K;
          im2col(xn->val.data() + b * Ci * H * W, Ci, H, W, kh, kw, ph, pw, col.data());
          if (wn->requires_grad) {
            auto& gw = wn->ensure_grad();
            for (int64_t oc = 0; oc < Co; ++oc)
              for (int64_t k = 0; k < K; ++k)
                gw[b * Co * K + oc * K + k] += dotv(N, go + oc * N, col.data() + k * N);
          }
          if (xn->requires_grad) {
            for (int64_t oc = 0; oc < Co; ++oc)
              for (int64_t k = 0; k < K; ++k) wt[k * Co + oc] = wb[oc * K + k];
            std::fill(dcol.begin(), dcol.end(), T(0));
            gemm_acc(K, Co, N, wt.data(), go, dcol.data());
            col2im_acc(dcol.data(), Ci, H, W, kh, kw, ph, pw,
                       xn->ensure_grad().data() + b * Ci * H * W);
          }
        }
      });
}

// gate (B,K) x experts (K,Co,Ci,kh,kw) -> per-sample kernels (B,Co,Ci,kh,kw)
template <class T>
Var<T> weighted_expert_sum(const Var<T>& gate, const Var<T>& experts) {
  const Shape& gs = gate.shape();
  const Shape& es = experts.shape();
  if (gs.size() != 2 || es.size() != 5 || gs[1] != es[0])
    throw ConfigError("weighted_expert_sum: bad shapes");
  const int64_t B = gs[0], K = gs[1];
  const int64_t M = es[1] * es[2] * es[3] * es[4];
  std::vector<T> out(size_t(B * M), T(0));
  for (int64_t b = 0; b < B; ++b)
    for (int64_t k = 0; k < K; ++k)
      axpy(M, gate.val()[b * K + k], experts.val().data() + k * M, out.data() + b * M);
  auto gn = gate.node(), en = experts.node();
  Shape os = {B, es[1], es[2], es[3], es[4]};
  return make_result<T>(std::move(os), std::move(out), {gn, en},
                        [gn, en, B, K, M](Node<T>& self) {
                          if (gn->requires_grad) {
                            auto& gg = gn->ensure_grad();
                            for (int64_t b = 0; b < B; ++b)
                              for (int64_t k = 0; k < K; ++k)
                                gg[b * K + k] += dotv(M, self.grad.data() + b * M,
                                                      en->val.data() + k * M);
                          }
                          if (en->requires_grad) {
                            auto& ge = en->ensure_grad();
                            for (int64_t b = 0; b < B; ++b)
                              for (int64_t k = 0; k < K; ++k)
                                axpy(M, gn->val[b * K + k], self.grad.data() + b * M,
                                     ge.data() + k * M);
                          }
                        });
}

// ---------------------------------------------------------------- dense

template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1] ||
      bias.shape() != Shape{ws[0]})
    throw ConfigError("linear: bad shapes");
  const int64_t B = xs[0], Ci = xs[1], Co = ws[0];
  std::vector<T> out(size_t(B * Co));
  for (int64_t b = 0; b < B; ++b)
    for (int64_t o = 0; o < Co; ++o)
      out[b * Co + o] =
          bias.val()[o] + dotv(Ci, x.val().data() + b * Ci, w.val().data() + o * Ci);
  auto xn = x.node(), wn = w.node(), bn = bias.node();
  return make_result<T>({B, Co}, std::move(out), {xn, wn, bn},
                        [xn, wn, bn, B, Ci, Co](Node<T>& self) {
                          for (int64_t b = 0; b < B; ++b)
                            for (int64_t o = 0; o < Co; ++o) {
                              const T go = self.grad[b * Co + o];
                              if (go == T(0)) continue;
                              if (xn->requires_grad)
                                axpy(Ci, go, wn->val.data() + o * Ci,
                                     xn->ensure_grad().data() + b * Ci);
                              if (wn->requires_grad)
                                axpy(Ci, go, xn->val.data() + b * Ci,
                                     wn->ensure_grad().data() + o * Ci);
                              if (bn->requires_grad) bn->ensure_grad()[o] += go;
                            }
                        });
}

template <class T>
Var<T> global_avg_pool(const Var<T>& x) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw ConfigError("global_avg_pool: expects 4-D");
  const int64_t B = s[0], C = s[1], HW = s[2] * s[3];
  std::vector<T> out(size_t(B * C));
  for (int64_t bc = 0; bc < B * C; ++bc) {
    T acc = T(0);
    const T* p = x.val().data() + bc * HW;
    for (int64_t i = 0; i < HW; ++i) acc += p[i];
    out[bc] = acc / T(HW);
  }
  auto xn = x.node();
  return make_result<T>({B, C}, std::move(out), {xn}, [xn, B, C, HW](Node<T>& self) {
    auto& g = xn->ensure_grad();
    for (int64_t bc = 0; bc < B * C; ++bc) {
      const T go = self.grad[bc] / T(HW);
      T* p = g.data() + bc * HW;
      for (int64_t i = 0; i < HW; ++i) p[i] += go;
    }
  });
}

// ---------------------------------------------------------------- pool / up

template <class T>
Var<T> maxpool2x2(const Var<T>& x) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[2] % 2 || s[3] % 2)
    throw ConfigError("maxpool2x2: spatial dims must be even, got " + shape_str(s));
  const int64_t B = s[0], C = s[1], H = s[2], W = s[3];
  const int64_t OH = H / 2, OW = W / 2;
  std::vector<T> out(size_t(B * C * OH * OW));
  auto argmax = std::make_shared<std::vector<int64_t>>(out.size());
  const auto& xv = x.val();
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* xp = xv.data() + bc * H * W;
    T* op = out.data() + bc * OH * OW;
    int64_t* ap = argmax->data() + bc * OH * OW;
    for (int64_t y = 0; y < OH; ++y)
      for (int64_t xx = 0; xx < OW; ++xx) {
        const int64_t i00 = (2 * y) * W + 2 * xx;
        int64_t best = i00;
        T bv = xp[i00];
        if (xp[i00 + 1] > bv) { bv = xp[i00 + 1]; best = i00 + 1; }
        if (xp[i00 + W] > bv) { bv = xp[i00 + W]; best = i00 + W; }
        if (xp[i00 + W + 1] > bv) { bv = xp[i00 + W + 1]; best = i00 + W + 1; }
        op[y * OW + xx] = bv;
        ap[y * OW + xx] = best;
      }
  }
  auto xn = x.node();
  return make_result<T>({B, C, OH, OW}, std::move(out), {xn},
                        [xn, argmax, B, C, H, W, OH, OW](Node<T>& self) {
                          auto& g = xn->ensure_grad();
                          for (int64_t bc = 0; bc < B * C; ++bc) {
                            const T* go = self.grad.data() + bc * OH * OW;
                            const int64_t* ap = argmax->data() + bc * OH * OW;
                            T* gp = g.data() + bc * H * W;
                            for (int64_t i = 0; i < OH * OW; ++i) gp[ap[i]] += go[i];
                          }
                        });
}

// Bilinear 2x upsample, half-pixel centers (align_corners=false).
template <class T>
Var<T> upsample_bilinear2x(const Var<T>& x) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw ConfigError("upsample_bilinear2x: expects 4-D");
  const int64_t B = s[0], C = s[1], H = s[2], W = s[3];
  const int64_t OH = 2 * H, OW = 2 * W;

  auto make_map = [](int64_t out_n, int64_t in_n, std::vector<int64_t>& i0,
                     std::vector<int64_t>& i1, std::vector<T>& w1) {
    i0.resize(out_n);
    i1.resize(out_n);
    w1.resize(out_n);
    for (int64_t o = 0; o < out_n; ++o) {
      const double src = (double(o) + 0.5) / 2.0 - 0.5;
      double f = std::floor(src);
      T frac = T(src - f);
      int64_t a = int64_t(f);
      int64_t b = a + 1;
      if (a < 0) { a = 0; b = 0; frac = T(0); }
      if (b >= in_n) { b = in_n - 1; a = in_n - 1; frac = T(0); }
      i0[o] = a;
      i1[o] = b;
      w1[o] = frac;
    }
  };
  auto ry0 = std::make_shared<std::vector<int64_t>>();
  auto ry1 = std::make_shared<std::vector<int64_t>>();
  auto wy = std::make_shared<std::vector<T>>();
  auto rx0 = std::make_shared<std::vector<int64_t>>();
  auto rx1 = std::make_shared<std::vector<int64_t>>();
  auto wx = std::make_shared<std::vector<T>>();
  make_map(OH, H, *ry0, *ry1, *wy);
  make_map(OW, W, *rx0, *rx1, *wx);

  std::vector<T> out(size_t(B * C * OH * OW));
  const auto& xv = x.val();
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* xp = xv.data() + bc * H * W;
    T* op = out.data() + bc * OH * OW;
    for (int64_t y = 0; y < OH; ++y) {
      const T fy = (*wy)[y];
      const T* r0 = xp + (*ry0)[y] * W;
      const T* r1 = xp + (*ry1)[y] * W;
      for (int64_t xx = 0; xx < OW; ++xx) {
        const T fx = (*wx)[xx];
        const T a = r0[(*rx0)[xx]], b = r0[(*rx1)[xx]];
        const T c = r1[(*rx0)[xx]], d = r1[(*rx1)[xx]];
        const T top = a + fx * (b - a);
        const T bot = c + fx * (d - c);
        op[y * OW + xx] = top + fy * (bot - top);
      }
    }
  }
  auto xn = x.node();
  return make_result<T>(
      {B, C, OH, OW}, std::move(out), {xn},
      [xn, ry0, ry1, wy, rx0, rx1, wx, B, C, H, W, OH, OW](Node<T>& self) {
        auto& g = xn->ensure_grad();
        for (int64_t bc = 0; bc < B * C; ++bc) {
          const T* go = self.grad.data() + bc * OH * OW;
          T* gp = g.data() + bc * H * W;
          for (int64_t y = 0; y < OH; ++y) {
            const T fy = (*wy)[y];
            T* g0 = gp + (*ry0)[y] * W;
            T* g1 = gp + (*ry1)[y] * W;
            for (int64_t xx = 0; xx < OW; ++xx) {
              const T fx = (*wx)[xx];
              const T v = go[y * OW + xx];
              g0[(*rx0)[xx]] += v * (T(1) - fy) * (T(1) - fx);
              g0[(*rx1)[xx]] += v * (T(1) - fy) * fx;
              g1[(*rx0)[xx]] += v * fy * (T(1) - fx);
              g1[(*rx1)[xx]] += v * fy * fx;
            }
          }
        }
      });
}

// ---------------------------------------------------------------- batchnorm

// Training mode normalizes with batch statistics (biased variance) and
// updates running estimates in place (unbiased variance, momentum mix);
// eval mode uses the stored running estimates.
template <class T>
Var<T> batchnorm2d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                   Var<T>& running_mean, Var<T>& running_var, bool training,
                   T momentum = T(0.1), T eps = T(1e-5)) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw ConfigError("batchnorm2d: expects 4-D");
  const int64_t B = s[0], C = s[1], HW = s[2] * s[3];
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C})
    throw ConfigError("batchnorm2d: affine shape mismatch");
  const int64_t n = B * HW;

  auto mean = std::make_shared<std::vector<T>>(C, T(0));
  auto invstd = std::make_shared<std::vector<T>>(C, T(0));
  const auto& xv = x.val();
  if (training) {
    for (int64_t c = 0; c < C; ++c) {
      T m = T(0);
      for (int64_t b = 0; b < B; ++b) {
        const T* p = xv.data() + (b * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) m += p[i];
      }
      m /= T(n);
      T v = T(0);
      for (int64_t b = 0; b < B; ++b) {
        const T* p = xv.data() + (b * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) {
          const T d = p[i] - m;
          v += d * d;
        }
      }
      v /= T(n);
      (*mean)[c] = m;
      (*invstd)[c] = T(1) / std::sqrt(v + eps);
      const T unbiased = n > 1 ? v * T(n) / T(n - 1) : v;
      running_mean.val()[c] = (T(1) - momentum) * running_mean.val()[c] + momentum * m;
      running_var.val()[c] = (T(1) - momentum) * running_var.val()[c] + momentum * unbiased;
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      (*mean)[c] = running_mean.val()[c];
      (*invstd)[c] = T(1) / std::sqrt(running_var.val()[c] + eps);
    }
  }

  std::vector<T> out(x.numel());
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      const T m = (*mean)[c], is = (*invstd)[c];
      const T g = gamma.val()[c], bt = beta.val()[c];
      const T* p = xv.data() + (b * C + c) * HW;
      T* o = out.data() + (b * C + c) * HW;
      for (int64_t i = 0; i < HW; ++i) o[i] = (p[i] - m) * is * g + bt;
    }

  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return make_result<T>(
      s, std::move(out), {xn, gn, bn},
      [xn, gn, bn, mean, invstd, training, B, C, HW, n](Node<T>& self) {
        // per channel: sum(dy), sum(dy * xhat)
        for (int64_t c = 0; c < C; ++c) {
          const T m = (*mean)[c], is = (*invstd)[c];
          T sum_dy = T(0), sum_dy_xhat = T(0);
          for (int64_t b = 0; b < B; ++b) {
            const T* go = self.grad.data() + (b * C + c) * HW;
            const T* xp = xn->val.data() + (b * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) {
              sum_dy += go[i];
              sum_dy_xhat += go[i] * (xp[i] - m) * is;
            }
          }
          if (gn->requires_grad) gn->ensure_grad()[c] += sum_dy_xhat;
          if (bn->requires_grad) bn->ensure_grad()[c] += sum_dy;
          if (xn->requires_grad) {
            auto& gx = xn->ensure_grad();
            const T g = gn->val[c];
            if (training) {
              const T inv_n = T(1) / T(n);
              for (int64_t b = 0; b < B; ++b) {
                const T* go = self.grad.data() + (b * C + c) * HW;
                const T* xp = xn->val.data() + (b * C + c) * HW;
                T* gp = gx.data() + (b * C + c) * HW;
                for (int64_t i = 0; i < HW; ++i) {
                  const T xhat = (xp[i] - m) * is;
                  gp[i] += g * is * (go[i] - inv_n * sum_dy - xhat * inv_n * sum_dy_xhat);
                }
              }
            } else {
              for (int64_t b = 0; b < B; ++b) {
                const T* go = self.grad.data() + (b * C + c) * HW;
                T* gp = gx.data() + (b * C + c) * HW;
                for (int64_t i = 0; i < HW; ++i) gp[i] += g * is * go[i];
              }
            }
          }
        }
      });
}

}  // namespace plseg::ops
