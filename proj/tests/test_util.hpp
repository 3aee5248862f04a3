#pragma once

// Shared test helpers: independent brute-force oracles (kept free of the
// library's conv/GEMM path) and a central finite-difference gradient checker.

#include "plseg/tensor.hpp"
#include "plseg/rng.hpp"

#include <cmath>
#include <functional>
#include <vector>

namespace testutil {

using plseg::Rng;
using plseg::Shape;
using plseg::Var;

// plain quadruple-loop cross-correlation, stride 1, zero padding
template <class T>
std::vector<T> naive_conv2d(const std::vector<T>& x, int64_t B, int64_t Ci, int64_t H,
                            int64_t W, const std::vector<T>& w, int64_t Co, int64_t kh,
                            int64_t kw, int64_t ph, int64_t pw,
                            const std::vector<T>* bias = nullptr) {
  const int64_t OH = H + 2 * ph - kh + 1;
  const int64_t OW = W + 2 * pw - kw + 1;
  std::vector<T> out(size_t(B * Co * OH * OW), T(0));
  for (int64_t b = 0; b < B; ++b)
    for (int64_t oc = 0; oc < Co; ++oc)
      for (int64_t oy = 0; oy < OH; ++oy)
        for (int64_t ox = 0; ox < OW; ++ox) {
          T acc = bias ? (*bias)[size_t(oc)] : T(0);
          for (int64_t ic = 0; ic < Ci; ++ic)
            for (int64_t dy = 0; dy < kh; ++dy)
              for (int64_t dx = 0; dx < kw; ++dx) {
                const int64_t iy = oy + dy - ph, ix = ox + dx - pw;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += x[size_t(((b * Ci + ic) * H + iy) * W + ix)] *
                       w[size_t(((oc * Ci + ic) * kh + dy) * kw + dx)];
              }
          out[size_t(((b * Co + oc) * OH + oy) * OW + ox)] = acc;
        }
  return out;
}

template <class T>
std::vector<T> random_vec(Rng& rng, size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<T> v(n);
  for (auto& x : v) x = T(rng.uniform(lo, hi));
  return v;
}

template <class T>
Var<T> random_var(Rng& rng, Shape shape, bool requires_grad, double lo = -1.0,
                  double hi = 1.0) {
  Var<T> v = Var<T>::leaf(shape, requires_grad);
  for (auto& x : v.val()) x = T(rng.uniform(lo, hi));
  return v;
}

template <class T>
double max_abs_diff(const std::vector<T>& a, const std::vector<T>& b) {
  double m = a.size() == b.size() ? 0.0 : 1e300;
  for (size_t i = 0; i < a.size() && i < b.size(); ++i)
    m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

// max relative error between analytic gradient and central differences,
// relative to the larger magnitude (absolute floor avoids 0/0 blowups).
inline double gradcheck(Var<double>& input, const std::function<Var<double>()>& loss_fn,
                        double h = 1e-5, double floor_abs = 1e-7) {
  auto loss = loss_fn();
  input.zero_grad();
  // clear any stale grads held by parameters the closure reuses
  loss.backward();
  std::vector<double> analytic(input.grad().empty()
                                   ? std::vector<double>(input.val().size(), 0.0)
                                   : input.grad());
  double worst = 0.0;
  for (size_t i = 0; i < input.val().size(); ++i) {
    const double orig = input.val()[i];
    input.val()[i] = orig + h;
    const double up = loss_fn().item();
    input.val()[i] = orig - h;
    const double dn = loss_fn().item();
    input.val()[i] = orig;
    const double fd = (up - dn) / (2.0 * h);
    const double denom = std::max({std::abs(fd), std::abs(analytic[i]), floor_abs});
    worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
  }
  return worst;
}

}  // namespace testutil
