#pragma once

// Row-major micro-GEMM and vector kernels backing the convolution ops.
// Single-threaded; accumulation order over k is fixed per output element,
// which keeps results bitwise reproducible run to run.

#include <cstdint>

namespace plseg {

// C[M x N] += A[M x K] * B[K x N]. The k loop is unrolled by 4 so each pass
// over the C row slice does four fused multiply-adds per load/store; k order
// stays fixed, results are bitwise reproducible run to run.
template <class T>
void gemm_acc(int64_t M, int64_t K, int64_t N, const T* A, const T* B, T* C) {
  constexpr int64_t NB = 1024;  // keep the C row slice hot in L1
  for (int64_t n0 = 0; n0 < N; n0 += NB) {
    const int64_t nb = (n0 + NB < N) ? NB : (N - n0);
    for (int64_t m = 0; m < M; ++m) {
      const T* a = A + m * K;
      T* c = C + m * N + n0;
      int64_t k = 0;
      for (; k + 4 <= K; k += 4) {
        const T a0 = a[k], a1 = a[k + 1], a2 = a[k + 2], a3 = a[k + 3];
        const T* b0 = B + k * N + n0;
        const T* b1 = b0 + N;
        const T* b2 = b1 + N;
        const T* b3 = b2 + N;
        for (int64_t n = 0; n < nb; ++n)
          c[n] += a0 * b0[n] + a1 * b1[n] + a2 * b2[n] + a3 * b3[n];
      }
      for (; k < K; ++k) {
        const T av = a[k];
        const T* b = B + k * N + n0;
        for (int64_t n = 0; n < nb; ++n) c[n] += av * b[n];
      }
    }
  }
}

// dot product with eight fixed-order partial accumulators (vectorizes
// without float reassociation)
template <class T>
T dotv(int64_t n, const T* a, const T* b) {
  T acc[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int64_t j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  T tail = T(0);
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) +
         ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

template <class T>
void axpy(int64_t n, T alpha, const T* x, T* y) {
  for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// col[(c*kh+dy)*kw+dx][oy*OW+ox] = x[c][oy+dy-ph][ox+dx-pw], zero outside.
// Stride-1 only; OH = H + 2*ph - kh + 1, OW likewise.
template <class T>
void im2col(const T* x, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
            int64_t ph, int64_t pw, T* col) {
  const int64_t OH = H + 2 * ph - kh + 1;
  const int64_t OW = W + 2 * pw - kw + 1;
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t dy = 0; dy < kh; ++dy) {
      for (int64_t dx = 0; dx < kw; ++dx) {
        T* dst = col + ((c * kh + dy) * kw + dx) * OH * OW;
        for (int64_t oy = 0; oy < OH; ++oy) {
          const int64_t iy = oy + dy - ph;
          T* drow = dst + oy * OW;
          if (iy < 0 || iy >= H) {
            for (int64_t ox = 0; ox < OW; ++ox) drow[ox] = T(0);
            continue;
          }
          const T* srow = x + (c * H + iy) * W;
          for (int64_t ox = 0; ox < OW; ++ox) {
            const int64_t ix = ox + dx - pw;
            drow[ox] = (ix >= 0 && ix < W) ? srow[ix] : T(0);
          }
        }
      }
    }
  }
}

// Scatter-add transpose of im2col.
template <class T>
void col2im_acc(const T* col, int64_t C, int64_t H, int64_t W, int64_t kh,
                int64_t kw, int64_t ph, int64_t pw, T* x) {
  const int64_t OH = H + 2 * ph - kh + 1;
  const int64_t OW = W + 2 * pw - kw + 1;
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t dy = 0; dy < kh; ++dy) {
      for (int64_t dx = 0; dx < kw; ++dx) {
        const T* src = col + ((c * kh + dy) * kw + dx) * OH * OW;
        for (int64_t oy = 0; oy < OH; ++oy) {
          const int64_t iy = oy + dy - ph;
          if (iy < 0 || iy >= H) continue;
          T* drow = x + (c * H + iy) * W;
          const T* srow = src + oy * OW;
          for (int64_t ox = 0; ox < OW; ++ox) {
            const int64_t ix = ox + dx - pw;
            if (ix >= 0 && ix < W) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

}  // namespace plseg
