#pragma once

// The three fixed edge kernels feeding the edge-space converter:
// 8-connected Laplacian, Sobel X, Sobel Y (= Sobel X transposed).
// Applied with stride 1, zero padding 1, cross-correlation convention.

#include "plseg/ops.hpp"

#include <array>

namespace plseg {

enum class FixedKernelType { kLaplacian, kSobelX, kSobelY };

template <class T>
std::array<T, 9> fixed_kernel_coeffs(FixedKernelType k) {
  switch (k) {
    case FixedKernelType::kLaplacian:
      return {-1, -1, -1, -1, 8, -1, -1, -1, -1};
    case FixedKernelType::kSobelX:
      return {-1, 0, 1, -2, 0, 2, -1, 0, 1};
    case FixedKernelType::kSobelY:
      return {-1, -2, -1, 0, 0, 0, 1, 2, 1};
  }
  throw ConfigError("fixed_kernel_coeffs: unknown kernel");
}

template <class T>
Var<T> fixed_kernel_tensor(FixedKernelType k) {
  auto c = fixed_kernel_coeffs<T>(k);
  return Var<T>::constant({1, 1, 3, 3}, std::vector<T>(c.begin(), c.end()));
}

// map must be a single-channel (B,1,H,W) tensor with finite values and
// spatial dims >= 3; output preserves the spatial dims.
template <class T>
Var<T> apply_fixed_kernel(const Var<T>& map, const Var<T>& kernel) {
  const Shape& s = map.shape();
  PLSEG_CONTRACT(s.size() == 4 && s[1] == 1,
                 "apply_fixed_kernel: input must be single-channel (B,1,H,W), got " +
                     shape_str(s));
  PLSEG_CONTRACT(s[2] >= 3 && s[3] >= 3,
                 "apply_fixed_kernel: spatial dims must be >= 3, got " + shape_str(s));
  PLSEG_CONTRACT(ops::all_finite(map.val()),
                 "apply_fixed_kernel: input contains non-finite values");
  return ops::conv2d_nobias(map, kernel, 1, 1);
}

template <class T>
Var<T> apply_fixed_kernel(const Var<T>& map, FixedKernelType k) {
  Var<T> kernel = fixed_kernel_tensor<T>(k);
  return apply_fixed_kernel(map, kernel);
}

}  // namespace plseg
