#pragma once

// Binary segmentation masks as plain byte planes, plus the max-pool
// downsampling rule shared by the per-stage head losses. Max over each
// block means a 1-pixel line survives any power-of-two downsampling.

#include "plseg/tensor.hpp"

#include <cstdint>
#include <vector>

namespace plseg {

struct MaskBatch {
  int64_t batch = 0, height = 0, width = 0;
  std::vector<uint8_t> data;  // row-major, values in {0,1}

  int64_t numel() const { return batch * height * width; }
};

inline void check_mask_values(const MaskBatch& m, const char* who) {
  for (uint8_t v : m.data)
    PLSEG_CONTRACT(v <= 1, std::string(who) + ": mask values must be in {0,1}");
}

inline MaskBatch downsample_mask(const MaskBatch& m, int64_t factor) {
  PLSEG_CONTRACT(factor >= 1 && (factor & (factor - 1)) == 0,
                 "downsample_mask: factor must be a power of two");
  PLSEG_CONTRACT(m.height % factor == 0 && m.width % factor == 0,
                 "downsample_mask: dims " + std::to_string(m.height) + "x" +
                     std::to_string(m.width) + " not divisible by factor " +
                     std::to_string(factor));
  MaskBatch out;
  out.batch = m.batch;
  out.height = m.height / factor;
  out.width = m.width / factor;
  out.data.assign(size_t(out.numel()), 0);
  for (int64_t b = 0; b < m.batch; ++b) {
    const uint8_t* src = m.data.data() + b * m.height * m.width;
    uint8_t* dst = out.data.data() + b * out.height * out.width;
    for (int64_t y = 0; y < m.height; ++y) {
      const uint8_t* row = src + y * m.width;
      uint8_t* drow = dst + (y / factor) * out.width;
      for (int64_t x = 0; x < m.width; ++x)
        if (row[x]) drow[x / factor] = 1;
    }
  }
  return out;
}

// (B,2,H,W) one-hot constant for CE/Dice targets
template <class T>
Var<T> mask_to_onehot(const MaskBatch& m) {
  check_mask_values(m, "mask_to_onehot");
  const int64_t hw = m.height * m.width;
  std::vector<T> v(size_t(m.batch * 2 * hw), T(0));
  for (int64_t b = 0; b < m.batch; ++b)
    for (int64_t i = 0; i < hw; ++i) {
      const int64_t cls = m.data[b * hw + i];
      v[(b * 2 + cls) * hw + i] = T(1);
    }
  return Var<T>::constant({m.batch, 2, m.height, m.width}, std::move(v));
}

// (B,1,H,W) float plane in {0,1}
template <class T>
Var<T> mask_to_plane(const MaskBatch& m) {
  check_mask_values(m, "mask_to_plane");
  std::vector<T> v(m.data.begin(), m.data.end());
  return Var<T>::constant({m.batch, 1, m.height, m.width}, std::move(v));
}

}  // namespace plseg
