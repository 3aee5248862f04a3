#pragma once

// Planar float images in [0,1] plus the two resampling rules of the data
// pipeline: bilinear for images, block-max for masks (a line pixel always
// survives into the target).

#include "plseg/mask.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

namespace plseg {

struct ImageF {
  int64_t channels = 0, height = 0, width = 0;
  std::vector<float> data;  // CHW

  int64_t numel() const { return channels * height * width; }
  float& at(int64_t c, int64_t y, int64_t x) {
    return data[size_t((c * height + y) * width + x)];
  }
  float at(int64_t c, int64_t y, int64_t x) const {
    return data[size_t((c * height + y) * width + x)];
  }
};

inline ImageF make_image(int64_t c, int64_t h, int64_t w, float fill = 0.f) {
  ImageF img;
  img.channels = c;
  img.height = h;
  img.width = w;
  img.data.assign(size_t(c * h * w), fill);
  return img;
}

// half-pixel-center bilinear sampling
inline ImageF bilinear_resize(const ImageF& src, int64_t th, int64_t tw) {
  ImageF dst = make_image(src.channels, th, tw);
  const double sy = double(src.height) / double(th);
  const double sx = double(src.width) / double(tw);
  for (int64_t y = 0; y < th; ++y) {
    double fy = (double(y) + 0.5) * sy - 0.5;
    int64_t y0 = int64_t(std::floor(fy));
    double wy = fy - double(y0);
    int64_t y1 = y0 + 1;
    if (y0 < 0) { y0 = y1 = 0; wy = 0; }
    if (y1 >= src.height) { y1 = y0 = src.height - 1; wy = 0; }
    for (int64_t x = 0; x < tw; ++x) {
      double fx = (double(x) + 0.5) * sx - 0.5;
      int64_t x0 = int64_t(std::floor(fx));
      double wx = fx - double(x0);
      int64_t x1 = x0 + 1;
      if (x0 < 0) { x0 = x1 = 0; wx = 0; }
      if (x1 >= src.width) { x1 = x0 = src.width - 1; wx = 0; }
      for (int64_t c = 0; c < src.channels; ++c) {
        const double a = src.at(c, y0, x0), b = src.at(c, y0, x1);
        const double d = src.at(c, y1, x0), e = src.at(c, y1, x1);
        const double top = a + wx * (b - a);
        const double bot = d + wx * (e - d);
        dst.at(c, y, x) = float(top + wy * (bot - top));
      }
    }
  }
  return dst;
}

// Target pixel = max over the source box it tiles; boxes cover the source
// exactly, so no source line pixel can vanish and none can appear from an
// empty block. Works for both down- and upscaling.
inline MaskBatch mask_resize_maxpool(const MaskBatch& src, int64_t th, int64_t tw) {
  PLSEG_CONTRACT(src.batch == 1, "mask_resize_maxpool: expects a single mask");
  MaskBatch dst;
  dst.batch = 1;
  dst.height = th;
  dst.width = tw;
  dst.data.assign(size_t(th * tw), 0);
  const int64_t sh = src.height, sw = src.width;
  for (int64_t ty = 0; ty < th; ++ty) {
    int64_t y0 = ty * sh / th;
    int64_t y1 = std::max(y0 + 1, ((ty + 1) * sh + th - 1) / th);
    if (y1 > sh) y1 = sh;
    for (int64_t tx = 0; tx < tw; ++tx) {
      int64_t x0 = tx * sw / tw;
      int64_t x1 = std::max(x0 + 1, ((tx + 1) * sw + tw - 1) / tw);
      if (x1 > sw) x1 = sw;
      uint8_t m = 0;
      for (int64_t y = y0; y < y1 && !m; ++y)
        for (int64_t x = x0; x < x1; ++x)
          if (src.data[size_t(y * sw + x)]) {
            m = 1;
            break;
          }
      dst.data[size_t(ty * tw + tx)] = m;
    }
  }
  return dst;
}

inline ImageF flip_image(const ImageF& src, bool horizontal, bool vertical) {
  ImageF dst = make_image(src.channels, src.height, src.width);
  for (int64_t c = 0; c < src.channels; ++c)
    for (int64_t y = 0; y < src.height; ++y)
      for (int64_t x = 0; x < src.width; ++x)
        dst.at(c, y, x) = src.at(c, vertical ? src.height - 1 - y : y,
                                 horizontal ? src.width - 1 - x : x);
  return dst;
}

inline MaskBatch flip_mask(const MaskBatch& src, bool horizontal, bool vertical) {
  MaskBatch dst = src;
  for (int64_t y = 0; y < src.height; ++y)
    for (int64_t x = 0; x < src.width; ++x)
      dst.data[size_t(y * src.width + x)] =
          src.data[size_t((vertical ? src.height - 1 - y : y) * src.width +
                          (horizontal ? src.width - 1 - x : x))];
  return dst;
}

inline ImageF crop_image(const ImageF& src, int64_t oy, int64_t ox, int64_t h, int64_t w) {
  ImageF dst = make_image(src.channels, h, w);
  for (int64_t c = 0; c < src.channels; ++c)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) dst.at(c, y, x) = src.at(c, oy + y, ox + x);
  return dst;
}

inline MaskBatch crop_mask(const MaskBatch& src, int64_t oy, int64_t ox, int64_t h,
                           int64_t w) {
  MaskBatch dst;
  dst.batch = 1;
  dst.height = h;
  dst.width = w;
  dst.data.resize(size_t(h * w));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      dst.data[size_t(y * w + x)] = src.data[size_t((oy + y) * src.width + ox + x)];
  return dst;
}

}  // namespace plseg
