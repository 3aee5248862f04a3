#pragma once

// Thin libpng wrapper: 8-bit gray / RGB / RGBA in, gray / RGB out.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace plseg {

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct PngImage {
  int64_t height = 0, width = 0, channels = 0;  // channels 1 or 3
  std::vector<uint8_t> data;                    // interleaved rows
};

PngImage read_png(const std::string& path);
void write_png_gray(const std::string& path, const uint8_t* data, int64_t height,
                    int64_t width);
void write_png_rgb(const std::string& path, const uint8_t* data, int64_t height,
                   int64_t width);

}  // namespace plseg
