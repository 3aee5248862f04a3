#pragma once

// Dataset ingestion (ttpla_like / vitl_like folder layouts), the synthetic
// thin-line generator used for desk-scale experiments, and train-time
// augmentation. Everything is deterministic given its seeds.

#include "plseg/image.hpp"
#include "plseg/rng.hpp"

#include <string>
#include <vector>

namespace plseg {

struct Sample {
  ImageF image;    // (3,H,W) in [0,1]
  MaskBatch mask;  // batch 1, values {0,1}
  std::string id;
};

enum class DatasetLayout { kTtplaLike, kVitlLike };

DatasetLayout parse_layout(const std::string& name);
std::string layout_name(DatasetLayout layout);

// root/{images,masks}/<id>.png with filename-matched pairs; vitl_like adds
// one directory level of condition subfolders. Deterministic id order.
std::vector<Sample> load_dataset(const std::string& root, DatasetLayout layout,
                                 int64_t target_size);

struct SynthConfig {
  int64_t height = 128, width = 128;
  int64_t lines_min = 1, lines_max = 3;
  double width_min = 1.0, width_max = 2.5;
  enum class Background { kFlat, kGradient, kClutter };
  Background background = Background::kClutter;
  double noise_sigma = 0.02;
  uint64_t seed = 1;
};

SynthConfig::Background parse_background(const std::string& name);
std::string background_name(SynthConfig::Background bg);

// Anti-aliased segment over the background; the mask is the exact
// half-coverage rasterization (distance to segment <= width/2).
void rasterize_segment(ImageF& image, MaskBatch& mask, double x0, double y0,
                       double x1, double y1, double width, float value);

// Fully determined by (cfg.seed, index).
Sample synth_lines(const SynthConfig& cfg, int64_t index);

// Writes count samples into out_dir/{images,masks}; refuses to write into a
// non-empty directory unless force is set.
void materialize_synth(const SynthConfig& cfg, int64_t count,
                       const std::string& out_dir, bool force);

struct AugRecord {
  bool flip_h = false, flip_v = false;
  int64_t crop_x = 0, crop_y = 0, crop_w = 0, crop_h = 0;
};

// Flips (p=0.5 each) + random crop-and-resize (scale 0.75..1.0), identical
// geometry on image and mask; deterministic per (seed, sample.id).
Sample augment(const Sample& sample, uint64_t seed, AugRecord* record = nullptr);

}  // namespace plseg
