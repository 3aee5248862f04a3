#pragma once

#include <array>
#include <cstdint>

namespace plseg {

struct BackboneConfig {
  std::array<int64_t, 4> stage_channels{16, 32, 64, 128};
  int64_t bottleneck_channels = 160;
  int64_t num_classes = 2;
};

struct HeadFlags {
  bool ed1 = true, ed2 = true, lf1 = true, lf2 = true;

  bool any() const { return ed1 || ed2 || lf1 || lf2; }
};

// Eq-style weights: alpha/beta inside each CE+Dice loss, theta..mu over the
// five loss terms.
struct LossWeights {
  double alpha = 1.0, beta = 0.4;
  double theta = 1.0, iota = 1.0, kappa = 1.0, lambda = 1.0, mu = 1.0;
};

struct ModelConfig {
  BackboneConfig backbone;
  HeadFlags heads;
  LossWeights loss;
  std::array<int64_t, 3> dle_lengths{3, 7, 11};
  int64_t dyn_experts = 4;
  double dyn_temperature = 30.0;
  int64_t gate_reduction = 4;
  uint64_t seed = 1;
};

}  // namespace plseg
