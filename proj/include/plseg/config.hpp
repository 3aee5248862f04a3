#pragma once

// Run configuration: one JSON document merging the model, head flags, loss
// weights, training recipe, data paths and synth settings. Unknown keys are
// rejected; the resolved config is echoed to the output directory for
// provenance.

#include "plseg/data.hpp"
#include "plseg/model_config.hpp"

#include <cstdint>
#include <string>

namespace plseg {

struct TrainConfig {
  double lr0 = 0.0005;
  double weight_decay = 0.05;
  double lr_min = 5e-6;
  int64_t epochs = 60;
  int64_t batch_size = 4;
  uint64_t seed = 1;
  bool augment = true;
  double early_stop_f1 = 0.0;  // stop once train F1 reaches this (0 = never)
  int64_t eval_every = 0;      // epochs between train-set evals (0 = never)
  int64_t log_every = 1;
};

struct DataConfig {
  std::string root;
  std::string val_root;
  std::string layout = "ttpla_like";
  int64_t target_size = 128;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  SynthConfig synth;
  std::string out_dir;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string run_config_to_json(const RunConfig& cfg);

// parse "ed1,ed2,lf1,lf2" / "none" style head lists
HeadFlags parse_head_flags(const std::string& spec);

}  // namespace plseg
