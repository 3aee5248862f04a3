#pragma once

// Checkpoint archive: magic + JSON manifest followed by raw little-endian
// float32 blobs. Every tensor carries a name, a component tag and a kind,
// so inference export is a pure manifest filter.

#include "plseg/backbone.hpp"
#include "plseg/optimizer.hpp"

#include <string>
#include <vector>

namespace plseg {

constexpr int kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[9] = "PLSEGCK1";

struct CheckpointTensor {
  std::string name;
  std::string component;
  ParamKind kind = ParamKind::kParam;
  Shape shape;
  std::vector<float> values;
};

struct OptEntry {
  std::string name;
  std::vector<float> m, v;
};

struct Checkpoint {
  int version = kCheckpointVersion;
  int64_t step = 0;
  std::string config_json;  // RunConfig snapshot
  std::vector<CheckpointTensor> tensors;
  bool has_opt = false;
  std::vector<OptEntry> opt;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint snapshot_model(const LineSegNet<float>& model, const std::string& config_json,
                          int64_t step, AdamW<float>* opt = nullptr);

// strict: every model tensor must exist with the right shape
void load_into_model(LineSegNet<float>& model, const Checkpoint& ckpt);
void load_opt_state(AdamW<float>& opt, const Checkpoint& ckpt);

// keep backbone tensors only, drop optimizer state, mark heads disabled in
// the embedded config; idempotent.
Checkpoint export_inference(const Checkpoint& ckpt);

}  // namespace plseg
