#pragma once

// Training loop (AdamW + per-step cosine annealing), evaluation over a
// sample list with optional per-condition grouping, and the epoch log
// records that back the line-delimited JSON training log.

#include "plseg/checkpoint.hpp"
#include "plseg/config.hpp"
#include "plseg/metrics.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace plseg {

class TrainingError : public std::runtime_error {
 public:
  explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

struct EpochLog {
  int64_t epoch = 0;
  double l_decode = 0, l_ed1 = 0, l_ed2 = 0, l_lf1 = 0, l_lf2 = 0;
  double total = 0;
  double lr = 0;
  double train_f1 = -1;  // filled when an eval ran this epoch
};

struct TrainResult {
  std::vector<EpochLog> log;
  int64_t steps = 0;
  bool early_stopped = false;
};

// Stacks samples into one (B,3,H,W) input tensor and mask batch.
template <class T>
Var<T> stack_images(const std::vector<const Sample*>& batch) {
  const int64_t B = int64_t(batch.size());
  const int64_t H = batch[0]->image.height, W = batch[0]->image.width;
  std::vector<T> v(size_t(B * 3 * H * W));
  for (int64_t b = 0; b < B; ++b) {
    const auto& img = batch[size_t(b)]->image;
    PLSEG_CONTRACT(img.channels == 3 && img.height == H && img.width == W,
                   "stack_images: inconsistent sample sizes");
    std::copy(img.data.begin(), img.data.end(), v.begin() + b * 3 * H * W);
  }
  return Var<T>::constant({B, 3, H, W}, std::move(v));
}

MaskBatch stack_masks(const std::vector<const Sample*>& batch);

struct EvalReport {
  MetricReport overall;
  std::map<std::string, MetricReport> per_condition;  // vitl-style grouping
  double average_miou = 0;  // mean of condition mIoUs when grouped, else overall
  AggregateMode mode = AggregateMode::kPooled;
};

EvalReport evaluate_model(LineSegNet<float>& model, const std::vector<Sample>& samples,
                          AggregateMode mode = AggregateMode::kPooled);

std::string eval_report_to_json(const EvalReport& report);
std::string epoch_log_to_json(const EpochLog& log);

using EpochCallback = std::function<void(const EpochLog&)>;

TrainResult train_model(LineSegNet<float>& model, const std::vector<Sample>& train_set,
                        const TrainConfig& cfg, AdamW<float>* opt_out = nullptr,
                        const EpochCallback& on_epoch = nullptr);

// Full pipeline used by the C API / CLI: train per config, write the echoed
// config, the jsonl log and checkpoints under out_dir; returns the final
// checkpoint path.
std::string run_training(LineSegNet<float>& model, const RunConfig& cfg,
                         const std::vector<Sample>& train_set,
                         const std::string& out_dir, bool quiet = false);

}  // namespace plseg
