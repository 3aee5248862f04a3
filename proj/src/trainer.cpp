#include "plseg/trainer.hpp"

#include "plseg/png_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

using nlohmann::json;
namespace fs = std::filesystem;

namespace plseg {

MaskBatch stack_masks(const std::vector<const Sample*>& batch) {
  MaskBatch m;
  m.batch = int64_t(batch.size());
  m.height = batch[0]->mask.height;
  m.width = batch[0]->mask.width;
  m.data.reserve(size_t(m.numel()));
  for (const Sample* s : batch) {
    PLSEG_CONTRACT(s->mask.height == m.height && s->mask.width == m.width,
                   "stack_masks: inconsistent sample sizes");
    m.data.insert(m.data.end(), s->mask.data.begin(), s->mask.data.end());
  }
  return m;
}

namespace {

std::string condition_of(const std::string& id) {
  auto pos = id.find('/');
  return pos == std::string::npos ? std::string() : id.substr(0, pos);
}

const char* check_components(const LossBundle<float>& b) {
  if (!std::isfinite(b.l_decode)) return "l_decode";
  if (!std::isfinite(b.l_ed1)) return "l_ed1";
  if (!std::isfinite(b.l_ed2)) return "l_ed2";
  if (!std::isfinite(b.l_lf1)) return "l_lf1";
  if (!std::isfinite(b.l_lf2)) return "l_lf2";
  if (!std::isfinite(b.total_value)) return "total";
  return nullptr;
}

// pooled line-class F1 of the model on a sample list (inference mode)
double train_set_f1(LineSegNet<float>& model, const std::vector<Sample>& samples) {
  ConfusionCounts pooled;
  for (const auto& s : samples) {
    std::vector<const Sample*> one{&s};
    auto r = model.forward_infer(stack_images<float>(one));
    pooled += confusion_counts(r.mask.data(), s.mask.data.data(), int64_t(r.mask.size()));
  }
  return compute_metrics(pooled).f1;
}

}  // namespace

EvalReport evaluate_model(LineSegNet<float>& model, const std::vector<Sample>& samples,
                          AggregateMode mode) {
  PLSEG_CONTRACT(!samples.empty(), "evaluate_model: empty dataset");
  EvalReport report;
  report.mode = mode;
  std::vector<ConfusionCounts> per_image;
  std::map<std::string, std::vector<ConfusionCounts>> by_condition;
  per_image.reserve(samples.size());
  for (const auto& s : samples) {
    std::vector<const Sample*> one{&s};
    auto r = model.forward_infer(stack_images<float>(one));
    auto c = confusion_counts(r.mask.data(), s.mask.data.data(), int64_t(r.mask.size()));
    per_image.push_back(c);
    const std::string cond = condition_of(s.id);
    if (!cond.empty()) by_condition[cond].push_back(c);
  }
  report.overall = aggregate_dataset_metrics(per_image, mode);
  if (!by_condition.empty()) {
    double sum = 0;
    for (const auto& [cond, counts] : by_condition) {
      report.per_condition[cond] = aggregate_dataset_metrics(counts, mode);
      sum += report.per_condition[cond].miou;
    }
    report.average_miou = sum / double(by_condition.size());
  } else {
    report.average_miou = report.overall.miou;
  }
  return report;
}

static json metric_to_json(const MetricReport& m) {
  return {{"precision", m.precision},
          {"recall", m.recall},
          {"f1", m.f1},
          {"iou", m.iou},
          {"miou", m.miou},
          {"tp", m.confusion.tp},
          {"fp", m.confusion.fp},
          {"fn", m.confusion.fn},
          {"tn", m.confusion.tn}};
}

std::string eval_report_to_json(const EvalReport& report) {
  json j = metric_to_json(report.overall);
  j["aggregate"] = report.mode == AggregateMode::kPooled ? "pooled" : "per_image_mean";
  j["average_miou"] = report.average_miou;
  if (!report.per_condition.empty()) {
    json conds;
    for (const auto& [cond, m] : report.per_condition) conds[cond] = metric_to_json(m);
    j["conditions"] = conds;
  }
  return j.dump(2);
}

std::string epoch_log_to_json(const EpochLog& log) {
  json j = {{"epoch", log.epoch},   {"l_decode", log.l_decode}, {"l_ed1", log.l_ed1},
            {"l_ed2", log.l_ed2},   {"l_lf1", log.l_lf1},       {"l_lf2", log.l_lf2},
            {"total", log.total},   {"lr", log.lr}};
  if (log.train_f1 >= 0) j["train_f1"] = log.train_f1;
  return j.dump();
}

TrainResult train_model(LineSegNet<float>& model, const std::vector<Sample>& train_set,
                        const TrainConfig& cfg, AdamW<float>* opt_out,
                        const EpochCallback& on_epoch) {
  PLSEG_CONTRACT(!train_set.empty(), "train_model: empty dataset");
  const int64_t n = int64_t(train_set.size());
  const int64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const int64_t total_steps = cfg.epochs * steps_per_epoch;
  CosineSchedule sched(cfg.lr0, cfg.lr_min, total_steps);

  AdamW<float> local_opt(model.parameters(), {cfg.weight_decay});
  AdamW<float>& opt = opt_out ? *opt_out : local_opt;

  TrainResult result;
  int64_t step = opt.steps_taken();
  std::vector<int64_t> order;
  order.resize(size_t(n));
  std::iota(order.begin(), order.end(), 0);

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(cfg.seed, 0x5Au + uint64_t(epoch)));
    for (int64_t i = n - 1; i > 0; --i)
      std::swap(order[size_t(i)], order[size_t(shuffle_rng.uniform_int(0, i))]);

    const uint64_t aug_seed = mix_seed(cfg.seed, 0xA6u + uint64_t(epoch));
    EpochLog log;
    log.epoch = epoch;
    int64_t batches = 0;

    for (int64_t start = 0; start < n; start += cfg.batch_size) {
      const int64_t bsz = std::min(cfg.batch_size, n - start);
      std::vector<Sample> augmented;
      std::vector<const Sample*> batch;
      augmented.reserve(size_t(bsz));
      batch.reserve(size_t(bsz));
      for (int64_t i = 0; i < bsz; ++i) {
        const Sample& s = train_set[size_t(order[size_t(start + i)])];
        if (cfg.augment) {
          augmented.push_back(augment(s, aug_seed));
          batch.push_back(&augmented.back());
        } else {
          batch.push_back(&s);
        }
      }
      auto images = stack_images<float>(batch);
      auto masks = stack_masks(batch);

      auto bundle = model.forward_train(images, masks);
      if (const char* bad = check_components(bundle))
        throw TrainingError("non-finite loss in component " + std::string(bad) +
                            " at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(step));
      const double lr = sched.lr(step);
      opt.zero_grad();
      bundle.total.backward();
      opt.step(lr);
      ++step;
      ++batches;

      log.l_decode += bundle.l_decode;
      log.l_ed1 += bundle.l_ed1;
      log.l_ed2 += bundle.l_ed2;
      log.l_lf1 += bundle.l_lf1;
      log.l_lf2 += bundle.l_lf2;
      log.total += bundle.total_value;
      log.lr = lr;
    }

    const double inv = 1.0 / double(batches);
    log.l_decode *= inv;
    log.l_ed1 *= inv;
    log.l_ed2 *= inv;
    log.l_lf1 *= inv;
    log.l_lf2 *= inv;
    log.total *= inv;

    const bool eval_now = cfg.eval_every > 0 && ((epoch + 1) % cfg.eval_every == 0 ||
                                                 epoch + 1 == cfg.epochs);
    if (eval_now) log.train_f1 = train_set_f1(model, train_set);
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);

    if (eval_now && cfg.early_stop_f1 > 0 && log.train_f1 >= cfg.early_stop_f1) {
      result.early_stopped = true;
      break;
    }
  }
  result.steps = step;
  return result;
}

std::string run_training(LineSegNet<float>& model, const RunConfig& cfg,
                         const std::vector<Sample>& train_set,
                         const std::string& out_dir, bool quiet) {
  fs::create_directories(out_dir);
  {
    std::ofstream echo(fs::path(out_dir) / "config.json");
    echo << run_config_to_json(cfg) << "\n";
  }
  std::ofstream log_stream(fs::path(out_dir) / "train_log.jsonl");
  if (!log_stream) throw IoError("cannot write training log in " + out_dir);

  AdamW<float> opt(model.parameters(), {cfg.train.weight_decay});
  auto result = train_model(model, train_set, cfg.train, &opt,
                            [&](const EpochLog& log) {
                              log_stream << epoch_log_to_json(log) << "\n";
                              log_stream.flush();
                              if (!quiet && (log.epoch % std::max<int64_t>(1, cfg.train.log_every) == 0)) {
                                std::printf("epoch %lld total %.4f decode %.4f lr %.2e\n",
                                            static_cast<long long>(log.epoch), log.total,
                                            log.l_decode, log.lr);
                                std::fflush(stdout);
                              }
                            });

  const std::string ckpt_path = (fs::path(out_dir) / "checkpoint.plseg").string();
  auto ckpt = snapshot_model(model, run_config_to_json(cfg), result.steps, &opt);
  save_checkpoint(ckpt, ckpt_path);
  return ckpt_path;
}

}  // namespace plseg
