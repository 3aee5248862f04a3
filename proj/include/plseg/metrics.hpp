#pragma once

// Pixel confusion counts and the derived segmentation metrics. Both-empty
// masks short-circuit to perfect scores; remaining 0/0 cases resolve to 0.

#include "plseg/tensor.hpp"

#include <cstdint>
#include <vector>

namespace plseg {

struct ConfusionCounts {
  int64_t tp = 0, fp = 0, fn = 0, tn = 0;

  int64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
};

struct MetricReport {
  double precision = 0, recall = 0, f1 = 0, iou = 0, miou = 0;
  ConfusionCounts confusion;
};

enum class AggregateMode { kPooled, kPerImageMean };

inline ConfusionCounts confusion_counts(const uint8_t* pred, const uint8_t* gt,
                                        int64_t n) {
  ConfusionCounts c;
  for (int64_t i = 0; i < n; ++i) {
    PLSEG_CONTRACT(pred[i] <= 1 && gt[i] <= 1,
                   "confusion_counts: labels must be in {0,1}");
    if (pred[i] && gt[i])
      ++c.tp;
    else if (pred[i] && !gt[i])
      ++c.fp;
    else if (!pred[i] && gt[i])
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

inline ConfusionCounts confusion_counts(const std::vector<uint8_t>& pred,
                                        const std::vector<uint8_t>& gt) {
  PLSEG_CONTRACT(pred.size() == gt.size(), "confusion_counts: size mismatch");
  return confusion_counts(pred.data(), gt.data(), int64_t(pred.size()));
}

inline MetricReport compute_metrics(const ConfusionCounts& c) {
  MetricReport r;
  r.confusion = c;
  const int64_t line_union = c.tp + c.fp + c.fn;
  if (line_union == 0) {
    // both masks empty of line pixels
    r.precision = r.recall = r.f1 = r.iou = 1.0;
  } else {
    r.precision = (c.tp + c.fp) > 0 ? double(c.tp) / double(c.tp + c.fp) : 0.0;
    r.recall = (c.tp + c.fn) > 0 ? double(c.tp) / double(c.tp + c.fn) : 0.0;
    r.f1 = (r.precision + r.recall) > 0
               ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
               : 0.0;
    r.iou = double(c.tp) / double(line_union);
  }
  const int64_t bg_union = c.tn + c.fp + c.fn;
  const double bg_iou = bg_union == 0 ? 1.0 : double(c.tn) / double(bg_union);
  r.miou = 0.5 * (r.iou + bg_iou);
  return r;
}

inline MetricReport aggregate_dataset_metrics(const std::vector<ConfusionCounts>& per_image,
                                              AggregateMode mode = AggregateMode::kPooled) {
  PLSEG_CONTRACT(!per_image.empty(), "aggregate_dataset_metrics: empty dataset");
  if (mode == AggregateMode::kPooled) {
    ConfusionCounts pooled;
    for (const auto& c : per_image) pooled += c;
    return compute_metrics(pooled);
  }
  MetricReport mean;
  for (const auto& c : per_image) {
    MetricReport r = compute_metrics(c);
    mean.precision += r.precision;
    mean.recall += r.recall;
    mean.f1 += r.f1;
    mean.iou += r.iou;
    mean.miou += r.miou;
    mean.confusion += c;
  }
  const double inv = 1.0 / double(per_image.size());
  mean.precision *= inv;
  mean.recall *= inv;
  mean.f1 *= inv;
  mean.iou *= inv;
  mean.miou *= inv;
  return mean;
}

}  // namespace plseg
