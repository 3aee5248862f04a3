#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "plseg/losses.hpp"
#include "plseg/metrics.hpp"
#include "test_util.hpp"

using namespace plseg;
using testutil::random_var;

namespace {

MaskBatch mask_from(std::vector<uint8_t> v, int64_t B, int64_t H, int64_t W) {
  MaskBatch m;
  m.batch = B;
  m.height = H;
  m.width = W;
  m.data = std::move(v);
  return m;
}

}  // namespace

TEST_CASE("seg_loss: saturated, uniform, and oracle-checked random instance") {
  MaskBatch gt = mask_from({0, 1, 1, 0, 0, 0, 1, 0, 0, 1, 0, 0, 0, 0, 0, 1}, 1, 4, 4);

  Var<double> sat = Var<double>::leaf({1, 2, 4, 4}, false);
  for (int64_t i = 0; i < 16; ++i) {
    sat.val()[size_t(gt.data[size_t(i)] * 16 + i)] = 10.0;
    sat.val()[size_t((1 - gt.data[size_t(i)]) * 16 + i)] = -10.0;
  }
  CHECK(seg_loss(sat, gt).total.item() <= 1e-6);

  Var<double> zeros = Var<double>::leaf({1, 2, 4, 4}, false);
  CHECK(std::abs(seg_loss(zeros, gt).ce.item() - std::log(2.0)) < 1e-6);

  Rng rng(3);
  Var<double> logits = Var<double>::leaf({2, 2, 4, 4}, false);
  for (auto& v : logits.val()) v = rng.uniform(-3, 3);
  MaskBatch gt2 = mask_from({}, 2, 4, 4);
  gt2.data.resize(32);
  for (auto& v : gt2.data) v = rng.bernoulli(0.4) ? 1 : 0;
  auto out = seg_loss(logits, gt2);
  double ce = 0, inter = 0, sp = 0, sq = 0;
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t i = 0; i < 16; ++i) {
      const double z0 = logits.val()[size_t((b * 2) * 16 + i)];
      const double z1 = logits.val()[size_t((b * 2 + 1) * 16 + i)];
      const double m = std::max(z0, z1);
      const double lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m));
      ce += lse - (gt2.data[size_t(b * 16 + i)] ? z1 : z0);
      const double p1 = std::exp(z1 - lse);
      const double q1 = double(gt2.data[size_t(b * 16 + i)]);
      inter += p1 * q1;
      sp += p1 * p1;
      sq += q1 * q1;
    }
  ce /= 32.0;
  const double dice = 1.0 - (2 * inter + 1e-6) / (sp + sq + 1e-6);
  CHECK(out.ce.item() == doctest::Approx(ce).epsilon(1e-9));
  CHECK(out.dice.item() == doctest::Approx(dice).epsilon(1e-9));

  Var<double> bad = Var<double>::leaf({1, 2, 2, 2}, false);
  CHECK_THROWS_AS(seg_loss(bad, gt), ContractError);
}

TEST_CASE("seg_loss decreases monotonically toward the saturated solution") {
  Rng rng(7);
  MaskBatch gt = mask_from({}, 1, 4, 4);
  gt.data.resize(16);
  for (auto& v : gt.data) v = rng.bernoulli(0.4) ? 1 : 0;
  Var<double> target = Var<double>::leaf({1, 2, 4, 4}, false);
  for (int64_t i = 0; i < 16; ++i) {
    target.val()[size_t(gt.data[size_t(i)] * 16 + i)] = 12.0;
    target.val()[size_t((1 - gt.data[size_t(i)]) * 16 + i)] = -12.0;
  }
  double prev = 1e300;
  for (int t = 0; t <= 10; ++t) {
    auto interp = ops::mul_scalar(target, double(t) / 10.0);
    const double loss = seg_loss(interp, gt).total.item();
    CHECK(loss < prev + 1e-12);
    prev = loss;
  }
}

TEST_CASE("seg_loss gradient vs finite differences") {
  Rng rng(9);
  MaskBatch gt = mask_from({}, 1, 4, 4);
  gt.data.resize(16);
  for (auto& v : gt.data) v = rng.bernoulli(0.4) ? 1 : 0;
  auto logits = random_var<double>(rng, {1, 2, 4, 4}, true, -1, 1);
  auto loss = [&] { return seg_loss(logits, gt).total; };
  CHECK(testutil::gradcheck(logits, loss) < 1e-6);
}

TEST_CASE("confusion_counts: spec examples and brute-force agreement") {
  {
    std::vector<uint8_t> gt(64, 0);
    for (int i = 0; i < 10; ++i) gt[size_t(i * 5)] = 1;
    auto c = confusion_counts(gt, gt);
    CHECK(c.tp == 10);
    CHECK(c.fp == 0);
    CHECK(c.fn == 0);
    CHECK(c.tn == 54);
  }
  {
    std::vector<uint8_t> pred(40, 0), gt(40, 0);
    gt[3] = gt[17] = gt[22] = 1;
    auto c = confusion_counts(pred, gt);
    CHECK(c.tp == 0);
    CHECK(c.fp == 0);
    CHECK(c.fn == 3);
    CHECK(c.tn == 37);
  }
  Rng rng(11);
  for (int it = 0; it < 1000; ++it) {
    std::vector<uint8_t> pred(64), gt(64);
    for (auto& v : pred) v = rng.bernoulli(0.5) ? 1 : 0;
    for (auto& v : gt) v = rng.bernoulli(0.5) ? 1 : 0;
    auto c = confusion_counts(pred, gt);
    int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (int i = 0; i < 64; ++i) {
      if (pred[size_t(i)] == 1 && gt[size_t(i)] == 1) ++tp;
      if (pred[size_t(i)] == 1 && gt[size_t(i)] == 0) ++fp;
      if (pred[size_t(i)] == 0 && gt[size_t(i)] == 1) ++fn;
      if (pred[size_t(i)] == 0 && gt[size_t(i)] == 0) ++tn;
    }
    CHECK(c.tp == tp);
    CHECK(c.fp == fp);
    CHECK(c.fn == fn);
    CHECK(c.tn == tn);
    CHECK(c.total() == 64);
  }
  std::vector<uint8_t> bad = {0, 2, 1};
  std::vector<uint8_t> ok = {0, 1, 1};
  CHECK_THROWS_AS(confusion_counts(bad, ok), ContractError);
}

TEST_CASE("compute_metrics: hand counts, perfect, both-empty convention") {
  {
    auto r = compute_metrics({2, 1, 1, 12});
    CHECK(r.precision == doctest::Approx(2.0 / 3.0));
    CHECK(r.recall == doctest::Approx(2.0 / 3.0));
    CHECK(r.f1 == doctest::Approx(2.0 / 3.0));
    CHECK(r.iou == doctest::Approx(0.5));
    CHECK(r.miou == doctest::Approx(0.5 * (0.5 + 12.0 / 14.0)));
  }
  {
    auto r = compute_metrics({20, 0, 0, 44});
    CHECK(r.precision == 1.0);
    CHECK(r.recall == 1.0);
    CHECK(r.f1 == 1.0);
    CHECK(r.iou == 1.0);
    CHECK(r.miou == 1.0);
  }
  {
    auto r = compute_metrics({0, 0, 0, 64});  // both masks empty
    CHECK(r.iou == 1.0);
    CHECK(r.f1 == 1.0);
  }
  {
    auto r = compute_metrics({0, 3, 4, 57});  // no agreement at all
    CHECK(r.precision == 0.0);
    CHECK(r.recall == 0.0);
    CHECK(r.f1 == 0.0);
    CHECK(r.iou == 0.0);
  }
}

TEST_CASE("metric identities over random counts") {
  Rng rng(13);
  for (int it = 0; it < 10000; ++it) {
    ConfusionCounts c{rng.uniform_int(0, 500), rng.uniform_int(0, 500),
                      rng.uniform_int(0, 500), rng.uniform_int(0, 500)};
    auto r = compute_metrics(c);
    CHECK(std::abs(r.f1 - 2.0 * r.iou / (1.0 + r.iou)) < 1e-12);
    // swapping pred and gt swaps fp/fn and keeps f1
    auto rs = compute_metrics({c.tp, c.fn, c.fp, c.tn});
    CHECK(rs.f1 == doctest::Approx(r.f1).epsilon(1e-12));
    CHECK(rs.precision == doctest::Approx(r.recall).epsilon(1e-12));
    CHECK(rs.recall == doctest::Approx(r.precision).epsilon(1e-12));
  }
}

TEST_CASE("metrics of a mask against itself are perfect") {
  Rng rng(17);
  for (int it = 0; it < 50; ++it) {
    std::vector<uint8_t> m(100);
    for (auto& v : m) v = rng.bernoulli(0.3) ? 1 : 0;
    m[0] = 1;  // at least one line pixel
    auto r = compute_metrics(confusion_counts(m, m));
    CHECK(r.precision == 1.0);
    CHECK(r.recall == 1.0);
    CHECK(r.f1 == 1.0);
    CHECK(r.iou == 1.0);
  }
}

TEST_CASE("aggregate_dataset_metrics: pooling vs per-image averaging") {
  // single image: both modes equal compute_metrics
  ConfusionCounts one{5, 2, 3, 54};
  auto direct = compute_metrics(one);
  CHECK(aggregate_dataset_metrics({one}, AggregateMode::kPooled).f1 == direct.f1);
  CHECK(aggregate_dataset_metrics({one}, AggregateMode::kPerImageMean).f1 == direct.f1);

  // additivity of pooled counts
  ConfusionCounts a{1, 0, 0, 3}, b{1, 0, 0, 3};
  auto pooled = aggregate_dataset_metrics({a, b}, AggregateMode::kPooled);
  auto merged = compute_metrics({2, 0, 0, 6});
  CHECK(pooled.f1 == merged.f1);
  CHECK(pooled.iou == merged.iou);

  // pooled and per-image-mean generally differ; both independently recomputed
  Rng rng(19);
  std::vector<ConfusionCounts> counts;
  for (int i = 0; i < 10; ++i)
    counts.push_back({rng.uniform_int(0, 50), rng.uniform_int(0, 50),
                      rng.uniform_int(0, 50), rng.uniform_int(50, 200)});
  auto p = aggregate_dataset_metrics(counts, AggregateMode::kPooled);
  auto m = aggregate_dataset_metrics(counts, AggregateMode::kPerImageMean);
  ConfusionCounts total;
  for (auto& c : counts) total += c;
  CHECK(p.f1 == doctest::Approx(compute_metrics(total).f1).epsilon(1e-12));
  double mean_f1 = 0;
  for (auto& c : counts) mean_f1 += compute_metrics(c).f1;
  mean_f1 /= 10.0;
  CHECK(m.f1 == doctest::Approx(mean_f1).epsilon(1e-12));
  CHECK(p.f1 != m.f1);

  CHECK_THROWS_AS(aggregate_dataset_metrics({}, AggregateMode::kPooled), ContractError);
}
