#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "plseg/backbone.hpp"
#include "test_util.hpp"

#include <map>
#include <set>

using namespace plseg;
using testutil::random_var;

namespace {

ModelConfig small_config(uint64_t seed, HeadFlags heads = {true, true, true, true}) {
  ModelConfig cfg;
  cfg.backbone.stage_channels = {4, 8, 12, 16};
  cfg.backbone.bottleneck_channels = 20;
  cfg.dle_lengths = {3, 5, 7};
  cfg.heads = heads;
  cfg.seed = seed;
  return cfg;
}

MaskBatch random_mask(Rng& rng, int64_t B, int64_t H, int64_t W, double p = 0.15) {
  MaskBatch m;
  m.batch = B;
  m.height = H;
  m.width = W;
  m.data.resize(size_t(B * H * W));
  for (auto& v : m.data) v = rng.bernoulli(p) ? 1 : 0;
  return m;
}

}  // namespace

TEST_CASE("encoder shape pyramid at 256 and 512, indivisible input rejected") {
  ModelConfig cfg;  // default channels 16,32,64,128 / 160
  cfg.seed = 3;
  LineSegNet<float> model(cfg);
  {
    NoGradGuard ng;
    Rng rng(1);
    auto f = model.encoder_forward(random_var<float>(rng, {1, 3, 256, 256}, false), false);
    CHECK(f.s1.shape() == Shape{1, 16, 128, 128});
    CHECK(f.s2.shape() == Shape{1, 32, 64, 64});
    CHECK(f.s3.shape() == Shape{1, 64, 32, 32});
    CHECK(f.s4.shape() == Shape{1, 128, 16, 16});
    CHECK(f.bottleneck.shape() == Shape{1, 160, 8, 8});
  }
  {
    NoGradGuard ng;
    Rng rng(2);
    auto f = model.encoder_forward(random_var<float>(rng, {2, 3, 512, 512}, false), false);
    CHECK(f.s4.shape() == Shape{2, 128, 32, 32});
  }
  Rng rng(3);
  CHECK_THROWS_AS(model.encoder_forward(random_var<float>(rng, {1, 3, 250, 250}, false),
                                        false),
                  ContractError);
  CHECK_THROWS_WITH_AS(
      model.encoder_forward(random_var<float>(rng, {1, 3, 250, 250}, false), false),
      doctest::Contains("divisible by 32"), ContractError);
}

TEST_CASE("shape pyramid holds for several valid sizes on the small config") {
  auto cfg = small_config(5);
  LineSegNet<float> model(cfg);
  Rng rng(5);
  NoGradGuard ng;
  for (int64_t size : {64, 96, 128}) {
    auto f = model.encoder_forward(random_var<float>(rng, {1, 3, size, size}, false), false);
    CHECK(f.s1.shape() == Shape{1, 4, size / 2, size / 2});
    CHECK(f.s2.shape() == Shape{1, 8, size / 4, size / 4});
    CHECK(f.s3.shape() == Shape{1, 12, size / 8, size / 8});
    CHECK(f.s4.shape() == Shape{1, 16, size / 16, size / 16});
    CHECK(f.bottleneck.shape() == Shape{1, 20, size / 32, size / 32});
  }
}

TEST_CASE("decoder produces full-resolution logits, deterministic in eval mode") {
  auto cfg = small_config(7);
  LineSegNet<float> model(cfg);
  Rng rng(7);
  auto img = random_var<float>(rng, {2, 3, 64, 64}, false);
  NoGradGuard ng;
  auto f = model.encoder_forward(img, false);
  auto logits = model.decoder_forward(f, false);
  CHECK(logits.shape() == Shape{2, 2, 64, 64});

  auto f2 = model.encoder_forward(img, false);
  auto logits2 = model.decoder_forward(f2, false);
  CHECK(logits.val() == logits2.val());  // bitwise
}

TEST_CASE("forward_train: degenerate weights and component-sum oracle") {
  // double instantiation: the 1e-9 weighted-sum tolerance is a double claim
  Rng rng(11);
  auto img = random_var<double>(rng, {2, 3, 64, 64}, false, 0, 1);
  auto gt = random_mask(rng, 2, 64, 64);

  // booster weights all zero: total equals the decode loss exactly
  {
    auto cfg = small_config(11);
    cfg.loss.iota = cfg.loss.kappa = cfg.loss.lambda = cfg.loss.mu = 0.0;
    LineSegNet<double> model(cfg);
    auto bundle = model.forward_train(img, gt);
    CHECK(bundle.total_value == bundle.l_decode);
  }

  // random weights: total = weighted sum of components to 1e-9
  for (int it = 0; it < 3; ++it) {
    auto cfg = small_config(uint64_t(12 + it));
    cfg.loss.theta = rng.uniform(0.1, 2);
    cfg.loss.iota = rng.uniform(0.1, 2);
    cfg.loss.kappa = rng.uniform(0.1, 2);
    cfg.loss.lambda = rng.uniform(0.1, 2);
    cfg.loss.mu = rng.uniform(0.1, 2);
    LineSegNet<double> model(cfg);
    auto bundle = model.forward_train(img, gt);
    const double expect = cfg.loss.theta * bundle.l_decode + cfg.loss.iota * bundle.l_ed1 +
                          cfg.loss.kappa * bundle.l_ed2 +
                          cfg.loss.lambda * bundle.l_lf1 + cfg.loss.mu * bundle.l_lf2;
    CHECK(std::abs(bundle.total_value - expect) < 1e-9 * std::max(1.0, std::abs(expect)));
  }

  // unit weights, hand arithmetic analogue
  {
    auto cfg = small_config(15);
    LineSegNet<double> model(cfg);
    auto bundle = model.forward_train(img, gt);
    const double expect = bundle.l_decode + bundle.l_ed1 + bundle.l_ed2 + bundle.l_lf1 +
                          bundle.l_lf2;
    CHECK(bundle.total_value == doctest::Approx(expect).epsilon(1e-9));
  }
}

TEST_CASE("forward_infer: booster independence, argmax consistency, degenerate output") {
  auto cfg = small_config(21);
  LineSegNet<float> model(cfg);
  Rng rng(21);
  auto img = random_var<float>(rng, {1, 3, 64, 64}, false, 0, 1);

  auto r1 = model.forward_infer(img);
  CHECK(r1.mask.size() == size_t(64 * 64));

  // zero every booster parameter: inference output must be bitwise identical
  for (auto& e : model.parameters())
    if (e.component != "backbone") {
      Var<float> v = e.var;
      std::fill(v.val().begin(), v.val().end(), 0.f);
    }
  auto r2 = model.forward_infer(img);
  CHECK(r1.mask == r2.mask);
  CHECK(r1.probs == r2.probs);

  // argmax oracle on exported probabilities
  for (size_t i = 0; i < r1.mask.size(); ++i) {
    const float p0 = r1.probs[i], p1 = r1.probs[r1.mask.size() + i];
    CHECK(r1.mask[i] == (p1 > p0 ? 1 : 0));
  }

  // all-background collapse is a valid output: force it via the classifier bias
  for (auto& e : model.parameters())
    if (e.name == "dec.cls.b") {
      Var<float> v = e.var;
      v.val() = {50.f, -50.f};
    }
  auto r3 = model.forward_infer(img);
  for (uint8_t m : r3.mask) CHECK(m == 0);
}

TEST_CASE("gradient routing: stage-1 parameters see the ED1 loss") {
  Rng rng(31);
  auto img = random_var<float>(rng, {1, 3, 64, 64}, false, 0, 1);
  auto gt = random_mask(rng, 1, 64, 64);

  auto grads_with_iota = [&](double iota) {
    auto cfg = small_config(31);
    cfg.loss.iota = iota;
    LineSegNet<float> model(cfg);
    auto bundle = model.forward_train(img, gt);
    bundle.total.backward();
    std::vector<float> out;
    for (auto& e : model.parameters())
      if (e.name.rfind("enc.b1.", 0) == 0 && e.kind == ParamKind::kParam) {
        CHECK_FALSE(e.var.grad().empty());
        out.insert(out.end(), e.var.grad().begin(), e.var.grad().end());
      }
    return out;
  };
  auto g0 = grads_with_iota(0.0);
  auto g1 = grads_with_iota(1.0);
  REQUIRE(g0.size() == g1.size());
  double diff = 0;
  for (size_t i = 0; i < g0.size(); ++i) diff = std::max(diff, std::abs(double(g0[i] - g1[i])));
  CHECK(diff > 0.0);
}

TEST_CASE("count_params: containment, equality without heads, manifest-walk oracle") {
  auto cfg = small_config(41);
  LineSegNet<float> with_heads(cfg);
  CHECK(with_heads.count_params(ParamMode::kTrain) >
        with_heads.count_params(ParamMode::kInfer));

  auto cfg_off = small_config(41, {false, false, false, false});
  LineSegNet<float> no_heads(cfg_off);
  CHECK(no_heads.count_params(ParamMode::kTrain) == no_heads.count_params(ParamMode::kInfer));

  int64_t train = 0, infer = 0;
  for (const auto& e : with_heads.parameters()) {
    if (e.kind != ParamKind::kParam) continue;
    train += e.var.numel();
    if (e.component == "backbone") infer += e.var.numel();
  }
  CHECK(with_heads.count_params(ParamMode::kTrain) == train);
  CHECK(with_heads.count_params(ParamMode::kInfer) == infer);
}

TEST_CASE("parameter names are unique and component tags are well-formed") {
  auto cfg = small_config(51);
  LineSegNet<float> model(cfg);
  std::set<std::string> names;
  for (const auto& e : model.parameters()) {
    CHECK(names.insert(e.name).second);
    CHECK((e.component == "backbone" || e.component == "ed1" || e.component == "ed2" ||
           e.component == "lf1" || e.component == "lf2"));
  }
}

TEST_CASE("backbone init is identical with and without heads attached") {
  auto a = small_config(61);
  auto b = small_config(61, {false, false, false, false});
  LineSegNet<float> ma(a), mb(b);
  auto pa = ma.parameters();
  std::map<std::string, std::vector<float>> backbone_a;
  for (auto& e : pa)
    if (e.component == "backbone") backbone_a[e.name] = e.var.val();
  int checked = 0;
  for (auto& e : mb.parameters()) {
    REQUIRE(backbone_a.count(e.name) == 1);
    CHECK(backbone_a[e.name] == e.var.val());
    ++checked;
  }
  CHECK(checked > 0);
}
