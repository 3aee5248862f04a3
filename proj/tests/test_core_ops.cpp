#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "plseg/dynamic_conv.hpp"
#include "plseg/fixed_kernels.hpp"
#include "test_util.hpp"

using namespace plseg;
using testutil::gradcheck;
using testutil::naive_conv2d;
using testutil::random_var;

TEST_CASE("fixed kernel coefficient invariants") {
  auto lap = fixed_kernel_coeffs<double>(FixedKernelType::kLaplacian);
  auto sx = fixed_kernel_coeffs<double>(FixedKernelType::kSobelX);
  auto sy = fixed_kernel_coeffs<double>(FixedKernelType::kSobelY);
  double slap = 0, ssx = 0, ssy = 0;
  for (int i = 0; i < 9; ++i) {
    slap += lap[size_t(i)];
    ssx += sx[size_t(i)];
    ssy += sy[size_t(i)];
  }
  CHECK(slap == 0.0);
  CHECK(ssx == 0.0);
  CHECK(ssy == 0.0);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) CHECK(sy[size_t(r * 3 + c)] == sx[size_t(c * 3 + r)]);
}

TEST_CASE("laplacian of a constant image is zero in the interior") {
  Var<double> img = Var<double>::leaf({1, 1, 5, 5}, false);
  std::fill(img.val().begin(), img.val().end(), 7.0);
  auto out = apply_fixed_kernel(img, FixedKernelType::kLaplacian);
  CHECK(out.shape() == Shape{1, 1, 5, 5});
  for (int64_t y = 1; y <= 3; ++y)
    for (int64_t x = 1; x <= 3; ++x) CHECK(out.val()[size_t(y * 5 + x)] == 0.0);
}

TEST_CASE("sobel-x impulse response reproduces the coefficients") {
  Var<double> img = Var<double>::leaf({1, 1, 5, 5}, false);
  img.val()[2 * 5 + 2] = 1.0;
  auto out = apply_fixed_kernel(img, FixedKernelType::kSobelX);
  auto k = fixed_kernel_coeffs<double>(FixedKernelType::kSobelX);
  // cross-correlation: out(c - d + 1) = k(d) around the impulse at c=(2,2)
  for (int64_t dy = 0; dy < 3; ++dy)
    for (int64_t dx = 0; dx < 3; ++dx)
      CHECK(out.val()[size_t((2 - dy + 1) * 5 + (2 - dx + 1))] ==
            k[size_t(dy * 3 + dx)]);
}

TEST_CASE("sobel-x on a horizontal ramp gives 8 in the interior") {
  Var<double> img = Var<double>::leaf({1, 1, 6, 6}, false);
  for (int64_t y = 0; y < 6; ++y)
    for (int64_t x = 0; x < 6; ++x) img.val()[size_t(y * 6 + x)] = double(x);
  auto out = apply_fixed_kernel(img, FixedKernelType::kSobelX);
  for (int64_t y = 1; y <= 4; ++y)
    for (int64_t x = 1; x <= 4; ++x)
      CHECK(out.val()[size_t(y * 6 + x)] == doctest::Approx(8.0).epsilon(1e-12));
}

TEST_CASE("apply_fixed_kernel matches the dense oracle on random inputs") {
  Rng rng(101);
  for (int it = 0; it < 40; ++it) {
    const int64_t H = rng.uniform_int(3, 9), W = rng.uniform_int(3, 9);
    auto img = random_var<double>(rng, {1, 1, H, W}, false, -2, 2);
    for (auto type : {FixedKernelType::kLaplacian, FixedKernelType::kSobelX,
                      FixedKernelType::kSobelY}) {
      auto out = apply_fixed_kernel(img, type);
      auto k = fixed_kernel_coeffs<double>(type);
      auto ref = naive_conv2d(img.val(), 1, 1, H, W,
                              std::vector<double>(k.begin(), k.end()), 1, 3, 3, 1, 1);
      CHECK(testutil::max_abs_diff(out.val(), ref) < 1e-12);
    }
  }
}

TEST_CASE("apply_fixed_kernel is linear") {
  Rng rng(7);
  for (int it = 0; it < 20; ++it) {
    auto x = random_var<double>(rng, {1, 1, 6, 6}, false);
    auto y = random_var<double>(rng, {1, 1, 6, 6}, false);
    const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
    auto mix = ops::add(ops::mul_scalar(x, a), ops::mul_scalar(y, b));
    auto lhs = apply_fixed_kernel(mix, FixedKernelType::kLaplacian);
    auto rhs = ops::add(ops::mul_scalar(apply_fixed_kernel(x, FixedKernelType::kLaplacian), a),
                        ops::mul_scalar(apply_fixed_kernel(y, FixedKernelType::kLaplacian), b));
    for (size_t i = 0; i < lhs.val().size(); ++i) {
      const double denom = std::max(1.0, std::abs(rhs.val()[i]));
      CHECK(std::abs(lhs.val()[i] - rhs.val()[i]) / denom < 1e-6);
    }
  }
}

TEST_CASE("apply_fixed_kernel contract violations") {
  Var<double> two_ch = Var<double>::leaf({1, 2, 5, 5}, false);
  CHECK_THROWS_AS(apply_fixed_kernel(two_ch, FixedKernelType::kLaplacian), ContractError);
  Var<double> tiny = Var<double>::leaf({1, 1, 2, 5}, false);
  CHECK_THROWS_AS(apply_fixed_kernel(tiny, FixedKernelType::kSobelX), ContractError);
  Var<double> nan_img = Var<double>::leaf({1, 1, 4, 4}, false);
  nan_img.val()[3] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(apply_fixed_kernel(nan_img, FixedKernelType::kSobelY), ContractError);
}

TEST_CASE("dynamic conv: forced one-hot gate equals the expert's plain conv") {
  Rng rng(55);
  DynamicConv2d<double> dc("dc", 9, 2, 3, 3, 3, 4);
  auto x = random_var<double>(rng, {2, 2, 5, 5}, false);
  for (int64_t k = 0; k < 4; ++k) {
    Var<double> gate = Var<double>::leaf({2, 4}, false);
    gate.val()[size_t(0 * 4 + k)] = 1.0;
    gate.val()[size_t(1 * 4 + k)] = 1.0;
    auto y = dc.forward_with_gate(x, gate);
    const int64_t esz = 3 * 2 * 3 * 3;
    std::vector<double> wk(dc.experts().val().begin() + k * esz,
                           dc.experts().val().begin() + (k + 1) * esz);
    auto ref = naive_conv2d(x.val(), 2, 2, 5, 5, wk, 3, 3, 3, 1, 1);
    CHECK(testutil::max_abs_diff(y.val(), ref) < 1e-6);
  }
}

TEST_CASE("dynamic conv: identical experts make the gate irrelevant") {
  Rng rng(56);
  DynamicConv2d<double> dc("dc", 10, 2, 2, 1, 5, 4);
  const int64_t esz = 2 * 2 * 1 * 5;
  for (int64_t k = 1; k < 4; ++k)
    std::copy(dc.experts().val().begin(), dc.experts().val().begin() + esz,
              dc.experts().val().begin() + k * esz);
  auto x = random_var<double>(rng, {3, 2, 4, 6}, false);
  auto y = dc.forward(x);  // real (input-dependent) gate
  std::vector<double> w0(dc.experts().val().begin(), dc.experts().val().begin() + esz);
  auto ref = naive_conv2d(x.val(), 3, 2, 4, 6, w0, 2, 1, 5, 0, 2);
  CHECK(testutil::max_abs_diff(y.val(), ref) < 1e-6);
}

TEST_CASE("dynamic conv: 0.3/0.7 gate equals conv with the blended kernel") {
  Rng rng(57);
  DynamicConv2d<double> dc("dc", 11, 1, 1, 3, 3, 2);
  auto x = random_var<double>(rng, {1, 1, 4, 4}, false);
  Var<double> gate = Var<double>::leaf({1, 2}, false);
  gate.val() = {0.3, 0.7};
  auto y = dc.forward_with_gate(x, gate);
  std::vector<double> blended(9);
  for (size_t j = 0; j < 9; ++j)
    blended[j] = 0.3 * dc.experts().val()[j] + 0.7 * dc.experts().val()[9 + j];
  auto ref = naive_conv2d(x.val(), 1, 1, 4, 4, blended, 1, 3, 3, 1, 1);
  CHECK(testutil::max_abs_diff(y.val(), ref) < 1e-12);
}

TEST_CASE("dynamic conv: permuting (expert, gate) pairs leaves output unchanged") {
  Rng rng(58);
  DynamicConv2d<double> dc("dc", 12, 2, 2, 3, 1, 4);
  auto x = random_var<double>(rng, {2, 2, 5, 5}, false);
  auto gate = random_var<double>(rng, {2, 4}, false, 0.05, 0.6);
  auto y1 = dc.forward_with_gate(x, gate);

  const std::array<int64_t, 4> perm = {2, 0, 3, 1};
  const int64_t esz = 2 * 2 * 3 * 1;
  Var<double> perm_gate = Var<double>::leaf({2, 4}, false);
  DynamicConv2d<double> dc2("dc", 12, 2, 2, 3, 1, 4);
  for (int64_t k = 0; k < 4; ++k) {
    std::copy(dc.experts().val().begin() + perm[size_t(k)] * esz,
              dc.experts().val().begin() + (perm[size_t(k)] + 1) * esz,
              dc2.experts().val().begin() + k * esz);
    for (int64_t b = 0; b < 2; ++b)
      perm_gate.val()[size_t(b * 4 + k)] = gate.val()[size_t(b * 4 + perm[size_t(k)])];
  }
  auto y2 = dc2.forward_with_gate(x, perm_gate);
  CHECK(testutil::max_abs_diff(y1.val(), y2.val()) < 1e-6);
}

TEST_CASE("dynamic conv gate is a simplex point") {
  Rng rng(59);
  DynamicConv2d<double> dc("dc", 13, 4, 4, 1, 7, 4);
  for (int it = 0; it < 50; ++it) {
    auto x = random_var<double>(rng, {3, 4, 6, 6}, false, -3, 3);
    auto g = dc.gate(x);
    for (int64_t b = 0; b < 3; ++b) {
      double sum = 0;
      for (int64_t k = 0; k < 4; ++k) {
        const double v = g.val()[size_t(b * 4 + k)];
        CHECK(v >= 0.0);
        sum += v;
      }
      CHECK(std::abs(sum - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("dynamic conv configuration errors") {
  CHECK_THROWS_AS(DynamicConv2d<double>("dc", 1, 2, 2, 1, 3, 0), ConfigError);
  CHECK_THROWS_AS(DynamicConv2d<double>("dc", 1, 0, 2, 1, 3, 4), ConfigError);
  DynamicConv2d<double> dc("dc", 1, 2, 2, 1, 3, 4);
  Var<double> bad = Var<double>::leaf({1, 3, 4, 4}, false);  // channel mismatch
  CHECK_THROWS_AS(dc.forward(bad), ConfigError);
}

TEST_CASE("dynamic conv analytic gradients match finite differences") {
  Rng rng(61);
  DynamicConv2d<double> dc("dc", 14, 2, 2, 1, 3, 4);
  auto x = random_var<double>(rng, {1, 2, 5, 5}, true);
  auto q = random_var<double>(rng, {1, 2, 5, 5}, false);
  auto loss = [&] { return ops::sum_all(ops::mul(dc.forward(x), q)); };
  CHECK(gradcheck(x, loss) < 1e-4);
  CHECK(gradcheck(dc.experts(), loss) < 1e-4);
}
