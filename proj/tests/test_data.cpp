#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "plseg/data.hpp"
#include "plseg/png_io.hpp"

#include <filesystem>
#include <fstream>
#include <unistd.h>

using namespace plseg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("plseg_test_" + tag + "_" +
                                        std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void check_sample_invariants(const Sample& s) {
  CHECK(s.image.channels == 3);
  CHECK(s.image.height == s.mask.height);
  CHECK(s.image.width == s.mask.width);
  CHECK(s.mask.batch == 1);
  for (float v : s.image.data) {
    CHECK(v >= 0.f);
    CHECK(v <= 1.f);
  }
  for (uint8_t v : s.mask.data) CHECK(v <= 1);
}

}  // namespace

TEST_CASE("synth_lines is bitwise deterministic per (seed, index)") {
  SynthConfig cfg;
  cfg.seed = 99;
  auto a = synth_lines(cfg, 7);
  auto b = synth_lines(cfg, 7);
  CHECK(a.image.data == b.image.data);
  CHECK(a.mask.data == b.mask.data);
  CHECK(a.id == b.id);
  auto c = synth_lines(cfg, 8);
  CHECK(a.image.data != c.image.data);
  check_sample_invariants(a);
}

TEST_CASE("synth_lines with zero lines gives an empty mask") {
  SynthConfig cfg;
  cfg.lines_min = cfg.lines_max = 0;
  auto s = synth_lines(cfg, 0);
  for (uint8_t v : s.mask.data) CHECK(v == 0);
}

TEST_CASE("rasterize_segment: horizontal width-1 line fills exactly its row") {
  ImageF img = make_image(3, 16, 16, 0.5f);
  MaskBatch mask;
  mask.batch = 1;
  mask.height = 16;
  mask.width = 16;
  mask.data.assign(256, 0);
  const int64_t r = 6;
  rasterize_segment(img, mask, 2.0, double(r) + 0.5, 14.0, double(r) + 0.5, 1.0, 1.0f);
  for (int64_t y = 0; y < 16; ++y)
    for (int64_t x = 0; x < 16; ++x) {
      const bool in_span = y == r && x >= 2 && x < 14;
      // analytic: pixel center distance to the segment vs width/2
      CHECK(mask.data[size_t(y * 16 + x)] == (in_span ? 1 : 0));
    }
}

TEST_CASE("synth foreground ratio stays small over 100 samples") {
  SynthConfig cfg;
  cfg.seed = 5;
  double total_fg = 0, total_px = 0;
  for (int i = 0; i < 100; ++i) {
    auto s = synth_lines(cfg, i);
    for (uint8_t v : s.mask.data) total_fg += v;
    total_px += double(s.mask.data.size());
  }
  CHECK(total_fg / total_px < 0.05);
  CHECK(total_fg > 0);
}

TEST_CASE("downsample_mask: zeros, line survival, block-max oracle, contracts") {
  MaskBatch zeros;
  zeros.batch = 2;
  zeros.height = 16;
  zeros.width = 16;
  zeros.data.assign(512, 0);
  for (int64_t f : {2, 4, 8}) {
    auto d = downsample_mask(zeros, f);
    for (uint8_t v : d.data) CHECK(v == 0);
  }

  // a 1-pixel diagonal-ish line across 32x32 survives factor 8 and stays connected
  MaskBatch line;
  line.batch = 1;
  line.height = 32;
  line.width = 32;
  line.data.assign(1024, 0);
  for (int64_t x = 0; x < 32; ++x) line.data[size_t((x / 2 + 8) * 32 + x)] = 1;
  auto d = downsample_mask(line, 8);
  int64_t fg = 0;
  for (uint8_t v : d.data) fg += v;
  CHECK(fg > 0);
  // connectivity (8-neighborhood) via flood fill from the first fg pixel
  std::vector<uint8_t> seen(d.data.size(), 0);
  int64_t start = -1;
  for (size_t i = 0; i < d.data.size(); ++i)
    if (d.data[i]) {
      start = int64_t(i);
      break;
    }
  std::vector<int64_t> stack{start};
  seen[size_t(start)] = 1;
  int64_t reached = 0;
  while (!stack.empty()) {
    const int64_t p = stack.back();
    stack.pop_back();
    ++reached;
    const int64_t y = p / d.width, x = p % d.width;
    for (int64_t dy = -1; dy <= 1; ++dy)
      for (int64_t dx = -1; dx <= 1; ++dx) {
        const int64_t ny = y + dy, nx = x + dx;
        if (ny < 0 || ny >= d.height || nx < 0 || nx >= d.width) continue;
        const int64_t q = ny * d.width + nx;
        if (d.data[size_t(q)] && !seen[size_t(q)]) {
          seen[size_t(q)] = 1;
          stack.push_back(q);
        }
      }
  }
  CHECK(reached == fg);

  // random mask equals the explicit block-max loop
  Rng rng(23);
  MaskBatch m;
  m.batch = 1;
  m.height = 16;
  m.width = 16;
  m.data.resize(256);
  for (auto& v : m.data) v = rng.bernoulli(0.2) ? 1 : 0;
  auto got = downsample_mask(m, 4);
  for (int64_t ty = 0; ty < 4; ++ty)
    for (int64_t tx = 0; tx < 4; ++tx) {
      uint8_t expect = 0;
      for (int64_t y = ty * 4; y < (ty + 1) * 4; ++y)
        for (int64_t x = tx * 4; x < (tx + 1) * 4; ++x)
          expect |= m.data[size_t(y * 16 + x)];
      CHECK(got.data[size_t(ty * 4 + tx)] == expect);
    }

  MaskBatch odd;
  odd.batch = 1;
  odd.height = 10;
  odd.width = 16;
  odd.data.assign(160, 0);
  CHECK_THROWS_AS(downsample_mask(odd, 4), ContractError);
}

TEST_CASE("mask_resize_maxpool never drops and never invents line pixels") {
  Rng rng(29);
  for (int it = 0; it < 20; ++it) {
    MaskBatch src;
    src.batch = 1;
    src.height = rng.uniform_int(5, 40);
    src.width = rng.uniform_int(5, 40);
    src.data.resize(size_t(src.height * src.width));
    for (auto& v : src.data) v = rng.bernoulli(0.1) ? 1 : 0;
    const int64_t th = rng.uniform_int(4, 32), tw = rng.uniform_int(4, 32);
    auto dst = mask_resize_maxpool(src, th, tw);

    // oracle: per target pixel block max over its tiling box
    for (int64_t ty = 0; ty < th; ++ty)
      for (int64_t tx = 0; tx < tw; ++tx) {
        int64_t y0 = ty * src.height / th;
        int64_t y1 = std::max(y0 + 1, ((ty + 1) * src.height + th - 1) / th);
        y1 = std::min(y1, src.height);
        int64_t x0 = tx * src.width / tw;
        int64_t x1 = std::max(x0 + 1, ((tx + 1) * src.width + tw - 1) / tw);
        x1 = std::min(x1, src.width);
        uint8_t expect = 0;
        for (int64_t y = y0; y < y1; ++y)
          for (int64_t x = x0; x < x1; ++x) expect |= src.data[size_t(y * src.width + x)];
        CHECK(dst.data[size_t(ty * tw + tx)] == expect);
      }

    // every source line pixel lands in at least one target line pixel
    bool src_has_fg = false;
    for (uint8_t v : src.data) src_has_fg |= v != 0;
    bool dst_has_fg = false;
    for (uint8_t v : dst.data) dst_has_fg |= v != 0;
    CHECK(src_has_fg == dst_has_fg);
  }
}

TEST_CASE("materialize + load_dataset round trip, ordering, orphan errors") {
  TempDir dir("loader");
  SynthConfig cfg;
  cfg.seed = 17;
  cfg.height = 64;
  cfg.width = 48;  // non-square source exercises the resize path
  materialize_synth(cfg, 3, dir.path.string(), false);

  auto samples = load_dataset(dir.path.string(), DatasetLayout::kTtplaLike, 64);
  REQUIRE(samples.size() == 3);
  CHECK(samples[0].id == "synth_000000");
  CHECK(samples[1].id == "synth_000001");
  CHECK(samples[2].id == "synth_000002");
  for (const auto& s : samples) {
    CHECK(s.image.height == 64);
    CHECK(s.image.width == 64);
    check_sample_invariants(s);
  }

  // every source line pixel must map into the resized mask
  auto src = synth_lines(cfg, 0);
  auto resized = mask_resize_maxpool(src.mask, 64, 64);
  CHECK(resized.data == samples[0].mask.data);

  // refuse to overwrite without force
  CHECK_THROWS_AS(materialize_synth(cfg, 1, dir.path.string(), false), IoError);
  materialize_synth(cfg, 3, dir.path.string(), true);  // force succeeds

  // orphan image
  {
    std::vector<uint8_t> px(16 * 16 * 3, 100);
    write_png_rgb((dir.path / "images" / "zz_orphan.png").string(), px.data(), 16, 16);
  }
  CHECK_THROWS_WITH_AS(load_dataset(dir.path.string(), DatasetLayout::kTtplaLike, 64),
                       doctest::Contains("zz_orphan"), IoError);
  fs::remove(dir.path / "images" / "zz_orphan.png");

  // orphan mask
  {
    std::vector<uint8_t> px(16 * 16, 255);
    write_png_gray((dir.path / "masks" / "aa_orphan.png").string(), px.data(), 16, 16);
  }
  CHECK_THROWS_WITH_AS(load_dataset(dir.path.string(), DatasetLayout::kTtplaLike, 64),
                       doctest::Contains("aa_orphan"), IoError);
}

TEST_CASE("materialized synth dataset is checksum-stable for the same seed") {
  TempDir d1("synth_a"), d2("synth_b");
  SynthConfig cfg;
  cfg.seed = 31;
  materialize_synth(cfg, 2, d1.path.string(), false);
  materialize_synth(cfg, 2, d2.path.string(), false);
  for (const char* rel : {"images/synth_000000.png", "masks/synth_000001.png"}) {
    std::ifstream f1(d1.path / rel, std::ios::binary);
    std::ifstream f2(d2.path / rel, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
    CHECK(!s1.empty());
  }
}

TEST_CASE("vitl_like layout loads conditions and prefixes ids") {
  TempDir dir("vitl");
  SynthConfig cfg;
  cfg.height = 32;
  cfg.width = 32;
  int seed = 1;
  for (const char* cond : {"Day", "Fog", "Night"}) {
    cfg.seed = uint64_t(seed++);
    materialize_synth(cfg, 2, (dir.path / cond).string(), false);
  }
  auto samples = load_dataset(dir.path.string(), DatasetLayout::kVitlLike, 32);
  REQUIRE(samples.size() == 6);
  CHECK(samples[0].id == "Day/synth_000000");
  CHECK(samples[5].id == "Night/synth_000001");
}

TEST_CASE("augment: determinism, flip involution, crop record consistency") {
  SynthConfig cfg;
  cfg.seed = 77;
  auto s = synth_lines(cfg, 0);

  AugRecord rec1, rec2;
  auto a1 = augment(s, 123, &rec1);
  auto a2 = augment(s, 123, &rec2);
  CHECK(a1.image.data == a2.image.data);
  CHECK(a1.mask.data == a2.mask.data);
  CHECK(rec1.crop_x == rec2.crop_x);
  check_sample_invariants(a1);

  auto b = augment(s, 124);
  CHECK(a1.image.data != b.image.data);  // different seed, different draw

  // flips are involutions
  auto ff = flip_image(flip_image(s.image, true, false), true, false);
  CHECK(ff.data == s.image.data);
  auto fm = flip_mask(flip_mask(s.mask, true, true), true, true);
  CHECK(fm.data == s.mask.data);

  // the recorded transform reproduces the mask path exactly
  auto m = flip_mask(s.mask, rec1.flip_h, rec1.flip_v);
  m = crop_mask(m, rec1.crop_y, rec1.crop_x, rec1.crop_h, rec1.crop_w);
  auto expect = (rec1.crop_h == s.mask.height && rec1.crop_w == s.mask.width)
                    ? m
                    : mask_resize_maxpool(m, s.mask.height, s.mask.width);
  CHECK(expect.data == a1.mask.data);
}
