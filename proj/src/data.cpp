#include "plseg/data.hpp"

#include "plseg/png_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>

namespace fs = std::filesystem;

namespace plseg {

DatasetLayout parse_layout(const std::string& name) {
  if (name == "ttpla_like") return DatasetLayout::kTtplaLike;
  if (name == "vitl_like") return DatasetLayout::kVitlLike;
  throw ConfigError("unknown dataset layout '" + name +
                    "' (expected ttpla_like or vitl_like)");
}

std::string layout_name(DatasetLayout layout) {
  return layout == DatasetLayout::kTtplaLike ? "ttpla_like" : "vitl_like";
}

SynthConfig::Background parse_background(const std::string& name) {
  if (name == "flat") return SynthConfig::Background::kFlat;
  if (name == "gradient") return SynthConfig::Background::kGradient;
  if (name == "clutter") return SynthConfig::Background::kClutter;
  throw ConfigError("unknown synth background '" + name +
                    "' (expected flat, gradient or clutter)");
}

std::string background_name(SynthConfig::Background bg) {
  switch (bg) {
    case SynthConfig::Background::kFlat: return "flat";
    case SynthConfig::Background::kGradient: return "gradient";
    case SynthConfig::Background::kClutter: return "clutter";
  }
  return "clutter";
}

namespace {

ImageF png_to_imagef(const PngImage& png) {
  ImageF img = make_image(3, png.height, png.width);
  const int64_t n = png.height * png.width;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t c = 0; c < 3; ++c) {
      const uint8_t v = png.channels == 1 ? png.data[size_t(i)]
                                          : png.data[size_t(i * 3 + c)];
      img.data[size_t(c * n + i)] = float(v) / 255.f;
    }
  return img;
}

MaskBatch png_to_mask(const PngImage& png) {
  MaskBatch m;
  m.batch = 1;
  m.height = png.height;
  m.width = png.width;
  m.data.resize(size_t(png.height * png.width));
  const int64_t n = png.height * png.width;
  for (int64_t i = 0; i < n; ++i) {
    uint8_t v = 0;
    for (int64_t c = 0; c < png.channels; ++c)
      v |= png.data[size_t(i * png.channels + c)];
    m.data[size_t(i)] = v ? 1 : 0;
  }
  return m;
}

std::vector<Sample> load_pair_folder(const std::string& root, const std::string& prefix,
                                     int64_t target_size) {
  const fs::path images = fs::path(root) / "images";
  const fs::path masks = fs::path(root) / "masks";
  if (!fs::is_directory(images) || !fs::is_directory(masks))
    throw IoError("dataset root '" + root + "' must contain images/ and masks/");

  std::set<std::string> image_stems, mask_stems;
  for (const auto& e : fs::directory_iterator(images))
    if (e.is_regular_file() && e.path().extension() == ".png")
      image_stems.insert(e.path().stem().string());
  for (const auto& e : fs::directory_iterator(masks))
    if (e.is_regular_file() && e.path().extension() == ".png")
      mask_stems.insert(e.path().stem().string());

  for (const auto& s : image_stems)
    if (!mask_stems.count(s))
      throw IoError("orphan image without mask: " + (images / (s + ".png")).string());
  for (const auto& s : mask_stems)
    if (!image_stems.count(s))
      throw IoError("orphan mask without image: " + (masks / (s + ".png")).string());

  std::vector<Sample> out;
  out.reserve(image_stems.size());
  for (const auto& stem : image_stems) {  // std::set iterates in sorted order
    Sample s;
    s.id = prefix.empty() ? stem : prefix + "/" + stem;
    ImageF img = png_to_imagef(read_png((images / (stem + ".png")).string()));
    MaskBatch m = png_to_mask(read_png((masks / (stem + ".png")).string()));
    if (m.height != img.height || m.width != img.width)
      throw IoError("image/mask size mismatch for id '" + s.id + "'");
    s.image = (img.height == target_size && img.width == target_size)
                  ? std::move(img)
                  : bilinear_resize(img, target_size, target_size);
    s.mask = (m.height == target_size && m.width == target_size)
                 ? std::move(m)
                 : mask_resize_maxpool(m, target_size, target_size);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

std::vector<Sample> load_dataset(const std::string& root, DatasetLayout layout,
                                 int64_t target_size) {
  PLSEG_CONTRACT(target_size >= 32, "load_dataset: target_size must be >= 32");
  if (layout == DatasetLayout::kTtplaLike) return load_pair_folder(root, "", target_size);

  if (!fs::is_directory(root)) throw IoError("dataset root not found: " + root);
  std::vector<std::string> conditions;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::is_directory(e.path() / "images"))
      conditions.push_back(e.path().filename().string());
  std::sort(conditions.begin(), conditions.end());
  if (conditions.empty())
    throw IoError("vitl_like root '" + root + "' has no condition subfolders");

  std::vector<Sample> out;
  for (const auto& cond : conditions) {
    auto part = load_pair_folder((fs::path(root) / cond).string(), cond, target_size);
    for (auto& s : part) out.push_back(std::move(s));
  }
  return out;
}

void rasterize_segment(ImageF& image, MaskBatch& mask, double x0, double y0,
                       double x1, double y1, double width, float value) {
  const double half = width / 2.0;
  const double dx = x1 - x0, dy = y1 - y0;
  const double len2 = dx * dx + dy * dy;
  const int64_t ylo = std::max<int64_t>(0, int64_t(std::floor(std::min(y0, y1) - half - 1)));
  const int64_t yhi = std::min<int64_t>(image.height - 1,
                                        int64_t(std::ceil(std::max(y0, y1) + half + 1)));
  const int64_t xlo = std::max<int64_t>(0, int64_t(std::floor(std::min(x0, x1) - half - 1)));
  const int64_t xhi = std::min<int64_t>(image.width - 1,
                                        int64_t(std::ceil(std::max(x0, x1) + half + 1)));
  for (int64_t y = ylo; y <= yhi; ++y) {
    for (int64_t x = xlo; x <= xhi; ++x) {
      const double cx = double(x) + 0.5, cy = double(y) + 0.5;
      double t = len2 > 0 ? ((cx - x0) * dx + (cy - y0) * dy) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      const double px = x0 + t * dx, py = y0 + t * dy;
      const double dist = std::hypot(cx - px, cy - py);
      const double coverage = std::clamp(0.5 + (half - dist), 0.0, 1.0);
      if (coverage <= 0.0) continue;
      for (int64_t c = 0; c < image.channels; ++c) {
        float& px_ref = image.at(c, y, x);
        px_ref = float((1.0 - coverage) * px_ref + coverage * value);
      }
      if (dist <= half) mask.data[size_t(y * mask.width + x)] = 1;
    }
  }
}

namespace {

void fill_background(ImageF& img, SynthConfig::Background bg, Rng& rng) {
  const int64_t H = img.height, W = img.width;
  switch (bg) {
    case SynthConfig::Background::kFlat: {
      const double base = rng.uniform(0.25, 0.6);
      for (int64_t c = 0; c < 3; ++c) {
        const float v = float(std::clamp(base + rng.uniform(-0.04, 0.04), 0.0, 1.0));
        std::fill(img.data.begin() + c * H * W, img.data.begin() + (c + 1) * H * W, v);
      }
      break;
    }
    case SynthConfig::Background::kGradient: {
      const double theta = rng.uniform(0.0, 6.283185307179586);
      const double a = rng.uniform(0.15, 0.45), b = rng.uniform(0.45, 0.75);
      const double cs = std::cos(theta), sn = std::sin(theta);
      const double diag = std::hypot(double(H), double(W));
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
          const double proj = (double(x) * cs + double(y) * sn) / diag + 0.5;
          const float v = float(a + (b - a) * std::clamp(proj, 0.0, 1.0));
          for (int64_t c = 0; c < 3; ++c) img.at(c, y, x) = v;
        }
      break;
    }
    case SynthConfig::Background::kClutter: {
      // value noise: bilinearly interpolated coarse random grids
      const int64_t grids[3] = {5, 9, 17};
      const double amps[3] = {0.5, 0.3, 0.2};
      std::vector<double> lum(size_t(H * W), 0.0);
      for (int g = 0; g < 3; ++g) {
        const int64_t n = grids[g];
        std::vector<double> cells(size_t(n * n));
        for (auto& v : cells) v = rng.uniform();
        for (int64_t y = 0; y < H; ++y) {
          const double gy = double(y) / double(H) * double(n - 1);
          const int64_t y0 = std::min<int64_t>(int64_t(gy), n - 2);
          const double fy = gy - double(y0);
          for (int64_t x = 0; x < W; ++x) {
            const double gx = double(x) / double(W) * double(n - 1);
            const int64_t x0 = std::min<int64_t>(int64_t(gx), n - 2);
            const double fx = gx - double(x0);
            const double v00 = cells[size_t(y0 * n + x0)];
            const double v01 = cells[size_t(y0 * n + x0 + 1)];
            const double v10 = cells[size_t((y0 + 1) * n + x0)];
            const double v11 = cells[size_t((y0 + 1) * n + x0 + 1)];
            const double top = v00 + fx * (v01 - v00);
            const double bot = v10 + fx * (v11 - v10);
            lum[size_t(y * W + x)] += amps[g] * (top + fy * (bot - top));
          }
        }
      }
      for (int64_t i = 0; i < H * W; ++i) {
        const float v = float(0.15 + 0.5 * lum[size_t(i)]);
        for (int64_t c = 0; c < 3; ++c) img.data[size_t(c * H * W + i)] = v;
      }
      break;
    }
  }
}

}  // namespace

Sample synth_lines(const SynthConfig& cfg, int64_t index) {
  PLSEG_CONTRACT(cfg.width_min >= 1.0 && cfg.width_max >= cfg.width_min,
                 "synth_lines: line widths must be >= 1");
  PLSEG_CONTRACT(cfg.lines_min >= 0 && cfg.lines_max >= cfg.lines_min,
                 "synth_lines: bad lines_per_image range");
  Rng rng(mix_seed(cfg.seed, uint64_t(index)));

  Sample s;
  s.image = make_image(3, cfg.height, cfg.width);
  s.mask.batch = 1;
  s.mask.height = cfg.height;
  s.mask.width = cfg.width;
  s.mask.data.assign(size_t(cfg.height * cfg.width), 0);
  char buf[32];
  std::snprintf(buf, sizeof buf, "synth_%06lld", static_cast<long long>(index));
  s.id = buf;

  fill_background(s.image, cfg.background, rng);
  double bg_mean = 0.0;
  for (float v : s.image.data) bg_mean += v;
  bg_mean /= double(s.image.data.size());

  const int64_t k = rng.uniform_int(cfg.lines_min, cfg.lines_max);
  const double min_len = 0.3 * double(std::min(cfg.height, cfg.width));
  for (int64_t i = 0; i < k; ++i) {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    for (int attempt = 0; attempt < 20; ++attempt) {
      x0 = rng.uniform(0.0, double(cfg.width));
      y0 = rng.uniform(0.0, double(cfg.height));
      x1 = rng.uniform(0.0, double(cfg.width));
      y1 = rng.uniform(0.0, double(cfg.height));
      if (std::hypot(x1 - x0, y1 - y0) >= min_len) break;
    }
    const double w = rng.uniform(cfg.width_min, cfg.width_max);
    const double contrast = rng.uniform(0.25, 0.45);
    const double value = rng.bernoulli(0.5) ? std::min(1.0, bg_mean + contrast)
                                            : std::max(0.0, bg_mean - contrast);
    rasterize_segment(s.image, s.mask, x0, y0, x1, y1, w, float(value));
  }

  if (cfg.noise_sigma > 0) {
    for (auto& v : s.image.data)
      v = float(std::clamp(double(v) + rng.normal(0.0, cfg.noise_sigma), 0.0, 1.0));
  }
  return s;
}

void materialize_synth(const SynthConfig& cfg, int64_t count, const std::string& out_dir,
                       bool force) {
  const fs::path root(out_dir);
  if (fs::exists(root) && !fs::is_empty(root) && !force)
    throw IoError("output directory '" + out_dir + "' is not empty (use --force)");
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  for (int64_t i = 0; i < count; ++i) {
    Sample s = synth_lines(cfg, i);
    const int64_t n = s.image.height * s.image.width;
    std::vector<uint8_t> rgb(size_t(n * 3));
    for (int64_t p = 0; p < n; ++p)
      for (int64_t c = 0; c < 3; ++c)
        rgb[size_t(p * 3 + c)] =
            uint8_t(std::lround(std::clamp(double(s.image.data[size_t(c * n + p)]), 0.0, 1.0) * 255.0));
    const size_t npx = size_t(n);
    std::vector<uint8_t> gray(npx);
    for (size_t p = 0; p < npx; ++p) gray[p] = s.mask.data[p] ? 255 : 0;
    write_png_rgb((root / "images" / (s.id + ".png")).string(), rgb.data(),
                  s.image.height, s.image.width);
    write_png_gray((root / "masks" / (s.id + ".png")).string(), gray.data(),
                   s.mask.height, s.mask.width);
  }
}

Sample augment(const Sample& sample, uint64_t seed, AugRecord* record) {
  Rng rng(mix_seed(seed, fnv1a64(sample.id)));
  AugRecord rec;
  rec.flip_h = rng.bernoulli(0.5);
  rec.flip_v = rng.bernoulli(0.5);
  const int64_t H = sample.image.height, W = sample.image.width;
  const double scale = rng.uniform(0.75, 1.0);
  rec.crop_h = std::max<int64_t>(1, int64_t(std::lround(scale * double(H))));
  rec.crop_w = std::max<int64_t>(1, int64_t(std::lround(scale * double(W))));
  rec.crop_y = rng.uniform_int(0, H - rec.crop_h);
  rec.crop_x = rng.uniform_int(0, W - rec.crop_w);

  Sample out;
  out.id = sample.id;
  ImageF img = flip_image(sample.image, rec.flip_h, rec.flip_v);
  MaskBatch m = flip_mask(sample.mask, rec.flip_h, rec.flip_v);
  img = crop_image(img, rec.crop_y, rec.crop_x, rec.crop_h, rec.crop_w);
  m = crop_mask(m, rec.crop_y, rec.crop_x, rec.crop_h, rec.crop_w);
  out.image = (rec.crop_h == H && rec.crop_w == W) ? std::move(img)
                                                   : bilinear_resize(img, H, W);
  out.mask = (rec.crop_h == H && rec.crop_w == W) ? std::move(m)
                                                  : mask_resize_maxpool(m, H, W);
  if (record) *record = rec;
  return out;
}

}  // namespace plseg
