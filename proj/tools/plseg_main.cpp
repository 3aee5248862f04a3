// plseg command-line tool. Talks to the core exclusively through the C API
// in plseg.h, the same surface any other language binding would use.

#include "plseg.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct ModelDeleter {
  void operator()(plseg_model* m) const { plseg_model_free(m); }
};
using ModelPtr = std::unique_ptr<plseg_model, ModelDeleter>;

struct StringDeleter {
  void operator()(char* s) const { plseg_free_string(s); }
};
using ApiString = std::unique_ptr<char, StringDeleter>;

[[noreturn]] void fail(const std::string& context) {
  std::fprintf(stderr, "error: %s: %s\n", context.c_str(), plseg_last_error());
  std::exit(1);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    std::fprintf(stderr, "error: cannot open config file: %s\n", path.c_str());
    std::exit(1);
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// apply --seed / --heads overrides on top of the config document
std::string apply_overrides(std::string config_text, const std::string& heads,
                            int64_t seed, bool have_seed) {
  if (heads.empty() && !have_seed) return config_text;
  json j = json::parse(config_text);
  if (have_seed) j["train"]["seed"] = seed;
  if (!heads.empty()) {
    const bool none = heads == "none";
    json h = {{"ed1", false}, {"ed2", false}, {"lf1", false}, {"lf2", false}};
    if (!none) {
      std::stringstream ss(heads);
      std::string tok;
      while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        if (!h.contains(tok)) {
          std::fprintf(stderr, "error: unknown head '%s'\n", tok.c_str());
          std::exit(1);
        }
        h[tok] = true;
      }
    }
    j["heads"] = h;
  }
  return j.dump();
}

ModelPtr create_model(const std::string& config_text) {
  plseg_model* raw = nullptr;
  if (plseg_model_create(config_text.c_str(), &raw) != PLSEG_OK)
    fail("creating model");
  return ModelPtr(raw);
}

ModelPtr load_model(const std::string& ckpt) {
  plseg_model* raw = nullptr;
  if (plseg_model_load(ckpt.c_str(), &raw) != PLSEG_OK) fail("loading " + ckpt);
  return ModelPtr(raw);
}

void print_param_table(plseg_model* model) {
  char* raw = nullptr;
  if (plseg_model_param_counts(model, &raw) != PLSEG_OK) fail("counting parameters");
  ApiString owned(raw);
  json j = json::parse(owned.get());
  std::printf("%-10s %s\n", "component", "params infer(train)");
  for (const auto& [comp, counts] : j.at("components").items())
    std::printf("%-10s %lld(%lld)\n", comp.c_str(),
                static_cast<long long>(counts.at("infer").get<int64_t>()),
                static_cast<long long>(counts.at("train").get<int64_t>()));
  std::printf("%-10s %lld(%lld)\n", "total",
              static_cast<long long>(j.at("total").at("infer").get<int64_t>()),
              static_cast<long long>(j.at("total").at("train").get<int64_t>()));
}

double eval_f1(plseg_model* model, const std::string& root, const std::string& layout) {
  char* raw = nullptr;
  if (plseg_evaluate(model, root.c_str(), layout.c_str(), 0, &raw) != PLSEG_OK)
    fail("evaluating " + root);
  ApiString owned(raw);
  return json::parse(owned.get()).at("f1").get<double>();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"power-line segmentation: synth / train / eval / infer / params / ablate / export"};
  app.require_subcommand(1);

  std::string config_path, out_dir, heads, ckpt_path, image_path, layout;
  int64_t seed = 0, count = 0;
  bool have_seed = false, force = false, overlay = false, per_image = false, quiet = false;

  auto add_seed = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed, "override train.seed")->each([&](std::string) {
      have_seed = true;
    });
  };

  // synth
  auto* synth = app.add_subcommand("synth", "materialize a synthetic line dataset");
  synth->add_option("--config", config_path, "run config JSON")->required();
  synth->add_option("--count", count, "number of samples")->required();
  synth->add_option("--out", out_dir, "output directory")->required();
  synth->add_flag("--force", force, "allow writing into a non-empty directory");

  // train
  auto* train = app.add_subcommand("train", "train a model on data.root");
  train->add_option("--config", config_path)->required();
  train->add_option("--out", out_dir)->required();
  train->add_option("--heads", heads, "ed1,ed2,lf1,lf2 or none");
  train->add_flag("--quiet", quiet);
  add_seed(train);

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval->add_option("--ckpt", ckpt_path)->required();
  eval->add_option("--data", out_dir, "dataset root")->required();
  eval->add_option("--layout", layout, "ttpla_like or vitl_like (default: from config)");
  eval->add_flag("--per-image", per_image, "per-image mean instead of pooled counts");

  // infer
  auto* infer = app.add_subcommand("infer", "segment a PNG image");
  infer->add_option("--ckpt", ckpt_path)->required();
  infer->add_option("--image", image_path)->required();
  infer->add_option("--out", out_dir, "output directory")->required();
  infer->add_flag("--overlay", overlay, "also write a red overlay PNG");

  // params
  auto* params = app.add_subcommand("params", "parameter counts per component");
  params->add_option("--config", config_path)->required();
  params->add_option("--heads", heads);

  // ablate
  auto* ablate = app.add_subcommand("ablate",
                                    "train/eval the base, ed, lf and ed_lf variants");
  ablate->add_option("--config", config_path)->required();
  ablate->add_option("--out", out_dir)->required();
  add_seed(ablate);

  // export
  auto* exp = app.add_subcommand("export", "strip boosters from a checkpoint");
  exp->add_option("--ckpt", ckpt_path)->required();
  exp->add_option("--out", out_dir, "output checkpoint path")->required();

  CLI11_PARSE(app, argc, argv);

  if (*synth) {
    const std::string cfg = apply_overrides(read_file(config_path), "", seed, have_seed);
    if (plseg_synth_dataset(cfg.c_str(), count, out_dir.c_str(), force ? 1 : 0) != PLSEG_OK)
      fail("synthesizing dataset");
    std::printf("wrote %lld samples to %s\n", static_cast<long long>(count), out_dir.c_str());
  }

  if (*train) {
    const std::string cfg = apply_overrides(read_file(config_path), heads, seed, have_seed);
    auto model = create_model(cfg);
    json j = json::parse(cfg);
    const std::string root = j.at("data").at("root").get<std::string>();
    if (plseg_train(model.get(), root.c_str(), out_dir.c_str(), quiet ? 1 : 0) != PLSEG_OK)
      fail("training");
    std::printf("checkpoint written to %s/checkpoint.plseg\n", out_dir.c_str());
  }

  if (*eval) {
    auto model = load_model(ckpt_path);
    char* raw = nullptr;
    if (plseg_evaluate(model.get(), out_dir.c_str(), layout.c_str(),
                       per_image ? 1 : 0, &raw) != PLSEG_OK)
      fail("evaluating");
    ApiString owned(raw);
    std::printf("%s\n", owned.get());
  }

  if (*infer) {
    auto model = load_model(ckpt_path);
    fs::create_directories(out_dir);
    const std::string stem = fs::path(image_path).stem().string();
    const std::string mask_out = (fs::path(out_dir) / (stem + "_mask.png")).string();
    const std::string overlay_out = (fs::path(out_dir) / (stem + "_overlay.png")).string();
    if (plseg_infer_file(model.get(), image_path.c_str(), mask_out.c_str(),
                         overlay ? overlay_out.c_str() : nullptr) != PLSEG_OK)
      fail("inference");
    std::printf("mask: %s\n", mask_out.c_str());
    if (overlay) std::printf("overlay: %s\n", overlay_out.c_str());
  }

  if (*params) {
    const std::string cfg = apply_overrides(read_file(config_path), heads, 0, false);
    auto model = create_model(cfg);
    print_param_table(model.get());
  }

  if (*ablate) {
    const std::string base_cfg = read_file(config_path);
    json j = json::parse(base_cfg);
    const std::string root = j.at("data").at("root").get<std::string>();
    const std::string val_root = j.at("data").value("val_root", root);
    const std::string layout_name = j.at("data").value("layout", std::string("ttpla_like"));

    const std::vector<std::pair<std::string, std::string>> variants = {
        {"base", "none"}, {"ed", "ed1,ed2"}, {"lf", "lf1,lf2"}, {"ed_lf", "ed1,ed2,lf1,lf2"}};

    json table = json::array();
    std::printf("%-8s %8s\n", "variant", "val_f1");
    for (const auto& [name, head_spec] : variants) {
      const std::string cfg = apply_overrides(base_cfg, head_spec, seed, have_seed);
      auto model = create_model(cfg);
      const std::string run_dir = (fs::path(out_dir) / name).string();
      if (plseg_train(model.get(), root.c_str(), run_dir.c_str(), 1) != PLSEG_OK)
        fail("training variant " + name);
      const double f1 = eval_f1(model.get(), val_root, layout_name);
      std::printf("%-8s %8.4f\n", name.c_str(), f1);
      std::fflush(stdout);
      table.push_back({{"variant", name}, {"val_f1", f1}});
    }
    std::ofstream(fs::path(out_dir) / "ablation.json") << table.dump(2) << "\n";
  }

  if (*exp) {
    auto model = load_model(ckpt_path);
    if (plseg_model_export_inference(model.get(), out_dir.c_str()) != PLSEG_OK)
      fail("exporting");
    std::printf("inference checkpoint: %s\n", out_dir.c_str());
  }

  return 0;
}
