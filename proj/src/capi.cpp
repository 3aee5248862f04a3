#include "plseg.h"

#include "plseg/checkpoint.hpp"
#include "plseg/config.hpp"
#include "plseg/png_io.hpp"
#include "plseg/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <memory>
#include <string>

using nlohmann::json;

struct plseg_model {
  plseg::RunConfig config;
  plseg::LineSegNet<float> net;

  explicit plseg_model(const plseg::RunConfig& cfg) : config(cfg), net(cfg.model) {}
};

namespace {

thread_local std::string g_last_error;

void set_error(const std::string& msg) { g_last_error = msg; }

plseg_status to_status(const std::exception& e) {
  set_error(e.what());
  if (dynamic_cast<const plseg::ConfigError*>(&e)) return PLSEG_ERR_INVALID_ARG;
  if (dynamic_cast<const plseg::ContractError*>(&e)) return PLSEG_ERR_CONTRACT;
  if (dynamic_cast<const plseg::IoError*>(&e)) return PLSEG_ERR_IO;
  return PLSEG_ERR_RUNTIME;
}

char* dup_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

plseg_status require(bool cond, const char* msg) {
  if (!cond) {
    set_error(msg);
    return PLSEG_ERR_INVALID_ARG;
  }
  return PLSEG_OK;
}

}  // namespace

extern "C" {

const char* plseg_version(void) { return "0.1.0"; }

const char* plseg_last_error(void) { return g_last_error.c_str(); }

void plseg_free_string(char* s) { delete[] s; }

plseg_status plseg_model_create(const char* config_json, plseg_model** out) {
  if (auto st = require(config_json && out, "plseg_model_create: null argument"))
    return st;
  try {
    auto cfg = plseg::parse_run_config(config_json);
    *out = new plseg_model(cfg);
    return PLSEG_OK;
  } catch (const std::exception& e) {
    return to_status(e);
  }
}

plseg_status plseg_model_load(const char* checkpoint_path, plseg_model** out) {
  if (auto st = require(checkpoint_path && out, "plseg_model_load: null argument"))
    return st;
  try {
    auto ckpt = plseg::load_checkpoint(checkpoint_path);
    auto cfg = plseg::parse_run_config(ckpt.config_json);
    auto model = std::make_unique<plseg_model>(cfg);
    plseg::load_into_model(model->net, ckpt);
    *out = model.release();
    return PLSEG_OK;
  } catch (const std::exception& e) {
    return to_status(e);
  }
}

void plseg_model_free(plseg_model* model) { delete model; }

plseg_status plseg_model_save(plseg_model* model, const char* path) {
  if (auto st = require(model && path, "plseg_model_save: null argument")) return st;
  try {
    auto ckpt = plseg::snapshot_model(model->net, plseg::run_config_to_json(model->config), 0);
    plseg::save_checkpoint(ckpt, path);
    return PLSEG_OK;
  } catch (const std::exception& e) {
    return to_status(e);
  }
}

plseg_status plseg_model_export_inference(plseg_model* model, const char* path) {
  if (auto st = require(model && path, "plseg_model_export_inference: null argument"))
    return st;
  try {
    auto ckpt = plseg::snapshot_model(model->net, plseg::run_config_to_json(model->config), 0);
    plseg::save_checkpoint(plseg::export_inference(ckpt), path);
    return PLSEG_OK;
  } catch (const std::exception& e) {
    return to_status(e);
  }
}

plseg_status plseg_model_param_counts(plseg_model* model, char** json_out) {
  if (auto st = require(model && json_out, "plseg_model_param_counts: null argument"))
    return st;
  try {
    std::map<std::string, int64_t> train_counts;
    for (const auto& e : model->net.parameters())
      if (e.kind == plseg::ParamKind::kParam) train_counts[e.component] += e.var.numel();
    json j;
    json comps;
    for (const auto& [comp, count] : train_counts) {
      comps[comp] = {{"train", count},
                     {"infer", comp == "backbone" ? count : int64_t(0)}};
    }
    j["components"] = comps;
    j["total"] = {{"train", model->net.count_params(plseg::ParamMode::kTrain)},
                  {"infer", model->net.count_params(plseg::ParamMode::kInfer)}};
    *json_out = dup_string(j.dump(2));
    return PLSEG_OK;
  } catch (const std::exception& e) {
    return to_status(e);
  }
}

plseg_status plseg_synth_dataset(const char* config_json, int64_t count,
                                 const char* out_dir, int force) {
  if (auto st = require(config_json && out_dir && count >= 0,
                        "plseg_synth_dataset: bad argument"))
    return st;
  try {
    auto cfg = plseg::parse_run_config(config_json);
    plseg::materialize_synth(cfg.synth, count, out_dir, force != 0);
    return PLSEG_OK;
  } catch (const std::exception& e) {
    return to_status(e);
  }
}

plseg_status plseg_train(plseg_model* model, const char* data_root, const char* out_dir,
                         int quiet) {
  if (auto st = require(model && data_root && out_dir, "plseg_train: null argument"))
    return st;
  try {
    auto samples = plseg::load_dataset(data_root, plseg::parse_layout(model->config.data.layout),
                                       model->config.data.target_size);
    plseg::run_training(model->net, model->config, samples, out_dir, quiet != 0);
    return PLSEG_OK;
  } catch (const std::exception& e) {
    return to_status(e);
  }
}

plseg_status plseg_evaluate(plseg_model* model, const char* data_root, const char* layout,
                            int aggregate, char** json_out) {
  if (auto st = require(model && data_root && json_out, "plseg_evaluate: null argument"))
    return st;
  try {
    const auto lay = layout && *layout ? plseg::parse_layout(layout)
                                       : plseg::parse_layout(model->config.data.layout);
    auto samples = plseg::load_dataset(data_root, lay, model->config.data.target_size);
    auto report = plseg::evaluate_model(model->net, samples,
                                        aggregate ? plseg::AggregateMode::kPerImageMean
                                                  : plseg::AggregateMode::kPooled);
    *json_out = dup_string(plseg::eval_report_to_json(report));
    return PLSEG_OK;
  } catch (const std::exception& e) {
    return to_status(e);
  }
}

plseg_status plseg_infer_file(plseg_model* model, const char* image_path,
                              const char* mask_out_path, const char* overlay_out_path) {
  if (auto st = require(model && image_path && mask_out_path,
                        "plseg_infer_file: null argument"))
    return st;
  try {
    const int64_t T = model->config.data.target_size;
    auto png = plseg::read_png(image_path);
    plseg::ImageF img = plseg::make_image(3, png.height, png.width);
    const int64_t n = png.height * png.width;
    for (int64_t i = 0; i < n; ++i)
      for (int64_t c = 0; c < 3; ++c)
        img.data[size_t(c * n + i)] =
            float(png.channels == 1 ? png.data[size_t(i)] : png.data[size_t(i * 3 + c)]) /
            255.f;
    if (img.height != T || img.width != T) img = plseg::bilinear_resize(img, T, T);

    plseg::Var<float> input =
        plseg::Var<float>::constant({1, 3, T, T}, std::vector<float>(img.data));
    auto result = model->net.forward_infer(input);

    std::vector<uint8_t> mask_png(result.mask.size());
    for (size_t i = 0; i < result.mask.size(); ++i)
      mask_png[i] = result.mask[i] ? 255 : 0;
    plseg::write_png_gray(mask_out_path, mask_png.data(), T, T);

    if (overlay_out_path) {
      std::vector<uint8_t> rgb(size_t(T * T * 3));
      for (int64_t i = 0; i < T * T; ++i) {
        if (result.mask[size_t(i)]) {
          rgb[size_t(i * 3 + 0)] = 255;
          rgb[size_t(i * 3 + 1)] = 0;
          rgb[size_t(i * 3 + 2)] = 0;
        } else {
          for (int64_t c = 0; c < 3; ++c)
            rgb[size_t(i * 3 + c)] = uint8_t(
                std::lround(std::clamp(double(img.data[size_t(c * T * T + i)]), 0.0, 1.0) * 255.0));
        }
      }
      plseg::write_png_rgb(overlay_out_path, rgb.data(), T, T);
    }
    return PLSEG_OK;
  } catch (const std::exception& e) {
    return to_status(e);
  }
}

}  // extern "C"
