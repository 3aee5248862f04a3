#include "plseg/config.hpp"

#include "plseg/png_io.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

using nlohmann::json;

namespace plseg {

namespace {

void reject_unknown_keys(const json& obj, const std::set<std::string>& known,
                         const std::string& section) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!known.count(it.key()))
      throw ConfigError("unknown config key '" + section + it.key() + "'");
}

template <class T>
void get_to_if(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) obj.at(key).get_to(out);
}

void parse_model(const json& j, ModelConfig& m) {
  reject_unknown_keys(j,
                      {"stage_channels", "bottleneck_channels", "num_classes",
                       "dle_lengths", "dyn_experts", "dyn_temperature",
                       "gate_reduction"},
                      "model.");
  if (j.contains("stage_channels")) {
    auto v = j.at("stage_channels").get<std::vector<int64_t>>();
    if (v.size() != 4) throw ConfigError("model.stage_channels must have 4 entries");
    std::copy(v.begin(), v.end(), m.backbone.stage_channels.begin());
  }
  get_to_if(j, "bottleneck_channels", m.backbone.bottleneck_channels);
  get_to_if(j, "num_classes", m.backbone.num_classes);
  if (j.contains("dle_lengths")) {
    auto v = j.at("dle_lengths").get<std::vector<int64_t>>();
    if (v.size() != 3) throw ConfigError("model.dle_lengths must have 3 entries");
    std::copy(v.begin(), v.end(), m.dle_lengths.begin());
  }
  get_to_if(j, "dyn_experts", m.dyn_experts);
  get_to_if(j, "dyn_temperature", m.dyn_temperature);
  get_to_if(j, "gate_reduction", m.gate_reduction);
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  reject_unknown_keys(j, {"model", "heads", "loss", "train", "data", "synth", "out_dir"},
                      "");

  RunConfig cfg;
  if (j.contains("model")) parse_model(j.at("model"), cfg.model);

  if (j.contains("heads")) {
    const json& h = j.at("heads");
    reject_unknown_keys(h, {"ed1", "ed2", "lf1", "lf2"}, "heads.");
    get_to_if(h, "ed1", cfg.model.heads.ed1);
    get_to_if(h, "ed2", cfg.model.heads.ed2);
    get_to_if(h, "lf1", cfg.model.heads.lf1);
    get_to_if(h, "lf2", cfg.model.heads.lf2);
  }

  if (j.contains("loss")) {
    const json& l = j.at("loss");
    reject_unknown_keys(l, {"alpha", "beta", "theta", "iota", "kappa", "lambda", "mu"},
                        "loss.");
    auto& w = cfg.model.loss;
    get_to_if(l, "alpha", w.alpha);
    get_to_if(l, "beta", w.beta);
    get_to_if(l, "theta", w.theta);
    get_to_if(l, "iota", w.iota);
    get_to_if(l, "kappa", w.kappa);
    get_to_if(l, "lambda", w.lambda);
    get_to_if(l, "mu", w.mu);
    if (w.alpha < 0 || w.beta < 0)
      throw ConfigError("loss.alpha and loss.beta must be nonnegative");
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    reject_unknown_keys(t,
                        {"lr0", "weight_decay", "lr_min", "epochs", "batch_size",
                         "seed", "augment", "early_stop_f1", "eval_every", "log_every"},
                        "train.");
    auto& tc = cfg.train;
    get_to_if(t, "lr0", tc.lr0);
    get_to_if(t, "weight_decay", tc.weight_decay);
    get_to_if(t, "lr_min", tc.lr_min);
    get_to_if(t, "epochs", tc.epochs);
    get_to_if(t, "batch_size", tc.batch_size);
    get_to_if(t, "seed", tc.seed);
    get_to_if(t, "augment", tc.augment);
    get_to_if(t, "early_stop_f1", tc.early_stop_f1);
    get_to_if(t, "eval_every", tc.eval_every);
    get_to_if(t, "log_every", tc.log_every);
    if (tc.lr_min >= tc.lr0) throw ConfigError("train.lr_min must be < train.lr0");
    if (tc.epochs < 1 || tc.batch_size < 1)
      throw ConfigError("train.epochs and train.batch_size must be >= 1");
  }

  if (j.contains("data")) {
    const json& d = j.at("data");
    reject_unknown_keys(d, {"root", "val_root", "layout", "target_size"}, "data.");
    get_to_if(d, "root", cfg.data.root);
    get_to_if(d, "val_root", cfg.data.val_root);
    get_to_if(d, "layout", cfg.data.layout);
    get_to_if(d, "target_size", cfg.data.target_size);
    parse_layout(cfg.data.layout);  // validates
    if (cfg.data.target_size % 32 != 0)
      throw ConfigError("data.target_size must be divisible by 32");
  }

  if (j.contains("synth")) {
    const json& s = j.at("synth");
    reject_unknown_keys(s,
                        {"height", "width", "lines_min", "lines_max", "width_min",
                         "width_max", "background", "noise_sigma", "seed"},
                        "synth.");
    auto& sc = cfg.synth;
    get_to_if(s, "height", sc.height);
    get_to_if(s, "width", sc.width);
    get_to_if(s, "lines_min", sc.lines_min);
    get_to_if(s, "lines_max", sc.lines_max);
    get_to_if(s, "width_min", sc.width_min);
    get_to_if(s, "width_max", sc.width_max);
    if (s.contains("background"))
      sc.background = parse_background(s.at("background").get<std::string>());
    get_to_if(s, "noise_sigma", sc.noise_sigma);
    get_to_if(s, "seed", sc.seed);
  }

  get_to_if(j, "out_dir", cfg.out_dir);
  cfg.model.seed = cfg.train.seed;
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_config_to_json(const RunConfig& cfg) {
  json j;
  j["model"] = {
      {"stage_channels", std::vector<int64_t>(cfg.model.backbone.stage_channels.begin(),
                                              cfg.model.backbone.stage_channels.end())},
      {"bottleneck_channels", cfg.model.backbone.bottleneck_channels},
      {"num_classes", cfg.model.backbone.num_classes},
      {"dle_lengths", std::vector<int64_t>(cfg.model.dle_lengths.begin(),
                                           cfg.model.dle_lengths.end())},
      {"dyn_experts", cfg.model.dyn_experts},
      {"dyn_temperature", cfg.model.dyn_temperature},
      {"gate_reduction", cfg.model.gate_reduction},
  };
  j["heads"] = {{"ed1", cfg.model.heads.ed1},
                {"ed2", cfg.model.heads.ed2},
                {"lf1", cfg.model.heads.lf1},
                {"lf2", cfg.model.heads.lf2}};
  const auto& w = cfg.model.loss;
  j["loss"] = {{"alpha", w.alpha},   {"beta", w.beta},     {"theta", w.theta},
               {"iota", w.iota},     {"kappa", w.kappa},   {"lambda", w.lambda},
               {"mu", w.mu}};
  const auto& t = cfg.train;
  j["train"] = {{"lr0", t.lr0},
                {"weight_decay", t.weight_decay},
                {"lr_min", t.lr_min},
                {"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"seed", t.seed},
                {"augment", t.augment},
                {"early_stop_f1", t.early_stop_f1},
                {"eval_every", t.eval_every},
                {"log_every", t.log_every}};
  j["data"] = {{"root", cfg.data.root},
               {"val_root", cfg.data.val_root},
               {"layout", cfg.data.layout},
               {"target_size", cfg.data.target_size}};
  const auto& s = cfg.synth;
  j["synth"] = {{"height", s.height},
                {"width", s.width},
                {"lines_min", s.lines_min},
                {"lines_max", s.lines_max},
                {"width_min", s.width_min},
                {"width_max", s.width_max},
                {"background", background_name(s.background)},
                {"noise_sigma", s.noise_sigma},
                {"seed", s.seed}};
  j["out_dir"] = cfg.out_dir;
  return j.dump(2);
}

HeadFlags parse_head_flags(const std::string& spec) {
  HeadFlags f{false, false, false, false};
  if (spec == "none") return f;
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok == "ed1")
      f.ed1 = true;
    else if (tok == "ed2")
      f.ed2 = true;
    else if (tok == "lf1")
      f.lf1 = true;
    else if (tok == "lf2")
      f.lf2 = true;
    else if (!tok.empty())
      throw ConfigError("unknown head '" + tok + "' (expected ed1,ed2,lf1,lf2 or none)");
  }
  return f;
}

}  // namespace plseg
