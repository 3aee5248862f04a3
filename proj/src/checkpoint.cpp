#include "plseg/checkpoint.hpp"

#include "plseg/png_io.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <map>
#include <set>

using nlohmann::json;

namespace plseg {

namespace {

const char* kind_name(ParamKind k) {
  return k == ParamKind::kParam ? "param" : "buffer";
}

ParamKind parse_kind(const std::string& s) {
  if (s == "param") return ParamKind::kParam;
  if (s == "buffer") return ParamKind::kBuffer;
  throw IoError("checkpoint: unknown tensor kind '" + s + "'");
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  json manifest;
  manifest["version"] = ckpt.version;
  manifest["step"] = ckpt.step;
  manifest["config"] = json::parse(ckpt.config_json.empty() ? "{}" : ckpt.config_json);

  int64_t offset = 0;
  json tensors = json::array();
  for (const auto& t : ckpt.tensors) {
    tensors.push_back({{"name", t.name},
                       {"component", t.component},
                       {"kind", kind_name(t.kind)},
                       {"shape", t.shape},
                       {"offset", offset},
                       {"numel", int64_t(t.values.size())}});
    offset += int64_t(t.values.size());
  }
  manifest["tensors"] = tensors;

  json opt;
  opt["present"] = ckpt.has_opt;
  json entries = json::array();
  if (ckpt.has_opt) {
    for (const auto& e : ckpt.opt) {
      entries.push_back({{"name", e.name}, {"offset", offset}, {"numel", int64_t(e.m.size())}});
      offset += 2 * int64_t(e.m.size());  // m then v
    }
  }
  opt["entries"] = entries;
  manifest["opt"] = opt;

  const std::string mtext = manifest.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out.write(kCheckpointMagic, 8);
  const uint64_t mlen = mtext.size();
  out.write(reinterpret_cast<const char*>(&mlen), sizeof mlen);
  out.write(mtext.data(), std::streamsize(mtext.size()));
  for (const auto& t : ckpt.tensors)
    out.write(reinterpret_cast<const char*>(t.values.data()),
              std::streamsize(t.values.size() * sizeof(float)));
  if (ckpt.has_opt)
    for (const auto& e : ckpt.opt) {
      out.write(reinterpret_cast<const char*>(e.m.data()),
                std::streamsize(e.m.size() * sizeof(float)));
      out.write(reinterpret_cast<const char*>(e.v.data()),
                std::streamsize(e.v.size() * sizeof(float)));
    }
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw IoError("not a checkpoint file: " + path);
  uint64_t mlen = 0;
  in.read(reinterpret_cast<char*>(&mlen), sizeof mlen);
  std::string mtext(mlen, '\0');
  in.read(mtext.data(), std::streamsize(mlen));
  if (!in) throw IoError("truncated checkpoint manifest: " + path);

  json manifest;
  try {
    manifest = json::parse(mtext);
  } catch (const json::parse_error& e) {
    throw IoError(std::string("corrupt checkpoint manifest: ") + e.what());
  }

  Checkpoint ckpt;
  ckpt.version = manifest.at("version").get<int>();
  if (ckpt.version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(ckpt.version));
  ckpt.step = manifest.at("step").get<int64_t>();
  ckpt.config_json = manifest.at("config").dump();

  for (const auto& jt : manifest.at("tensors")) {
    CheckpointTensor t;
    t.name = jt.at("name").get<std::string>();
    t.component = jt.at("component").get<std::string>();
    t.kind = parse_kind(jt.at("kind").get<std::string>());
    t.shape = jt.at("shape").get<Shape>();
    const int64_t numel = jt.at("numel").get<int64_t>();
    if (numel != shape_numel(t.shape))
      throw IoError("checkpoint manifest: shape/numel mismatch for " + t.name);
    t.values.resize(size_t(numel));
    ckpt.tensors.push_back(std::move(t));
  }
  for (auto& t : ckpt.tensors) {
    in.read(reinterpret_cast<char*>(t.values.data()),
            std::streamsize(t.values.size() * sizeof(float)));
    if (!in) throw IoError("truncated checkpoint payload: " + path);
  }

  const json& jopt = manifest.at("opt");
  ckpt.has_opt = jopt.at("present").get<bool>();
  if (ckpt.has_opt) {
    for (const auto& je : jopt.at("entries")) {
      OptEntry e;
      e.name = je.at("name").get<std::string>();
      const int64_t numel = je.at("numel").get<int64_t>();
      e.m.resize(size_t(numel));
      e.v.resize(size_t(numel));
      ckpt.opt.push_back(std::move(e));
    }
    for (auto& e : ckpt.opt) {
      in.read(reinterpret_cast<char*>(e.m.data()),
              std::streamsize(e.m.size() * sizeof(float)));
      in.read(reinterpret_cast<char*>(e.v.data()),
              std::streamsize(e.v.size() * sizeof(float)));
      if (!in) throw IoError("truncated checkpoint optimizer state: " + path);
    }
  }
  return ckpt;
}

Checkpoint snapshot_model(const LineSegNet<float>& model, const std::string& config_json,
                          int64_t step, AdamW<float>* opt) {
  Checkpoint ckpt;
  ckpt.step = step;
  ckpt.config_json = config_json;
  for (const auto& e : model.parameters()) {
    CheckpointTensor t;
    t.name = e.name;
    t.component = e.component;
    t.kind = e.kind;
    t.shape = e.var.shape();
    t.values = e.var.val();
    ckpt.tensors.push_back(std::move(t));
  }
  if (opt) {
    ckpt.has_opt = true;
    for (size_t i = 0; i < opt->size(); ++i) {
      OptEntry e;
      e.name = opt->params()[i].name;
      e.m = opt->moment1(i);
      e.v = opt->moment2(i);
      ckpt.opt.push_back(std::move(e));
    }
  }
  return ckpt;
}

void load_into_model(LineSegNet<float>& model, const Checkpoint& ckpt) {
  std::map<std::string, const CheckpointTensor*> by_name;
  for (const auto& t : ckpt.tensors) by_name[t.name] = &t;

  auto params = model.parameters();
  for (auto& e : params) {
    auto it = by_name.find(e.name);
    if (it == by_name.end())
      throw IoError("checkpoint is missing tensor '" + e.name + "'");
    const CheckpointTensor& t = *it->second;
    if (t.shape != e.var.shape())
      throw IoError("checkpoint tensor '" + e.name + "' has shape " +
                    shape_str(t.shape) + ", model expects " + shape_str(e.var.shape()));
    e.var.val().assign(t.values.begin(), t.values.end());
    by_name.erase(it);
  }
  if (!by_name.empty())
    throw IoError("checkpoint has tensor '" + by_name.begin()->first +
                  "' unknown to the model");
}

void load_opt_state(AdamW<float>& opt, const Checkpoint& ckpt) {
  if (!ckpt.has_opt) throw IoError("checkpoint carries no optimizer state");
  std::map<std::string, const OptEntry*> by_name;
  for (const auto& e : ckpt.opt) by_name[e.name] = &e;
  for (size_t i = 0; i < opt.size(); ++i) {
    const std::string& name = opt.params()[i].name;
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError("optimizer state missing for '" + name + "'");
    if (it->second->m.size() != opt.moment1(i).size())
      throw IoError("optimizer state size mismatch for '" + name + "'");
    opt.moment1(i) = it->second->m;
    opt.moment2(i) = it->second->v;
  }
  opt.set_steps_taken(ckpt.step);
}

Checkpoint export_inference(const Checkpoint& ckpt) {
  static const std::set<std::string> kKnown = {"backbone", "ed1", "ed2", "lf1", "lf2"};
  Checkpoint out;
  out.version = ckpt.version;
  out.step = ckpt.step;
  for (const auto& t : ckpt.tensors) {
    if (!kKnown.count(t.component))
      throw IoError("checkpoint manifest corruption: tensor '" + t.name +
                    "' has unknown component tag '" + t.component + "'");
    if (t.component == "backbone") out.tensors.push_back(t);
  }
  json cfg = json::parse(ckpt.config_json.empty() ? "{}" : ckpt.config_json);
  cfg["heads"] = {{"ed1", false}, {"ed2", false}, {"lf1", false}, {"lf2", false}};
  out.config_json = cfg.dump();
  out.has_opt = false;
  return out;
}

}  // namespace plseg
