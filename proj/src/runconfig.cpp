#include "spmm/runconfig.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace spmm {

namespace {

using json = nlohmann::json;

json parse_object(const std::string& text, const char* what) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw Error(std::string("config: ") + what + " does not parse: " + e.what());
  }
  if (!j.is_object()) throw Error(std::string("config: ") + what + " must be a JSON object");
  return j;
}

int64_t want_int(const json& v, const std::string& key) {
  if (!v.is_number_integer()) throw Error("config: key '" + key + "' must be an integer");
  return v.get<int64_t>();
}

bool want_bool(const json& v, const std::string& key) {
  if (!v.is_boolean()) throw Error("config: key '" + key + "' must be a boolean");
  return v.get<bool>();
}

ModelConfig model_from(const json& j) {
  ModelConfig cfg;
  for (const auto& [key, v] : j.items()) {
    if (key == "channels") cfg.channels = want_int(v, key);
    else if (key == "n_loe") cfg.n_loe = static_cast<int>(want_int(v, key));
    else if (key == "m_pairs") cfg.m_pairs = static_cast<int>(want_int(v, key));
    else if (key == "upscale") cfg.upscale = static_cast<int>(want_int(v, key));
    else if (key == "window") cfg.window = static_cast<int>(want_int(v, key));
    else if (key == "heads") cfg.heads = static_cast<int>(want_int(v, key));
    else if (key == "scales") {
      if (!v.is_array() || v.empty()) throw Error("config: key 'scales' must be a non-empty array");
      cfg.scales.clear();
      for (const json& s : v) cfg.scales.push_back(static_cast<int>(want_int(s, key)));
    } else if (key == "tokens") cfg.tokens = want_int(v, key);
    else if (key == "sp_iters") cfg.sp_iters = static_cast<int>(want_int(v, key));
    else if (key == "top_k") cfg.top_k = static_cast<int>(want_int(v, key));
    else if (key == "d_state") cfg.d_state = static_cast<int>(want_int(v, key));
    else if (key == "bidirectional") cfg.bidirectional = want_bool(v, key);
    else if (key == "fuse_full_res") cfg.fuse_full_res = want_bool(v, key);
    else throw Error("config: unknown key 'model." + key + "'");
  }
  return cfg;
}

json model_to(const ModelConfig& cfg) {
  json j;
  j["channels"] = cfg.channels;
  j["n_loe"] = cfg.n_loe;
  j["m_pairs"] = cfg.m_pairs;
  j["upscale"] = cfg.upscale;
  j["window"] = cfg.window;
  j["heads"] = cfg.heads;
  j["scales"] = cfg.scales;
  j["tokens"] = cfg.tokens;
  j["sp_iters"] = cfg.sp_iters;
  j["top_k"] = cfg.top_k;
  j["d_state"] = cfg.d_state;
  j["bidirectional"] = cfg.bidirectional;
  j["fuse_full_res"] = cfg.fuse_full_res;
  return j;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) { return model_to(cfg).dump(); }

ModelConfig model_config_from_json(const std::string& text) {
  return model_from(parse_object(text, "model config"));
}

std::string runconfig_to_json(const RunConfig& rc) {
  json j;
  j["model"] = model_to(rc.model);
  j["seed"] = rc.seed;
  j["noise_seed"] = rc.noise_seed;
  j["self_ensemble"] = rc.self_ensemble;
  return j.dump(2);
}

RunConfig runconfig_from_json(const std::string& text) {
  const json j = parse_object(text, "run config");
  RunConfig rc;
  for (const auto& [key, v] : j.items()) {
    if (key == "model") {
      if (!v.is_object()) throw Error("config: key 'model' must be an object");
      rc.model = model_from(v);
    } else if (key == "seed") {
      if (!v.is_number_unsigned() && !v.is_number_integer())
        throw Error("config: key 'seed' must be an integer");
      rc.seed = v.get<uint64_t>();
    } else if (key == "noise_seed") {
      if (!v.is_number_unsigned() && !v.is_number_integer())
        throw Error("config: key 'noise_seed' must be an integer");
      rc.noise_seed = v.get<uint64_t>();
    } else if (key == "self_ensemble") {
      rc.self_ensemble = want_bool(v, key);
    } else {
      throw Error("config: unknown key '" + key + "'");
    }
  }
  return rc;
}

RunConfig load_runconfig(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return runconfig_from_json(ss.str());
}

}  // namespace spmm
