#pragma once

#include <cstdint>
#include <string>

#include "spmm/model.hpp"

namespace spmm {

// Experiment description: the architecture plus run seeds and flags.
//
// Serialized as JSON.  Parsing is strict - any key the schema does not name
// is rejected with an error naming it, so typos in experiment files fail
// loudly instead of silently running defaults.  Missing keys take the
// documented defaults below (and in ModelConfig).
//
//   {
//     "model": { "channels": 36, "n_loe": 3, "m_pairs": 2, "upscale": 4,
//                "window": 8, "heads": 4, "scales": [1, 2, 4], "tokens": 64,
//                "sp_iters": 5, "top_k": 1, "d_state": 16,
//                "bidirectional": true, "fuse_full_res": false },
//     "seed": 0,          // weight-init seed
//     "noise_seed": 0,    // routing-noise seed for stochastic modes
//     "self_ensemble": false
//   }
struct RunConfig {
  ModelConfig model;
  uint64_t seed = 0;
  uint64_t noise_seed = 0;
  bool self_ensemble = false;
};

// String-level (de)serialization keeps the JSON library out of public headers.
std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

std::string runconfig_to_json(const RunConfig& rc);
RunConfig runconfig_from_json(const std::string& text);
RunConfig load_runconfig(const std::string& path);

}  // namespace spmm
