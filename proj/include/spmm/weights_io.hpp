#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "spmm/tensor.hpp"

namespace spmm {

// Binary container for a named tensor tree.
//
// Layout:
//   bytes 0..3   magic "SPMM"
//   bytes 4..5   format version, u16 little-endian (currently 1)
//   bytes 6..9   manifest length in bytes, u32 little-endian
//   manifest     UTF-8 JSON: {"meta": {...}, "tensors": [{dtype,name,nbytes,
//                offset,shape}, ...]} with tensors sorted by name and object
//                keys in canonical (alphabetical) order
//   padding      zero bytes up to the next multiple of 64
//   payload      per-tensor raw little-endian IEEE-754 data; each tensor's
//                offset (relative to the payload start) is a multiple of 64,
//                offsets strictly increasing and non-overlapping
//   bytes -4..   CRC32 (zlib polynomial) of the payload region including the
//                alignment gaps, u32 little-endian
//
// Round-trip guarantee: load(save(tree)) == tree bitwise. Version mismatch,
// dtype mismatch against the build's element type, malformed manifests and
// checksum failures all raise errors instead of returning partial data.

inline constexpr uint16_t kWeightsVersion = 1;

template <typename T>
struct LoadedWeights {
  std::map<std::string, Tensor<T>> tree;
  std::string meta_json;  // the manifest's "meta" object, serialized
};

template <typename T>
std::vector<uint8_t> weights_encode(const std::map<std::string, Tensor<T>>& tree,
                                    const std::string& meta_json = "{}");

template <typename T>
LoadedWeights<T> weights_decode(const std::vector<uint8_t>& bytes);

template <typename T>
void save_weights(const std::map<std::string, Tensor<T>>& tree, const std::string& path,
                  const std::string& meta_json = "{}");

template <typename T>
LoadedWeights<T> load_weights(const std::string& path);

}  // namespace spmm
