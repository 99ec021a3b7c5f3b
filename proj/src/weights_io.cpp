#include "spmm/weights_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace spmm {

namespace {

using json = nlohmann::json;

constexpr size_t kAlign = 64;
constexpr size_t kHeaderBytes = 10;  // magic + version + manifest length

size_t align_up(size_t n) { return (n + kAlign - 1) / kAlign * kAlign; }

template <typename T>
const char* dtype_name() {
  return sizeof(T) == 8 ? "f64" : "f32";
}

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v));
  out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

uint16_t get_u16(const uint8_t* p) {
  return static_cast<uint16_t>(p[0] | (static_cast<uint16_t>(p[1]) << 8));
}

uint32_t get_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint32_t payload_crc(const uint8_t* data, size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  if (n) crc = crc32(crc, data, static_cast<uInt>(n));
  return static_cast<uint32_t>(crc);
}

}  // namespace

template <typename T>
std::vector<uint8_t> weights_encode(const std::map<std::string, Tensor<T>>& tree,
                                    const std::string& meta_json) {
  json manifest;
  manifest["meta"] = meta_json.empty() ? json::object() : json::parse(meta_json);
  manifest["tensors"] = json::array();

  size_t payload_size = 0;
  for (const auto& [name, t] : tree) {
    const size_t nbytes = static_cast<size_t>(t.numel()) * sizeof(T);
    json entry;
    entry["dtype"] = dtype_name<T>();
    entry["name"] = name;
    entry["nbytes"] = nbytes;
    entry["offset"] = payload_size;
    entry["shape"] = t.shape();
    manifest["tensors"].push_back(std::move(entry));
    payload_size = align_up(payload_size + nbytes);
  }

  const std::string mani = manifest.dump();
  if (mani.size() > 0xffffffffu) throw Error("weights: manifest too large");

  std::vector<uint8_t> out;
  out.reserve(align_up(kHeaderBytes + mani.size()) + payload_size + 4);
  out.insert(out.end(), {'S', 'P', 'M', 'M'});
  put_u16(out, kWeightsVersion);
  put_u32(out, static_cast<uint32_t>(mani.size()));
  out.insert(out.end(), mani.begin(), mani.end());
  out.resize(align_up(out.size()), 0);

  const size_t payload_at = out.size();
  out.resize(payload_at + payload_size, 0);
  size_t offset = 0;
  for (const auto& kv : tree) {
    const Tensor<T>& t = kv.second;
    const size_t nbytes = static_cast<size_t>(t.numel()) * sizeof(T);
    if (nbytes) std::memcpy(out.data() + payload_at + offset, t.data(), nbytes);
    offset = align_up(offset + nbytes);
  }
  put_u32(out, payload_crc(out.data() + payload_at, payload_size));
  return out;
}

template <typename T>
LoadedWeights<T> weights_decode(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < kHeaderBytes || std::memcmp(bytes.data(), "SPMM", 4) != 0)
    throw Error("weights: bad magic (not a weights file)");
  const uint16_t version = get_u16(bytes.data() + 4);
  if (version != kWeightsVersion)
    throw Error("weights: unsupported version " + std::to_string(version) + " (expected " +
                std::to_string(kWeightsVersion) + ")");
  const size_t mani_len = get_u32(bytes.data() + 6);
  if (kHeaderBytes + mani_len > bytes.size()) throw Error("weights: truncated manifest");

  json manifest;
  try {
    manifest = json::parse(bytes.begin() + kHeaderBytes, bytes.begin() + kHeaderBytes + mani_len);
  } catch (const std::exception& e) {
    throw Error(std::string("weights: manifest does not parse: ") + e.what());
  }
  if (!manifest.is_object() || !manifest.contains("tensors") || !manifest["tensors"].is_array())
    throw Error("weights: manifest missing tensor list");

  const size_t payload_at = align_up(kHeaderBytes + mani_len);
  if (payload_at + 4 > bytes.size()) throw Error("weights: truncated payload");
  const size_t payload_size = bytes.size() - 4 - payload_at;

  LoadedWeights<T> out;
  out.meta_json = manifest.contains("meta") ? manifest["meta"].dump() : std::string("{}");

  size_t next_free = 0;  // enforces strictly increasing, non-overlapping offsets
  for (const json& entry : manifest["tensors"]) {
    if (!entry.is_object() || !entry.contains("name") || !entry.contains("dtype") ||
        !entry.contains("shape") || !entry.contains("offset") || !entry.contains("nbytes"))
      throw Error("weights: malformed tensor entry in manifest");
    const std::string name = entry["name"].get<std::string>();
    const std::string dtype = entry["dtype"].get<std::string>();
    if (dtype != dtype_name<T>())
      throw Error("weights: tensor '" + name + "' has dtype " + dtype +
                  " but this build expects " + dtype_name<T>());
    const Shape shape = entry["shape"].get<Shape>();
    const size_t offset = entry["offset"].get<size_t>();
    const size_t nbytes = entry["nbytes"].get<size_t>();

    Tensor<T> t(shape);
    if (nbytes != static_cast<size_t>(t.numel()) * sizeof(T))
      throw Error("weights: tensor '" + name + "' byte count disagrees with its shape");
    if (offset % kAlign != 0)
      throw Error("weights: tensor '" + name + "' payload is not 64-byte aligned");
    if (offset < next_free)
      throw Error("weights: tensor '" + name + "' overlaps the previous payload");
    if (offset + nbytes > payload_size)
      throw Error("weights: tensor '" + name + "' payload runs past end of file");
    if (nbytes) std::memcpy(t.data(), bytes.data() + payload_at + offset, nbytes);
    next_free = offset + nbytes;
    if (!out.tree.emplace(name, std::move(t)).second)
      throw Error("weights: duplicate tensor '" + name + "'");
  }

  const uint32_t want = get_u32(bytes.data() + bytes.size() - 4);
  const uint32_t got = payload_crc(bytes.data() + payload_at, payload_size);
  if (want != got) throw Error("weights: payload checksum mismatch (file corrupt)");
  return out;
}

template <typename T>
void save_weights(const std::map<std::string, Tensor<T>>& tree, const std::string& path,
                  const std::string& meta_json) {
  const std::vector<uint8_t> bytes = weights_encode(tree, meta_json);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("weights: cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("weights: write to '" + path + "' failed");
}

template <typename T>
LoadedWeights<T> load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("weights: cannot open '" + path + "'");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return weights_decode<T>(bytes);
}

#define SPMM_INSTANTIATE_WEIGHTS(T)                                                        \
  template std::vector<uint8_t> weights_encode<T>(const std::map<std::string, Tensor<T>>&, \
                                                  const std::string&);                     \
  template LoadedWeights<T> weights_decode<T>(const std::vector<uint8_t>&);                \
  template void save_weights<T>(const std::map<std::string, Tensor<T>>&,                   \
                                const std::string&, const std::string&);                   \
  template LoadedWeights<T> load_weights<T>(const std::string&);

SPMM_INSTANTIATE_WEIGHTS(float)
SPMM_INSTANTIATE_WEIGHTS(double)

}  // namespace spmm
