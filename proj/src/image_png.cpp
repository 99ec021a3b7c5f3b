#include "spmm/image_png.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

namespace spmm {

namespace {

constexpr uint8_t kSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

[[noreturn]] void fail(const std::string& what, size_t offset) {
  throw Error("png: " + what + " at byte " + std::to_string(offset));
}

uint32_t be32(const uint8_t* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

void push_be32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

int channels_for(uint8_t color_type, size_t offset) {
  switch (color_type) {
    case 0: return 1;
    case 2: return 3;
    case 4: return 2;
    case 6: return 4;
    case 3: fail("palette images unsupported", offset);
    default: fail("unknown color type " + std::to_string(color_type), offset);
  }
}

uint8_t paeth(uint8_t a, uint8_t b, uint8_t c) {
  const int p = static_cast<int>(a) + static_cast<int>(b) - static_cast<int>(c);
  const int pa = std::abs(p - static_cast<int>(a));
  const int pb = std::abs(p - static_cast<int>(b));
  const int pc = std::abs(p - static_cast<int>(c));
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

void append_chunk(std::vector<uint8_t>& out, const char type[4],
                  const std::vector<uint8_t>& data) {
  push_be32(out, static_cast<uint32_t>(data.size()));
  const size_t type_at = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, out.data() + type_at, static_cast<uInt>(4 + data.size()));
  push_be32(out, static_cast<uint32_t>(crc));
}

}  // namespace

ImageU8 png_decode(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kSignature, 8) != 0)
    fail("missing signature", 0);

  size_t off = 8;
  bool saw_ihdr = false, saw_iend = false;
  uint32_t width = 0, height = 0;
  uint8_t color_type = 0;
  int ch = 0;
  std::vector<uint8_t> idat;

  while (!saw_iend) {
    if (off + 8 > bytes.size()) fail("truncated chunk header", off);
    const uint32_t len = be32(bytes.data() + off);
    const uint8_t* type = bytes.data() + off + 4;
    if (off + 12 + static_cast<size_t>(len) > bytes.size()) fail("truncated chunk body", off);
    const uint8_t* data = bytes.data() + off + 8;
    const size_t crc_at = off + 8 + len;
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, type, static_cast<uInt>(4 + len));
    if (static_cast<uint32_t>(crc) != be32(bytes.data() + crc_at))
      fail("chunk checksum mismatch", crc_at);

    const auto is = [&](const char* t) { return std::memcmp(type, t, 4) == 0; };
    if (!saw_ihdr) {
      if (!is("IHDR")) fail("first chunk is not the header", off + 4);
      if (len != 13) fail("header length must be 13", off);
      width = be32(data);
      height = be32(data + 4);
      if (width == 0 || height == 0) fail("zero image extent", off + 8);
      if (width > (1u << 24) || height > (1u << 24)) fail("implausible image extent", off + 8);
      const uint8_t depth = data[8];
      if (depth == 16) fail("16-bit depth unsupported", off + 16);
      if (depth != 8) fail("bit depth " + std::to_string(depth) + " unsupported", off + 16);
      color_type = data[9];
      ch = channels_for(color_type, off + 17);
      if (data[10] != 0) fail("unknown compression method", off + 18);
      if (data[11] != 0) fail("unknown filter method", off + 19);
      if (data[12] == 1) fail("interlaced images unsupported", off + 20);
      if (data[12] != 0) fail("unknown interlace method", off + 20);
      saw_ihdr = true;
    } else if (is("IDAT")) {
      idat.insert(idat.end(), data, data + len);
    } else if (is("IEND")) {
      saw_iend = true;
    }
    // Ancillary chunks are skipped.
    off = crc_at + 4;
  }
  if (idat.empty()) fail("no image data", off);

  const size_t stride = static_cast<size_t>(width) * static_cast<size_t>(ch);
  const size_t raw_size = static_cast<size_t>(height) * (stride + 1);
  std::vector<uint8_t> raw(raw_size);
  uLongf dest_len = raw_size;
  const int zrc = uncompress(raw.data(), &dest_len, idat.data(), static_cast<uLong>(idat.size()));
  if (zrc != Z_OK || dest_len != raw_size) fail("image data does not inflate cleanly", 8);

  // Undo per-row filters in place (prior row all zero for the first row).
  std::vector<uint8_t> prior(stride, 0);
  ImageU8 img(static_cast<int64_t>(height), static_cast<int64_t>(width));
  for (size_t y = 0; y < height; ++y) {
    uint8_t* row = raw.data() + y * (stride + 1);
    const uint8_t filter = row[0];
    uint8_t* cur = row + 1;
    switch (filter) {
      case 0:
        break;
      case 1:
        for (size_t i = static_cast<size_t>(ch); i < stride; ++i)
          cur[i] = static_cast<uint8_t>(cur[i] + cur[i - ch]);
        break;
      case 2:
        for (size_t i = 0; i < stride; ++i) cur[i] = static_cast<uint8_t>(cur[i] + prior[i]);
        break;
      case 3:
        for (size_t i = 0; i < stride; ++i) {
          const uint8_t left = i >= static_cast<size_t>(ch) ? cur[i - ch] : 0;
          cur[i] = static_cast<uint8_t>(cur[i] + ((left + prior[i]) >> 1));
        }
        break;
      case 4:
        for (size_t i = 0; i < stride; ++i) {
          const uint8_t left = i >= static_cast<size_t>(ch) ? cur[i - ch] : 0;
          const uint8_t ul = i >= static_cast<size_t>(ch) ? prior[i - ch] : 0;
          cur[i] = static_cast<uint8_t>(cur[i] + paeth(left, prior[i], ul));
        }
        break;
      default:
        fail("unknown row filter " + std::to_string(filter), 8);
    }
    std::memcpy(prior.data(), cur, stride);
    for (size_t x = 0; x < width; ++x) {
      const uint8_t* px = cur + x * ch;
      uint8_t r, g, b;
      if (color_type == 0 || color_type == 4) {
        r = g = b = px[0];  // grayscale promoted; alpha dropped
      } else {
        r = px[0];
        g = px[1];
        b = px[2];
      }
      img.at(static_cast<int64_t>(y), static_cast<int64_t>(x), 0) = r;
      img.at(static_cast<int64_t>(y), static_cast<int64_t>(x), 1) = g;
      img.at(static_cast<int64_t>(y), static_cast<int64_t>(x), 2) = b;
    }
  }
  return img;
}

std::vector<uint8_t> png_encode(const ImageU8& img) {
  if (img.h < 1 || img.w < 1 || img.data.size() != static_cast<size_t>(img.h * img.w * 3))
    throw Error("png: inconsistent image dimensions");

  const size_t stride = static_cast<size_t>(img.w) * 3;
  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(img.h) * (stride + 1));
  for (int64_t y = 0; y < img.h; ++y) {
    raw.push_back(0);  // filter: none
    const uint8_t* row = img.data.data() + static_cast<size_t>(y) * stride;
    raw.insert(raw.end(), row, row + stride);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> packed(bound);
  if (compress2(packed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()),
                Z_DEFAULT_COMPRESSION) != Z_OK)
    throw Error("png: deflate failed");
  packed.resize(bound);

  std::vector<uint8_t> out(kSignature, kSignature + 8);
  std::vector<uint8_t> ihdr;
  push_be32(ihdr, static_cast<uint32_t>(img.w));
  push_be32(ihdr, static_cast<uint32_t>(img.h));
  ihdr.push_back(8);  // depth
  ihdr.push_back(2);  // RGB
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter method
  ihdr.push_back(0);  // no interlace
  append_chunk(out, "IHDR", ihdr);
  append_chunk(out, "IDAT", packed);
  append_chunk(out, "IEND", {});
  return out;
}

ImageU8 png_read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("png: cannot open '" + path + "'");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return png_decode(bytes);
}

void png_write(const std::string& path, const ImageU8& img) {
  const std::vector<uint8_t> bytes = png_encode(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("png: cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("png: write to '" + path + "' failed");
}

}  // namespace spmm
