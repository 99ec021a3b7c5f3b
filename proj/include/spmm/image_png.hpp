#pragma once
// Minimal lossless PNG codec for evaluation artifacts.
//
// Reading accepts 8-bit images of color type 0 (grayscale, promoted to three
// identical channels), 2 (RGB), 4 and 6 (alpha variants, alpha dropped).
// Palette, sub-byte and 16-bit depths, and interlacing are rejected with
// explicit errors; malformed structure is reported with the byte offset of
// the violation.  Writing always emits 8-bit RGB (color type 2) with filter
// 0 rows, so read(write(img)) round-trips bitwise.

#include <cstdint>
#include <string>
#include <vector>

#include "spmm/metrics.hpp"

namespace spmm {

ImageU8 png_decode(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> png_encode(const ImageU8& img);

ImageU8 png_read(const std::string& path);
void png_write(const std::string& path, const ImageU8& img);

}  // namespace spmm
