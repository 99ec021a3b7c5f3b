#pragma once
// Evaluation utilities: 8-bit image container, BT.601 luma extraction,
// Y-channel PSNR / SSIM, and Catmull-Rom bicubic resizing for generating
// low-resolution inputs.

#include <cstdint>
#include <vector>

#include "spmm/tensor.hpp"

namespace spmm {

// Interleaved 8-bit RGB, row-major.  Conversion to a tensor divides by 255;
// conversion back clamps to [0, 1] and rounds half away from zero.
struct ImageU8 {
  int64_t h = 0, w = 0;
  std::vector<uint8_t> data;  // h * w * 3

  ImageU8() = default;
  ImageU8(int64_t height, int64_t width)
      : h(height), w(width), data(static_cast<size_t>(height * width * 3)) {}
  uint8_t& at(int64_t y, int64_t x, int c) {
    return data[static_cast<size_t>((y * w + x) * 3 + c)];
  }
  uint8_t at(int64_t y, int64_t x, int c) const {
    return data[static_cast<size_t>((y * w + x) * 3 + c)];
  }
  bool operator==(const ImageU8& o) const { return h == o.h && w == o.w && data == o.data; }
};

template <typename T>
Tensor<T> image_to_tensor(const ImageU8& img);  // [1,3,H,W] in [0,1]
template <typename T>
ImageU8 tensor_to_image(const Tensor<T>& t);  // [1,3,H,W], clamped and rounded

// Studio-swing BT.601 luma, the de-facto super-resolution evaluation
// convention: Y = 16 + 65.481 R + 128.553 G + 24.966 B for RGB in [0, 1],
// giving Y in [16, 235].  Input [1,3,H,W], output [H,W].
template <typename T>
Tensor<T> rgb_to_y(const Tensor<T>& img);

// 10 log10(peak^2 / MSE) over the images with a `border_crop`-pixel frame
// stripped (the usual convention crops by the upscale factor).  Identical
// inputs return +infinity.  Inputs are [H,W] maps.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak, int border_crop);

// Mean local structural similarity over an 11x11 Gaussian window
// (sigma 1.5), k1 = 0.01, k2 = 0.03, evaluated only where the window fits
// entirely inside the image (no padding).  Inputs are [H,W] maps at least
// 11x11; accumulation is in double precision.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, double peak);

// Separable Catmull-Rom cubic (a = -0.5) resize over the last two axes of a
// [B,C,H,W] tensor.  Sample positions map through
// src = (dst + 0.5) * (in / out) - 0.5 with clamped edges; on downscale the
// kernel is widened by the scale factor (antialiasing).  Tap weights are
// renormalised to sum to one, so constant images are preserved exactly and
// size-preserving calls are the identity.
template <typename T>
Tensor<T> bicubic_resize(const Tensor<T>& x, int64_t out_h, int64_t out_w);

// The underlying kernel, exposed so tests can tabulate impulse responses.
double cubic_kernel(double x);

}  // namespace spmm
