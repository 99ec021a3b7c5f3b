#include "spmm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace spmm {

namespace {

void check_hw(const Shape& s, const char* who) {
  if (s.size() != 2) throw Error(std::string(who) + ": expected an [H,W] map, got " + shape_str(s));
}

template <typename T>
void check_same(const Tensor<T>& a, const Tensor<T>& b, const char* who) {
  if (!a.same_shape(b))
    throw Error(std::string(who) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
}

// Precomputed taps of one separable resize axis.
struct AxisTaps {
  int64_t support = 0;             // taps per output coordinate
  std::vector<int64_t> first;      // [out] leftmost source index (clamped later)
  std::vector<double> weight;      // [out * support], rows normalised to 1
};

AxisTaps make_taps(int64_t in, int64_t out) {
  if (in < 1 || out < 1) throw Error("bicubic: extents must be positive");
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  const double widen = std::max(1.0, ratio);  // antialias on downscale
  AxisTaps taps;
  taps.support = static_cast<int64_t>(std::ceil(2.0 * widen)) * 2;
  taps.first.resize(static_cast<size_t>(out));
  taps.weight.resize(static_cast<size_t>(out * taps.support));
  for (int64_t o = 0; o < out; ++o) {
    const double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    const int64_t lo = static_cast<int64_t>(std::floor(src - 2.0 * widen)) + 1;
    taps.first[static_cast<size_t>(o)] = lo;
    double sum = 0.0;
    for (int64_t k = 0; k < taps.support; ++k) {
      const double d = (src - static_cast<double>(lo + k)) / widen;
      const double w = cubic_kernel(d) / widen;
      taps.weight[static_cast<size_t>(o * taps.support + k)] = w;
      sum += w;
    }
    if (sum <= 0.0) throw Error("bicubic: degenerate tap row");
    for (int64_t k = 0; k < taps.support; ++k)
      taps.weight[static_cast<size_t>(o * taps.support + k)] /= sum;
  }
  return taps;
}

}  // namespace

double cubic_kernel(double x) {
  constexpr double a = -0.5;
  x = std::fabs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

template <typename T>
Tensor<T> image_to_tensor(const ImageU8& img) {
  if (img.h < 1 || img.w < 1 || img.data.size() != static_cast<size_t>(img.h * img.w * 3))
    throw Error("image: inconsistent dimensions");
  Tensor<T> t({1, 3, img.h, img.w});
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c)
        t.at(0, c, y, x) = static_cast<T>(img.at(y, x, c) / 255.0);
  return t;
}

template <typename T>
ImageU8 tensor_to_image(const Tensor<T>& t) {
  if (t.rank() != 4 || t.dim(0) != 1 || t.dim(1) != 3)
    throw Error("image: expected a [1,3,H,W] tensor, got " + shape_str(t.shape()));
  ImageU8 img(t.dim(2), t.dim(3));
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(static_cast<double>(t.at(0, c, y, x)), 0.0, 1.0);
        img.at(y, x, c) = static_cast<uint8_t>(std::lround(v * 255.0));
      }
  return img;
}

template <typename T>
Tensor<T> rgb_to_y(const Tensor<T>& img) {
  if (img.rank() != 4 || img.dim(0) != 1 || img.dim(1) != 3)
    throw Error("rgb_to_y: expected a [1,3,H,W] tensor, got " + shape_str(img.shape()));
  const int64_t H = img.dim(2), W = img.dim(3);
  Tensor<T> y({H, W});
  for (int64_t i = 0; i < H; ++i)
    for (int64_t j = 0; j < W; ++j) {
      const double r = static_cast<double>(img.at(0, 0, i, j));
      const double g = static_cast<double>(img.at(0, 1, i, j));
      const double b = static_cast<double>(img.at(0, 2, i, j));
      y.at(i, j) = static_cast<T>(16.0 + 65.481 * r + 128.553 * g + 24.966 * b);
    }
  return y;
}

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak, int border_crop) {
  check_hw(a.shape(), "psnr");
  check_same(a, b, "psnr");
  if (peak <= 0.0) throw Error("psnr: peak must be positive");
  if (border_crop < 0) throw Error("psnr: negative border crop");
  const int64_t H = a.dim(0), W = a.dim(1), c = border_crop;
  if (H - 2 * c < 1 || W - 2 * c < 1)
    throw Error("psnr: border crop " + std::to_string(c) + " leaves no pixels of " +
                shape_str(a.shape()));
  double sse = 0.0;
  for (int64_t i = c; i < H - c; ++i)
    for (int64_t j = c; j < W - c; ++j) {
      const double d = static_cast<double>(a.at(i, j)) - static_cast<double>(b.at(i, j));
      sse += d * d;
    }
  if (sse == 0.0) return std::numeric_limits<double>::infinity();
  const double mse = sse / (static_cast<double>(H - 2 * c) * static_cast<double>(W - 2 * c));
  return 10.0 * std::log10(peak * peak / mse);
}

template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, double peak) {
  check_hw(a.shape(), "ssim");
  check_same(a, b, "ssim");
  if (peak <= 0.0) throw Error("ssim: peak must be positive");
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5, kK1 = 0.01, kK2 = 0.03;
  const int64_t H = a.dim(0), W = a.dim(1);
  if (H < kWin || W < kWin)
    throw Error("ssim: image " + shape_str(a.shape()) + " smaller than the 11x11 window");

  double window[kWin * kWin];
  double wsum = 0.0;
  for (int i = 0; i < kWin; ++i)
    for (int j = 0; j < kWin; ++j) {
      const double dy = i - (kWin - 1) / 2.0, dx = j - (kWin - 1) / 2.0;
      window[i * kWin + j] = std::exp(-(dy * dy + dx * dx) / (2.0 * kSigma * kSigma));
      wsum += window[i * kWin + j];
    }
  for (double& w : window) w /= wsum;

  const double c1 = (kK1 * peak) * (kK1 * peak);
  const double c2 = (kK2 * peak) * (kK2 * peak);
  double total = 0.0;
  int64_t count = 0;
  for (int64_t y = 0; y + kWin <= H; ++y)
    for (int64_t x = 0; x + kWin <= W; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int i = 0; i < kWin; ++i)
        for (int j = 0; j < kWin; ++j) {
          const double w = window[i * kWin + j];
          const double va = static_cast<double>(a.at(y + i, x + j));
          const double vb = static_cast<double>(b.at(y + i, x + j));
          ma += w * va;
          mb += w * vb;
          saa += w * va * va;
          sbb += w * vb * vb;
          sab += w * va * vb;
        }
      const double var_a = saa - ma * ma;
      const double var_b = sbb - mb * mb;
      const double cov = sab - ma * mb;
      const double num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
      const double den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
      total += num / den;
      ++count;
    }
  return total / static_cast<double>(count);
}

template <typename T>
Tensor<T> bicubic_resize(const Tensor<T>& x, int64_t out_h, int64_t out_w) {
  if (x.rank() != 4) throw Error("bicubic: expected a [B,C,H,W] tensor, got " + shape_str(x.shape()));
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const AxisTaps th = make_taps(H, out_h);
  const AxisTaps tw = make_taps(W, out_w);

  // Horizontal pass, then vertical, accumulating in double.
  Tensor<double> mid({B, C, H, out_w});
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* src = x.data() + bc * H * W;
    double* dst = mid.data() + bc * H * out_w;
    for (int64_t y = 0; y < H; ++y)
      for (int64_t o = 0; o < out_w; ++o) {
        double acc = 0.0;
        const int64_t lo = tw.first[static_cast<size_t>(o)];
        for (int64_t k = 0; k < tw.support; ++k) {
          const int64_t sx = std::clamp<int64_t>(lo + k, 0, W - 1);
          acc += tw.weight[static_cast<size_t>(o * tw.support + k)] *
                 static_cast<double>(src[y * W + sx]);
        }
        dst[y * out_w + o] = acc;
      }
  }
  Tensor<T> out({B, C, out_h, out_w});
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const double* src = mid.data() + bc * H * out_w;
    T* dst = out.data() + bc * out_h * out_w;
    for (int64_t o = 0; o < out_h; ++o)
      for (int64_t xo = 0; xo < out_w; ++xo) {
        double acc = 0.0;
        const int64_t lo = th.first[static_cast<size_t>(o)];
        for (int64_t k = 0; k < th.support; ++k) {
          const int64_t sy = std::clamp<int64_t>(lo + k, 0, H - 1);
          acc += th.weight[static_cast<size_t>(o * th.support + k)] * src[sy * out_w + xo];
        }
        dst[o * out_w + xo] = static_cast<T>(acc);
      }
  }
  return out;
}

#define SPMM_INSTANTIATE_METRICS(T)                                               \
  template Tensor<T> image_to_tensor<T>(const ImageU8&);                          \
  template ImageU8 tensor_to_image<T>(const Tensor<T>&);                          \
  template Tensor<T> rgb_to_y<T>(const Tensor<T>&);                               \
  template double psnr<T>(const Tensor<T>&, const Tensor<T>&, double, int);       \
  template double ssim<T>(const Tensor<T>&, const Tensor<T>&, double);            \
  template Tensor<T> bicubic_resize<T>(const Tensor<T>&, int64_t, int64_t);

SPMM_INSTANTIATE_METRICS(float)
SPMM_INSTANTIATE_METRICS(double)

}  // namespace spmm
