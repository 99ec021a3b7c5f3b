// Python bindings for the main operations: scans, superpixels, resizing,
// metrics, weight files, model inference, toy training, gradient checks.
// Arrays cross the boundary as numpy arrays of the build's element type
// (float32 unless the library was built with 64-bit elements).

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "spmm/bench.hpp"
#include "spmm/gradcheck.hpp"
#include "spmm/metrics.hpp"
#include "spmm/model.hpp"
#include "spmm/runconfig.hpp"
#include "spmm/superpixel.hpp"
#include "spmm/train.hpp"
#include "spmm/weights_io.hpp"

namespace py = pybind11;
using spmm::real;
using spmm::Tensor;

namespace {

using Arr = py::array_t<real, py::array::c_style | py::array::forcecast>;

Tensor<real> to_tensor(const Arr& a) {
  spmm::Shape shape(static_cast<size_t>(a.ndim()));
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = a.shape(i);
  Tensor<real> t(shape);
  std::copy_n(a.data(), static_cast<size_t>(t.numel()), t.data());
  return t;
}

Arr from_tensor(const Tensor<real>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Arr out(shape);
  std::copy_n(t.data(), static_cast<size_t>(t.numel()), out.mutable_data());
  return out;
}

// [H,W,3] in [0,1] <-> the library's [1,3,H,W] layout.
Tensor<real> img_to_chw(const Arr& a) {
  if (a.ndim() != 3 || a.shape(2) != 3)
    throw spmm::Error("expected an [H,W,3] array");
  const int64_t h = a.shape(0), w = a.shape(1);
  Tensor<real> t({1, 3, h, w});
  const real* src = a.data();
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c) t.at(0, c, y, x) = src[(y * w + x) * 3 + c];
  return t;
}

Arr chw_to_img(const Tensor<real>& t) {
  const int64_t h = t.dim(2), w = t.dim(3);
  Arr out(std::vector<py::ssize_t>{h, w, 3});
  real* dst = out.mutable_data();
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c) dst[(y * w + x) * 3 + c] = t.at(0, c, y, x);
  return out;
}

spmm::ModelConfig preset_cfg(const std::string& preset, int scale) {
  return spmm::ModelConfig::preset(preset, scale);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Superpixel state-space super-resolution core";
  m.attr("__version__") = "0.1.0";
  m.attr("real_bits") = static_cast<int>(sizeof(real) * 8);

  m.def(
      "scan",
      [](const Arr& abar, const Arr& bx, bool parallel, int threads) {
        const Tensor<real> a = to_tensor(abar), b = to_tensor(bx);
        return from_tensor(parallel ? spmm::scan_parallel(a, b, nullptr, threads)
                                    : spmm::scan_recurrent(a, b));
      },
      py::arg("abar"), py::arg("bx"), py::arg("parallel") = true, py::arg("threads") = 1,
      "Run the [L,C,d] state recurrence h_t = abar_t * h_{t-1} + bx_t.");

  m.def(
      "superpixels",
      [](const Arr& img, int64_t tokens, int iters) {
        const Tensor<real> chw = img_to_chw(img);
        const int64_t h = chw.dim(2), w = chw.dim(3);
        Tensor<real> flat({h * w, 3});
        for (int64_t c = 0; c < 3; ++c)
          for (int64_t i = 0; i < h * w; ++i) flat.at(i, c) = chw.at(0, c, i / w, i % w);
        const spmm::SuperpixelGrid grid = spmm::SuperpixelGrid::make_square(h, w, tokens);
        const spmm::SuperpixelSample<real> s = spmm::sample(flat, grid, iters);
        py::array_t<int32_t> mask(std::vector<py::ssize_t>{h, w});
        std::copy_n(s.mask.data(), s.mask.size(), mask.mutable_data());
        return py::make_tuple(mask, from_tensor(s.features));
      },
      py::arg("img"), py::arg("tokens") = 64, py::arg("iters") = 5,
      "Cluster an [H,W,3] image; returns (assignment [H,W], token features [M,3]).");

  m.def(
      "bicubic_resize",
      [](const Arr& img, int64_t out_h, int64_t out_w) {
        return chw_to_img(spmm::bicubic_resize(img_to_chw(img), out_h, out_w));
      },
      py::arg("img"), py::arg("out_h"), py::arg("out_w"));

  m.def(
      "psnr_y",
      [](const Arr& a, const Arr& b, int border) {
        return spmm::psnr(spmm::rgb_to_y(img_to_chw(a)), spmm::rgb_to_y(img_to_chw(b)), 255.0,
                          border);
      },
      py::arg("a"), py::arg("b"), py::arg("border") = 0,
      "Y-channel PSNR between two [H,W,3] images in [0,1].");

  m.def(
      "ssim_y",
      [](const Arr& a, const Arr& b) {
        return spmm::ssim(spmm::rgb_to_y(img_to_chw(a)), spmm::rgb_to_y(img_to_chw(b)), 255.0);
      },
      py::arg("a"), py::arg("b"));

  m.def(
      "init_weights",
      [](const std::string& preset, int scale, uint64_t seed, const std::string& path) {
        const spmm::ModelConfig cfg = preset_cfg(preset, scale);
        const spmm::Model<real> model = spmm::model_init<real>(cfg, seed);
        spmm::save_weights(model.weights, path, spmm::model_config_to_json(cfg));
        return spmm::param_count(model);
      },
      py::arg("preset"), py::arg("scale"), py::arg("seed"), py::arg("path"),
      "Seed-deterministic weight init written to a weights file; returns the element count.");

  m.def(
      "upscale",
      [](const Arr& lr, const std::string& weights_path, bool self_ensemble) {
        const spmm::LoadedWeights<real> lw = spmm::load_weights<real>(weights_path);
        const spmm::ModelConfig cfg = spmm::model_config_from_json(lw.meta_json);
        spmm::Model<real> model{cfg, lw.tree};
        const Tensor<real> x = img_to_chw(lr);
        return chw_to_img(self_ensemble
                              ? spmm::self_ensemble(x, model)
                              : spmm::model_apply(x, model, spmm::RunMode::infer()));
      },
      py::arg("lr"), py::arg("weights_path"), py::arg("self_ensemble") = false,
      "Upscale an [H,W,3] image in [0,1] with a stored model.");

  m.def(
      "param_count",
      [](const std::string& preset, int scale) {
        return spmm::param_count(spmm::model_init<real>(preset_cfg(preset, scale), 0));
      },
      py::arg("preset"), py::arg("scale"));

  m.def(
      "gmacs",
      [](const std::string& preset, int scale, int64_t h_out, int64_t w_out) {
        return spmm::gmacs(preset_cfg(preset, scale), h_out, w_out);
      },
      py::arg("preset"), py::arg("scale"), py::arg("h_out"), py::arg("w_out"));

  m.def(
      "train_toy_losses",
      [](const Arr& hr, int scale, int steps, uint64_t seed, double lr) {
        const Tensor<real> hr_t = img_to_chw(hr);
        const Tensor<real> lr_t =
            spmm::bicubic_resize(hr_t, hr_t.dim(2) / scale, hr_t.dim(3) / scale);
        spmm::Model<real> model =
            spmm::model_init<real>(preset_cfg("t-mini", scale), seed);
        return spmm::train_toy(model, lr_t, hr_t, steps, lr, seed).loss;
      },
      py::arg("hr"), py::arg("scale") = 2, py::arg("steps") = 5, py::arg("seed") = 1,
      py::arg("lr") = 1e-3,
      "Overfit the smallest model on one image; returns the per-step losses.");

  m.def(
      "gradcheck",
      [](const std::string& filter) {
        py::list out;
        for (const spmm::GradCheckCase& c : spmm::gradcheck_suite(filter))
          out.append(py::make_tuple(c.name, c.pass, c.report.max_rel_err));
        return out;
      },
      py::arg("filter") = "",
      "Finite-difference gradient checks; returns (name, passed, max_rel_err) triples.");
}
