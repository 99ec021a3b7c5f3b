#pragma once
// Differentiable superpixel decomposition (soft k-means on a fixed grid).
//
// Pixels live on an h x w map; superpixels are the cells of a gh x gw grid
// (cells must tile the map exactly).  In similarity space each pixel only
// sees the superpixels of its own cell and the 8 neighbouring cells, so the
// association matrix is stored as an [N,9] slot array plus an index table;
// out-of-border neighbours are absent (index -1), never zero-padded slots.
// Slot order is (dy,dx) row-major, which makes the candidate superpixel index
// strictly increasing across present slots of a row — the first strict
// maximum therefore breaks argmax ties toward the lowest superpixel index.
//
// Per iteration: sim(i,q) = exp(-||x_i - s_j||^2) for candidate j, then
// s_j = sum_i sim(i,j) x_i / z_j with z_j clamped at 1e-12 and an all-zero
// column keeping its previous value.  After T alternations the returned
// similarity is the one that produced the final superpixels.

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

#include "spmm/autodiff.hpp"
#include "spmm/rng.hpp"
#include "spmm/tensor.hpp"

namespace spmm {

inline constexpr int kSlots = 9;
inline constexpr double kAssocFloor = 1e-12;  // z clamp and log-argument floor

struct SuperpixelGrid {
  int64_t h = 0, w = 0;    // pixel-map extents
  int64_t gh = 0, gw = 0;  // grid cells per axis
  int64_t cell_h() const { return h / gh; }
  int64_t cell_w() const { return w / gw; }
  int64_t pixels() const { return h * w; }
  int64_t count() const { return gh * gw; }
  // Validates divisibility; gh*gw is the superpixel count M.
  static SuperpixelGrid make(int64_t h, int64_t w, int64_t gh, int64_t gw);
  // Square grid of M cells (M must be a perfect square).
  static SuperpixelGrid make_square(int64_t h, int64_t w, int64_t m);
};

// cand[i*9 + q] = superpixel index for slot q of pixel i, or -1 if absent.
struct CandidateTable {
  int64_t n = 0, m = 0;
  std::vector<int32_t> cand;
};
CandidateTable build_candidates(const SuperpixelGrid& grid);
// The differentiable ops keep the table alive inside their backward closures,
// hence the shared handle.
using TablePtr = std::shared_ptr<const CandidateTable>;
TablePtr build_candidates_shared(const SuperpixelGrid& grid);

// ----- tensor-level ----------------------------------------------------------

// Mean of each grid cell: x [N,C] (pixel-major, row-major pixel order) -> [M,C].
template <typename T>
Tensor<T> init_superpixels(const Tensor<T>& x, const SuperpixelGrid& grid);

// sim [N,9]; absent slots hold 0 (by construction, never read).
template <typename T>
Tensor<T> similarity_step(const Tensor<T>& x, const Tensor<T>& s, const CandidateTable& table);

template <typename T>
Tensor<T> update_superpixels(const Tensor<T>& x, const Tensor<T>& sim, const Tensor<T>& s_prev,
                             const CandidateTable& table);

// Row-normalised association (rows sum to 1 over present slots; the row sum
// is clamped at the floor before dividing).
template <typename T>
Tensor<T> row_normalize(const Tensor<T>& sim, const CandidateTable& table);

// Per-pixel argmax over present slots; ties break to the lowest superpixel index.
template <typename T>
std::vector<int32_t> hard_mask(const Tensor<T>& sim, const CandidateTable& table);

template <typename T>
struct SuperpixelSample {
  Tensor<T> features;   // s^T [M,C]
  Tensor<T> sim;        // final similarity [N,9]
  Tensor<T> assoc;      // row-normalised [N,9]
  std::vector<int32_t> mask;  // [N]
  CandidateTable table;
};

// init, then T alternations of similarity_step / update_superpixels.
template <typename T>
SuperpixelSample<T> sample(const Tensor<T>& x, const SuperpixelGrid& grid, int iters);

// weights [N,9] (soft or one-hot rows) x tokens [M,C] -> [N,C].
template <typename T>
Tensor<T> scatter(const Tensor<T>& weights, const Tensor<T>& tokens, const CandidateTable& table);

// One-hot rows from a hard assignment.
template <typename T>
Tensor<T> one_hot_rows(const std::vector<int32_t>& mask, const CandidateTable& table);

struct GumbelMode {
  bool noise = false;  // add Gumbel(0,1) per present slot (train)
  bool hard = true;    // one-hot forward (straight-through); false = soft relaxation
  double tau = 1.0;    // softmax temperature
};

// Row-wise Gumbel-softmax over log(assoc + floor); absent slots are excluded
// structurally (logit -1e30 after noise), so the selection is always one of
// the pixel's candidates.  In infer mode (noise off, hard on) this is a plain
// argmax.  Noise is drawn row-major over pixels, slot order, present slots
// only.
template <typename T>
Tensor<T> gumbel_one_hot(const Tensor<T>& assoc, const CandidateTable& table,
                         const GumbelMode& mode, Rng* rng);

// ----- differentiable --------------------------------------------------------

template <typename T>
Var<T> v_init_superpixels(Var<T> x, const SuperpixelGrid& grid);
template <typename T>
Var<T> v_similarity(Var<T> x, Var<T> s, const TablePtr& table);
template <typename T>
Var<T> v_update(Var<T> x, Var<T> sim, Var<T> s_prev, const TablePtr& table);
template <typename T>
Var<T> v_row_normalize(Var<T> sim, const TablePtr& table);
template <typename T>
Var<T> v_scatter(Var<T> weights, Var<T> tokens, const TablePtr& table);
// Gumbel mask with gradients through the softened path (straight-through when
// mode.hard, the relaxation itself otherwise).
template <typename T>
Var<T> v_gumbel_mask(Var<T> assoc, const TablePtr& table, const GumbelMode& mode, Rng* rng);

template <typename T>
struct SuperpixelSampleV {
  Var<T> features;
  Var<T> sim;
  Var<T> assoc;
  std::vector<int32_t> mask;
  TablePtr table;
};

template <typename T>
SuperpixelSampleV<T> v_sample(Var<T> x, const SuperpixelGrid& grid, int iters);

}  // namespace spmm
