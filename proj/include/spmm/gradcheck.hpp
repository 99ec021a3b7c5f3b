#pragma once
// Named finite-difference gradient certification suite, shared by the
// `gradcheck` CLI subcommand and the acceptance harness.
//
// Every case runs in 64-bit precision with central differences (eps 1e-5)
// against reverse-mode gradients and passes when the worst relative error
// (denominator max(1, |analytic|, |numeric|)) stays within 1e-4.  Routed
// paths use the differentiable soft relaxation with noise re-created from a
// fixed seed on every evaluation, so the checked function is deterministic;
// straight-through hard routing is intentionally not finite-difference
// checkable (its forward is piecewise constant) and is certified by its own
// algebraic tests instead.

#include <string>
#include <vector>

#include "spmm/autodiff.hpp"

namespace spmm {

struct GradCheckCase {
  std::string name;
  GradCheckReport report;
  bool pass = false;
};

inline constexpr double kGradCheckTol = 1e-4;
inline constexpr double kGradCheckEps = 1e-5;

// Runs every case whose name contains `filter` (empty = all).  Cases cover
// each differentiable primitive, the composite blocks (superpixel state
// block, routed mixture, local attention, gated feed-forward), and the full
// toy-sized model with the training loss, probing a seeded subset of
// coordinates of every parameter.
std::vector<GradCheckCase> gradcheck_suite(const std::string& filter = "");

}  // namespace spmm
