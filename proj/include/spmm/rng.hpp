#pragma once
// Deterministic random number generation.
//
// xoshiro256++ with 256 bits of state.  A 64-bit seed is expanded into the
// four state words with SplitMix64 (the reference seeding recipe), so the
// same seed yields the same stream on every platform.  Child streams are
// derived from the parent state, not from a shared global, which keeps
// initialisation order deterministic no matter how modules are composed.

#include <cstdint>

namespace spmm {

class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();

  // Uniform on the open interval (0, 1): (x >> 11) scaled by 2^-53 with a
  // half-ulp offset, so log(u) and log(-log(u)) are always finite.
  double uniform();
  // Uniform on [lo, hi).
  double uniform(double lo, double hi);
  // Uniform integer in [0, n).
  uint64_t uniform_int(uint64_t n);
  // Standard normal via Box-Muller (cosine branch only; one value per two
  // uniforms, which keeps the stream position a pure function of call count).
  double normal();
  // Standard normal rejected until |z| <= 2, scaled by std.
  double truncated_normal(double std_dev);
  // Gumbel(0, 1): -log(-log(u)).
  double gumbel();

  // Deterministic child stream: a SplitMix64 hash of (parent state, stream id)
  // seeds the child.  Drawing from the child does not advance the parent.
  Rng child(uint64_t stream) const;

 private:
  uint64_t s_[4];
};

}  // namespace spmm
