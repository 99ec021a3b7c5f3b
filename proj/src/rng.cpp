#include "spmm/rng.hpp"

#include <cmath>

namespace spmm {
namespace {

inline uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

inline uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ull;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

constexpr double kTwoPi = 6.283185307179586476925286766559;

}  // namespace

Rng::Rng(uint64_t seed) {
  uint64_t x = seed;
  for (auto& w : s_) w = splitmix64(x);
}

uint64_t Rng::next_u64() {
  const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
  const uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() {
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

uint64_t Rng::uniform_int(uint64_t n) {
  // Rejection from the top of the range to avoid modulo bias.
  const uint64_t limit = n * ((~0ull) / n);
  uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

double Rng::truncated_normal(double std_dev) {
  double z;
  do {
    z = normal();
  } while (std::abs(z) > 2.0);
  return z * std_dev;
}

double Rng::gumbel() { return -std::log(-std::log(uniform())); }

Rng Rng::child(uint64_t stream) const {
  uint64_t h = s_[0];
  h ^= rotl(s_[1], 13) ^ rotl(s_[2], 29) ^ rotl(s_[3], 41);
  h ^= 0xa0761d6478bd642full * (stream + 1);
  uint64_t x = h;
  return Rng(splitmix64(x));
}

}  // namespace spmm
