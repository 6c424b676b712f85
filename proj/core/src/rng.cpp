#include "latentaug/rng.hpp"

#include <cmath>
#include <numbers>

#include "latentaug/error.hpp"

namespace latentaug {
namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
  check(lo <= hi, "uniform_int: empty range [", lo, ", ", hi, "]");
  uint64_t range = static_cast<uint64_t>(hi - lo) + 1;
  if (range == 0) return static_cast<int64_t>(next_u64());  // full 64-bit range
  return lo + static_cast<int64_t>(next_u64() % range);
}

double Rng::normal() {
  // u1 in (0, 1] so the log is finite.
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Rng Rng::fork(std::string_view label) {
  return Rng(splitmix64(next_u64() ^ fnv1a(label)));
}

uint64_t derive_seed(uint64_t master, std::string_view name) {
  return splitmix64(master ^ fnv1a(name));
}

}  // namespace latentaug
