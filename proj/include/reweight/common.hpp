#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace reweight {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline bool all_finite(const Vec& v) { return v.allFinite(); }
inline bool all_finite(const Mat& m) { return m.allFinite(); }

// splitmix64 finalizer; combines a base seed with a stream tag so every
// random consumer of a run gets an independent, reproducible sub-seed.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return mix_seed(mix_seed(a, b), c);
}

using Rng = std::mt19937_64;

// Inner training hit a non-finite loss; `step` is the 0-based step index.
struct DivergenceError : std::runtime_error {
  int step;
  explicit DivergenceError(int step_index)
      : std::runtime_error("non-finite loss at inner step " + std::to_string(step_index)),
        step(step_index) {}
};

// FNV-1a, used to stamp artifacts with a config hash.
inline std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace reweight
