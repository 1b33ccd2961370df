#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include <torch/torch.h>

namespace apdraw {

using Rng = std::mt19937_64;

/// Uniform double in [0, 1) from the 53 high bits; mt19937_64 output is fixed
/// by the standard, so this is bit-identical across platforms and runs.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline uint64_t mix_seed(uint64_t seed, uint64_t salt) {
  uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Portable seeded tensor with entries uniform in [lo, hi).
inline torch::Tensor seeded_uniform(at::IntArrayRef shape, uint64_t seed, double lo, double hi) {
  Rng rng(seed);
  int64_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> data(static_cast<size_t>(n));
  for (auto& x : data) x = lo + (hi - lo) * uniform01(rng);
  return torch::from_blob(data.data(), {n}, torch::kFloat64).clone().view(shape);
}

/// Uniform integer in [0, n) without modulo bias.
inline uint64_t uniform_index(Rng& rng, uint64_t n) {
  std::uniform_int_distribution<uint64_t> dist(0, n - 1);
  return dist(rng);
}

}  // namespace apdraw
