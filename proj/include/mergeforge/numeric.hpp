#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

namespace mergeforge {

/// SplitMix64 generator. Bit-exact with the reference formulation: the
/// state advances by the golden-ratio increment before each output.
class SplitMix64 {
 public:
  explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  constexpr std::uint64_t next() noexcept {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform draw in [0, 1): the raw 64-bit output divided by 2^64.
  double next_unit() noexcept { return static_cast<double>(next()) * 0x1p-64; }

 private:
  std::uint64_t state_;
};

/// 64-bit FNV-1a over the bytes of `text`.
constexpr std::uint64_t fnv1a64(std::string_view text) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Seed of the per-tensor stream used by every stochastic merge step.
constexpr std::uint64_t stream_seed(std::uint64_t seed, std::string_view tensor_name,
                                    std::uint64_t task_ordinal) noexcept {
  return seed ^ fnv1a64(tensor_name) ^ task_ordinal;
}

namespace detail {
constexpr std::size_t kPairwiseBlock = 8;

template <typename Term>
double pairwise(std::size_t begin, std::size_t end, const Term& term) {
  const std::size_t n = end - begin;
  if (n <= kPairwiseBlock) {
    double s = 0.0;
    for (std::size_t i = begin; i < end; ++i) s += term(i);
    return s;
  }
  const std::size_t mid = begin + n / 2;
  return pairwise(begin, mid, term) + pairwise(mid, end, term);
}
}  // namespace detail

/// Pairwise (cascade) sum of term(i) for i in [0, n). The reduction tree is
/// fixed by the element index, so the result is independent of how callers
/// schedule work.
template <typename Term>
double pairwise_sum(std::size_t n, const Term& term) {
  return detail::pairwise(0, n, term);
}

inline double pairwise_sum(std::span<const float> xs) {
  return pairwise_sum(xs.size(), [&](std::size_t i) { return static_cast<double>(xs[i]); });
}

inline double sum_of_squares(std::span<const float> xs) {
  return pairwise_sum(xs.size(), [&](std::size_t i) {
    const double v = xs[i];
    return v * v;
  });
}

}  // namespace mergeforge
