#pragma once

// Literal-definition reference implementations used as test oracles. They
// deliberately share no code with the library: ranks are computed by
// counting, keep tests by exact integer arithmetic, sums sequentially.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace oracle {

struct Rng {
  std::uint64_t s;
  std::uint64_t operator()() {
    s += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = s;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
};

inline std::uint64_t fnv(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

/// draw / 2^64 < k, decided with integers: k = M * 2^(E - 53).
inline bool keep(std::uint64_t draw, double k) {
  if (k <= 0.0) return false;
  if (k >= 1.0) return true;
  int e = 0;
  const double frac = std::frexp(k, &e);  // k = frac * 2^e, frac in [0.5, 1)
  const auto mant = static_cast<unsigned __int128>(std::ldexp(frac, 53));
  const int shift = e + 11;  // threshold = mant * 2^(e - 53 + 64)
  const auto d = static_cast<unsigned __int128>(draw);
  if (shift >= 0) return d < (mant << shift);
  // draw < mant / 2^-shift  <=>  draw * 2^-shift < mant
  if (-shift >= 64) return draw == 0 ? mant > 0 : false;
  return (d << (-shift)) < mant;
}

inline int sgn(float v) { return v > 0 ? 1 : (v < 0 ? -1 : 0); }

/// Top ceil(d n) by magnitude, ties to the smaller index, by counting how
/// many elements outrank each one.
inline std::vector<float> trim(const std::vector<float>& v, double d) {
  const std::size_t n = v.size();
  std::size_t k = static_cast<std::size_t>(std::ceil(d * static_cast<double>(n)));
  if (k > n) k = n;
  std::vector<float> out(n, 0.0f);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t above = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (std::fabs(v[j]) > std::fabs(v[i]) || (std::fabs(v[j]) == std::fabs(v[i]) && j < i)) ++above;
    }
    if (above < k) out[i] = v[i];
  }
  return out;
}

/// Ascending-magnitude rank within a row, ties by index.
inline std::size_t rank_in_row(const std::vector<float>& row, std::size_t i) {
  std::size_t r = 0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (std::fabs(row[j]) < std::fabs(row[i]) || (std::fabs(row[j]) == std::fabs(row[i]) && j < i)) ++r;
  }
  return r;
}

inline std::vector<float> della_prune(const std::vector<float>& v, std::size_t row_len, double d, double eps,
                                      std::uint64_t seed, const std::string& name, std::uint64_t task) {
  std::vector<double> k(v.size());
  for (std::size_t start = 0; start < v.size(); start += row_len) {
    std::vector<float> row(v.begin() + start, v.begin() + start + row_len);
    const std::size_t n = row.size();
    for (std::size_t i = 0; i < n; ++i) {
      double p = n == 1 ? d : d - eps / 2.0 + eps * static_cast<double>(rank_in_row(row, i)) / static_cast<double>(n - 1);
      if (p < 0.0) p = 0.0;
      if (p > 1.0) p = 1.0;
      k[start + i] = p;
    }
  }
  Rng rng{seed ^ fnv(name) ^ task};
  std::vector<float> out(v.size(), 0.0f);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (keep(rng(), k[i])) out[i] = static_cast<float>(static_cast<double>(v[i]) / k[i]);
  }
  return out;
}

inline std::vector<float> dare_prune(const std::vector<float>& v, double d, std::uint64_t seed,
                                     const std::string& name, std::uint64_t task) {
  Rng rng{seed ^ fnv(name) ^ task};
  std::vector<float> out(v.size(), 0.0f);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (keep(rng(), d)) out[i] = static_cast<float>(static_cast<double>(v[i]) / d);
  }
  return out;
}

/// Element-wise elect + disjoint mean over already sparsified deltas.
inline std::vector<float> combine(const std::vector<float>& base, const std::vector<std::vector<float>>& sparse,
                                  const std::vector<double>& lambda, double scale) {
  std::vector<float> out(base.size());
  for (std::size_t j = 0; j < base.size(); ++j) {
    double vote = 0.0;
    for (std::size_t t = 0; t < sparse.size(); ++t) vote += lambda[t] * sparse[t][j];
    const int elected = vote < 0.0 ? -1 : 1;
    double num = 0.0, den = 0.0;
    for (std::size_t t = 0; t < sparse.size(); ++t) {
      if (sgn(sparse[t][j]) == elected) {
        num += lambda[t] * sparse[t][j];
        den += lambda[t];
      }
    }
    const float merged = den == 0.0 ? 0.0f : static_cast<float>(num / den);
    out[j] = static_cast<float>(static_cast<double>(base[j]) + scale * static_cast<double>(merged));
  }
  return out;
}

inline std::vector<float> ties(const std::vector<float>& base, const std::vector<std::vector<float>>& deltas,
                               const std::vector<double>& lambda, double d, double scale) {
  std::vector<std::vector<float>> trimmed;
  for (const auto& v : deltas) trimmed.push_back(trim(v, d));
  return combine(base, trimmed, lambda, scale);
}

inline std::vector<float> della(const std::vector<float>& base, const std::vector<std::vector<float>>& deltas,
                                const std::vector<double>& lambda, std::size_t row_len, double d, double eps,
                                std::uint64_t seed, const std::string& name, double scale) {
  std::vector<std::vector<float>> pruned;
  for (std::size_t t = 0; t < deltas.size(); ++t) {
    pruned.push_back(della_prune(deltas[t], row_len, d, eps, seed, name, t));
  }
  return combine(base, pruned, lambda, scale);
}

/// Sequential two-pass Pearson in long double.
inline double pearson(const std::vector<float>& a, const std::vector<float>& b, bool* defined = nullptr) {
  const std::size_t n = a.size();
  long double ma = 0, mb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  long double num = 0, sa = 0, sb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    num += (a[i] - ma) * (b[i] - mb);
    sa += (a[i] - ma) * (a[i] - ma);
    sb += (b[i] - mb) * (b[i] - mb);
  }
  if (defined) *defined = sa > 0 && sb > 0;
  if (sa == 0 || sb == 0) return 0.0;
  return static_cast<double>(num / std::sqrt(sa * sb));
}

inline double l2(const std::vector<float>& v) {
  long double s = 0;
  for (float x : v) s += static_cast<long double>(x) * x;
  return static_cast<double>(std::sqrt(s));
}

}  // namespace oracle
