#pragma once

// Merge strategies over a shared base checkpoint: linear averaging, TIES
// (trim / elect sign / disjoint mean), DARE (random drop and rescale) and
// DELLA (magnitude-ranked drop and rescale followed by the TIES combine).
//
// Arithmetic contract, relied on by the brute-force oracles in tests:
//   * sparsified values are F32: v / k computed in double, rounded once;
//   * sign votes and agreeing means accumulate lambda * v in double over
//     tasks in list order, and the mean is rounded to F32 once;
//   * outputs are F32(double(base) + scale * double(merged)).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mergeforge/error.hpp"
#include "mergeforge/numeric.hpp"
#include "mergeforge/parallel.hpp"
#include "mergeforge/taskvector.hpp"
#include "mergeforge/tensor.hpp"

namespace mergeforge {

enum class MergeMethod { Linear, Ties, DareLinear, DareTies, Della };

constexpr std::string_view to_string(MergeMethod m) noexcept {
  switch (m) {
    case MergeMethod::Linear: return "LINEAR";
    case MergeMethod::Ties: return "TIES";
    case MergeMethod::DareLinear: return "DARE_LINEAR";
    case MergeMethod::DareTies: return "DARE_TIES";
    case MergeMethod::Della: return "DELLA";
  }
  return "?";
}

/// Accepts the canonical names plus "DARE", which selects the ties variant.
inline MergeMethod parse_merge_method(std::string_view name) {
  if (name == "LINEAR") return MergeMethod::Linear;
  if (name == "TIES") return MergeMethod::Ties;
  if (name == "DARE_LINEAR") return MergeMethod::DareLinear;
  if (name == "DARE_TIES" || name == "DARE") return MergeMethod::DareTies;
  if (name == "DELLA") return MergeMethod::Della;
  fail(ErrorKind::InvalidRecipe, "unknown merge method '" + std::string(name) + "'");
}

enum class DareVariant { Linear, Ties };

struct TaskWeight {
  std::string id;
  double weight = 1.0;
};

struct MergeRecipe {
  MergeMethod method = MergeMethod::Linear;
  std::vector<TaskWeight> tasks;
  double density = 1.0;
  double spread = 0.0;
  std::uint64_t seed = 0;
  bool normalize_weights = false;
  double scale = 1.0;
};

/// A task vector after trimming or random dropping, with the parameters
/// that produced its mask.
struct SparsifiedDelta {
  TaskVector delta;
  MergeMethod method = MergeMethod::Ties;
  double density = 1.0;
  double spread = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t task_ordinal = 0;
};

/// Per-element elected sign (+1 or -1), keyed like the inputs.
using SignMap = std::map<std::string, std::vector<std::int8_t>, std::less<>>;

// ---------------------------------------------------------------------------
// Validation

inline void check_density(double d) {
  if (!(d > 0.0 && d <= 1.0)) {
    fail(ErrorKind::InvalidDensity, "density must lie in (0, 1], got " + std::to_string(d));
  }
}

inline void check_spread(double d, double eps) {
  if (!(eps >= 0.0) || !std::isfinite(eps)) {
    fail(ErrorKind::InvalidSpread, "spread must be finite and >= 0, got " + std::to_string(eps));
  }
  if (!(d - eps / 2.0 > 0.0)) {
    fail(ErrorKind::InvalidSpread, "density - spread/2 must stay positive (density " +
                                       std::to_string(d) + ", spread " + std::to_string(eps) + ")");
  }
}

inline void check_weights(const std::vector<double>& weights, bool normalize) {
  if (weights.empty()) fail(ErrorKind::InvalidRecipe, "at least one task is required");
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      fail(ErrorKind::InvalidWeight, "task weights must be finite and >= 0, got " + std::to_string(w));
    }
  }
  if (normalize && !(std::accumulate(weights.begin(), weights.end(), 0.0) > 0.0)) {
    fail(ErrorKind::ZeroWeightSum, "weights sum to zero and cannot be normalized");
  }
}

inline std::vector<double> effective_weights(std::vector<double> weights, bool normalize) {
  check_weights(weights, normalize);
  if (normalize) {
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    for (double& w : weights) w /= total;
  }
  return weights;
}

// ---------------------------------------------------------------------------
// Linear

/// out = sum_i w_i * model_i, with weights normalized to sum 1 on request.
inline TensorMap merge_linear(const std::vector<std::pair<const TensorMap*, double>>& models,
                              bool normalize) {
  std::vector<double> raw;
  for (const auto& [_, w] : models) raw.push_back(w);
  const std::vector<double> w = effective_weights(std::move(raw), normalize);
  for (std::size_t i = 1; i < models.size(); ++i) {
    require_same_layout(*models[0].first, *models[i].first, "model 0", "model " + std::to_string(i));
  }
  return detail::map_tensors(*models[0].first, [&](const std::string& name, const Tensor& first) {
    std::vector<const float*> src;
    for (const auto& [m, _] : models) src.push_back(m->at(name).data.data());
    std::vector<float> out(first.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      double acc = 0.0;
      for (std::size_t t = 0; t < src.size(); ++t) acc += w[t] * src[t][i];
      out[i] = static_cast<float>(acc);
    }
    return Tensor(first.shape, std::move(out));
  });
}

// ---------------------------------------------------------------------------
// Sparsification

namespace detail {
// Ranking key; NaN ranks below every number so comparisons stay a strict
// weak order.
inline float magnitude(float v) noexcept { return std::isnan(v) ? -1.0f : std::fabs(v); }
}  // namespace detail

/// Keeps the ceil(d*n) largest-magnitude elements of every tensor; ties at
/// the cutoff go to the smaller flat index. Survivors are not rescaled.
inline SparsifiedDelta trim_topk(const TaskVector& delta, double d) {
  check_density(d);
  SparsifiedDelta out;
  out.method = MergeMethod::Ties;
  out.density = d;
  out.delta.base_id = delta.base_id;
  out.delta.sft_id = delta.sft_id;
  out.delta.deltas = detail::map_tensors(delta.deltas, [&](const std::string&, const Tensor& t) {
    const std::size_t n = t.size();
    const auto keep = std::min<std::size_t>(n, static_cast<std::size_t>(std::ceil(d * static_cast<double>(n))));
    if (keep == n) return t;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                     [&](std::size_t a, std::size_t b) {
                       const float ma = detail::magnitude(t.data[a]), mb = detail::magnitude(t.data[b]);
                       return ma != mb ? ma > mb : a < b;
                     });
    std::vector<float> values(n, 0.0f);
    for (std::size_t i = 0; i < keep; ++i) values[order[i]] = t.data[order[i]];
    return Tensor(t.shape, std::move(values));
  });
  return out;
}

/// Bernoulli keep test against the per-element stream: keep iff the exact
/// rational draw / 2^64 is below k.
inline bool keep_draw(std::uint64_t draw, double k) noexcept {
  if (!(k > 0.0)) return false;
  if (k >= 1.0) return true;
  const double threshold = std::ceil(std::ldexp(k, 64));
  if (threshold >= 0x1p64) return true;
  return draw < static_cast<std::uint64_t>(threshold);
}

namespace detail {

// Applies a keep probability per element from the tensor's keyed stream and
// rescales survivors by 1/k. `keep_prob(t, probs)` fills one probability per
// element.
template <typename KeepProb>
TensorMap stochastic_drop(const TaskVector& delta, std::uint64_t seed, std::uint64_t task_ordinal,
                          KeepProb&& keep_prob) {
  return map_tensors(delta.deltas, [&](const std::string& name, const Tensor& t) {
    std::vector<double> probs(t.size());
    keep_prob(t, probs);
    SplitMix64 rng(stream_seed(seed, name, task_ordinal));
    std::vector<float> values(t.size(), 0.0f);
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (keep_draw(rng.next(), probs[i])) {
        values[i] = static_cast<float>(static_cast<double>(t.data[i]) / probs[i]);
      }
    }
    return Tensor(t.shape, std::move(values));
  });
}

}  // namespace detail

/// DARE: keep each element with probability d and rescale survivors by 1/d.
inline SparsifiedDelta dare_sparsify(const TaskVector& delta, double d, std::uint64_t seed,
                                     std::uint64_t task_ordinal = 0) {
  check_density(d);
  SparsifiedDelta out;
  out.method = MergeMethod::DareTies;
  out.density = d;
  out.seed = seed;
  out.task_ordinal = task_ordinal;
  out.delta.base_id = delta.base_id;
  out.delta.sft_id = delta.sft_id;
  out.delta.deltas = detail::stochastic_drop(delta, seed, task_ordinal, [&](const Tensor&, std::vector<double>& k) {
    std::fill(k.begin(), k.end(), d);
  });
  return out;
}

/// Keep probabilities of one last-axis row: rank by ascending magnitude
/// (ties to the smaller index) and spread linearly over [d - eps/2, d + eps/2],
/// clamped to [0, 1].
inline void magnitude_keep_probs(std::span<const float> row, double d, double eps, std::span<double> out) {
  const std::size_t n = row.size();
  if (n == 1) {
    out[0] = d;
    return;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return detail::magnitude(row[a]) < detail::magnitude(row[b]);
  });
  for (std::size_t r = 0; r < n; ++r) {
    const double k = d - eps / 2.0 + eps * static_cast<double>(r) / static_cast<double>(n - 1);
    out[order[r]] = std::clamp(k, 0.0, 1.0);
  }
}

/// DELLA's magnitude-adaptive drop: larger elements are kept more often;
/// survivors are rescaled by their own keep probability.
inline SparsifiedDelta magprune(const TaskVector& delta, double d, double eps, std::uint64_t seed,
                                std::uint64_t task_ordinal = 0) {
  check_density(d);
  check_spread(d, eps);
  SparsifiedDelta out;
  out.method = MergeMethod::Della;
  out.density = d;
  out.spread = eps;
  out.seed = seed;
  out.task_ordinal = task_ordinal;
  out.delta.base_id = delta.base_id;
  out.delta.sft_id = delta.sft_id;
  out.delta.deltas = detail::stochastic_drop(delta, seed, task_ordinal, [&](const Tensor& t, std::vector<double>& k) {
    const std::size_t len = t.row_length();
    if (len == 0) return;
    for (std::size_t start = 0; start < t.size(); start += len) {
      magnitude_keep_probs(std::span<const float>(t.data).subspan(start, len), d, eps,
                           std::span<double>(k).subspan(start, len));
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Sign election and the agreeing mean

namespace detail {

inline int sign_of(float v) noexcept { return v > 0.0f ? 1 : (v < 0.0f ? -1 : 0); }

inline void require_aligned(const std::vector<std::pair<const TensorMap*, double>>& parts) {
  if (parts.empty()) fail(ErrorKind::InvalidRecipe, "at least one task is required");
  for (std::size_t t = 1; t < parts.size(); ++t) {
    require_same_layout(*parts[0].first, *parts[t].first, "task 0", "task " + std::to_string(t));
  }
}

inline std::int8_t elect(const std::vector<const float*>& src, const std::vector<double>& w, std::size_t i) {
  double vote = 0.0;
  for (std::size_t t = 0; t < src.size(); ++t) vote += w[t] * src[t][i];
  return vote < 0.0 ? std::int8_t{-1} : std::int8_t{1};
}

/// base + scale * (disjoint weighted mean of the agreeing sparsified deltas).
inline TensorMap combine_agreeing(const TensorMap& base,
                                  const std::vector<std::pair<const TensorMap*, double>>& parts,
                                  double scale) {
  require_aligned(parts);
  require_same_layout(base, *parts[0].first, "base", "task 0");
  std::vector<double> w;
  for (const auto& [_, lambda] : parts) w.push_back(lambda);
  return map_tensors(base, [&](const std::string& name, const Tensor& b) {
    std::vector<const float*> src;
    for (const auto& [m, _] : parts) src.push_back(m->at(name).data.data());
    std::vector<float> out(b.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      const int s = elect(src, w, i);
      double num = 0.0, den = 0.0;
      for (std::size_t t = 0; t < src.size(); ++t) {
        if (sign_of(src[t][i]) == s) {
          num += w[t] * src[t][i];
          den += w[t];
        }
      }
      const float merged = den != 0.0 ? static_cast<float>(num / den) : 0.0f;
      out[i] = static_cast<float>(static_cast<double>(b.data[i]) + scale * static_cast<double>(merged));
    }
    return Tensor(b.shape, std::move(out));
  });
}

inline std::vector<std::pair<const TensorMap*, double>> as_parts(
    const std::vector<SparsifiedDelta>& sparse, const std::vector<double>& w) {
  std::vector<std::pair<const TensorMap*, double>> parts;
  for (std::size_t t = 0; t < sparse.size(); ++t) parts.emplace_back(&sparse[t].delta.deltas, w[t]);
  return parts;
}

inline std::vector<double> weights_of(const std::vector<std::pair<const TaskVector*, double>>& deltas,
                                      bool normalize) {
  std::vector<double> raw;
  for (const auto& [_, w] : deltas) raw.push_back(w);
  return effective_weights(std::move(raw), normalize);
}

}  // namespace detail

/// s_j = sign(sum_t lambda_t * v_tj), with an exactly zero sum electing +1.
inline SignMap elect_sign(const std::vector<std::pair<const SparsifiedDelta*, double>>& sparsified) {
  std::vector<std::pair<const TensorMap*, double>> parts;
  for (const auto& [s, w] : sparsified) parts.emplace_back(&s->delta.deltas, w);
  detail::require_aligned(parts);
  std::vector<double> w;
  for (const auto& [_, lambda] : parts) w.push_back(lambda);
  SignMap signs;
  for (const auto& [name, t] : *parts[0].first) {
    std::vector<const float*> src;
    for (const auto& [m, _] : parts) src.push_back(m->at(name).data.data());
    std::vector<std::int8_t> s(t.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = detail::elect(src, w, i);
    signs.emplace(name, std::move(s));
  }
  return signs;
}

/// TIES: trim every delta to density d, elect signs, average the agreeing
/// values weighted by lambda, and add scale times the result to base.
inline TensorMap merge_ties(const TensorMap& base,
                            const std::vector<std::pair<const TaskVector*, double>>& deltas, double d,
                            double scale = 1.0, bool normalize = false) {
  check_density(d);
  const std::vector<double> w = detail::weights_of(deltas, normalize);
  std::vector<SparsifiedDelta> trimmed;
  for (const auto& [tv, _] : deltas) trimmed.push_back(trim_topk(*tv, d));
  return detail::combine_agreeing(base, detail::as_parts(trimmed, w), scale);
}

/// DARE followed by task arithmetic (linear) or the TIES combine (ties).
/// Task t draws from streams keyed with ordinal t.
inline TensorMap merge_dare(const TensorMap& base,
                            const std::vector<std::pair<const TaskVector*, double>>& deltas, double d,
                            std::uint64_t seed, DareVariant variant = DareVariant::Ties,
                            double scale = 1.0, bool normalize = false) {
  check_density(d);
  const std::vector<double> w = detail::weights_of(deltas, normalize);
  std::vector<SparsifiedDelta> sparse;
  for (std::size_t t = 0; t < deltas.size(); ++t) {
    sparse.push_back(dare_sparsify(*deltas[t].first, d, seed, t));
  }
  if (variant == DareVariant::Ties) return detail::combine_agreeing(base, detail::as_parts(sparse, w), scale);
  std::vector<std::pair<const TaskVector*, double>> scaled;
  for (std::size_t t = 0; t < sparse.size(); ++t) scaled.emplace_back(&sparse[t].delta, scale * w[t]);
  return apply_delta(base, scaled);
}

/// DELLA: magnitude-ranked drop per task, then the TIES combine.
inline TensorMap merge_della(const TensorMap& base,
                             const std::vector<std::pair<const TaskVector*, double>>& deltas, double d,
                             double eps, std::uint64_t seed, double scale = 1.0, bool normalize = false) {
  check_density(d);
  check_spread(d, eps);
  const std::vector<double> w = detail::weights_of(deltas, normalize);
  std::vector<SparsifiedDelta> sparse;
  for (std::size_t t = 0; t < deltas.size(); ++t) {
    sparse.push_back(magprune(*deltas[t].first, d, eps, seed, t));
  }
  return detail::combine_agreeing(base, detail::as_parts(sparse, w), scale);
}

namespace detail {
inline void check_task_count(const MergeRecipe& recipe, std::size_t given) {
  if (recipe.tasks.empty()) fail(ErrorKind::InvalidRecipe, "recipe lists no tasks");
  if (given != recipe.tasks.size()) {
    fail(ErrorKind::InvalidRecipe, "recipe lists " + std::to_string(recipe.tasks.size()) +
                                       " tasks but " + std::to_string(given) + " inputs were given");
  }
}
}  // namespace detail

/// Runs a non-LINEAR `recipe` on task vectors (one per recipe task, in order).
inline TensorMap merge_task_vectors(const MergeRecipe& recipe, const TensorMap& base,
                                    const std::vector<const TaskVector*>& vectors) {
  detail::check_task_count(recipe, vectors.size());
  std::vector<std::pair<const TaskVector*, double>> deltas;
  for (std::size_t t = 0; t < vectors.size(); ++t) deltas.emplace_back(vectors[t], recipe.tasks[t].weight);
  switch (recipe.method) {
    case MergeMethod::Ties:
      return merge_ties(base, deltas, recipe.density, recipe.scale, recipe.normalize_weights);
    case MergeMethod::DareLinear:
      return merge_dare(base, deltas, recipe.density, recipe.seed, DareVariant::Linear, recipe.scale,
                        recipe.normalize_weights);
    case MergeMethod::DareTies:
      return merge_dare(base, deltas, recipe.density, recipe.seed, DareVariant::Ties, recipe.scale,
                        recipe.normalize_weights);
    case MergeMethod::Della:
      return merge_della(base, deltas, recipe.density, recipe.spread, recipe.seed, recipe.scale,
                         recipe.normalize_weights);
    case MergeMethod::Linear:
      break;
  }
  fail(ErrorKind::InvalidRecipe, "LINEAR merges checkpoints, not task vectors");
}

/// Runs `recipe` against task checkpoints (one per recipe task, in order).
/// LINEAR averages the checkpoints themselves; every other method works on
/// their deltas from `base`.
inline TensorMap merge(const MergeRecipe& recipe, const TensorMap& base,
                       const std::vector<const TensorMap*>& task_models) {
  detail::check_task_count(recipe, task_models.size());
  if (recipe.method == MergeMethod::Linear) {
    std::vector<std::pair<const TensorMap*, double>> models;
    for (std::size_t t = 0; t < task_models.size(); ++t) models.emplace_back(task_models[t], recipe.tasks[t].weight);
    return merge_linear(models, recipe.normalize_weights);
  }
  std::vector<TaskVector> vectors;
  for (std::size_t t = 0; t < task_models.size(); ++t) {
    vectors.push_back(compute_delta(base, *task_models[t], "base", recipe.tasks[t].id));
  }
  std::vector<const TaskVector*> ptrs;
  for (const auto& v : vectors) ptrs.push_back(&v);
  return merge_task_vectors(recipe, base, ptrs);
}

}  // namespace mergeforge
