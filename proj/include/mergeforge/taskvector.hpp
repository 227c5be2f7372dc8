#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <optional>
#include <regex>
#include <string>
#include <utility>
#include <vector>

#include "mergeforge/error.hpp"
#include "mergeforge/numeric.hpp"
#include "mergeforge/parallel.hpp"
#include "mergeforge/tensor.hpp"

namespace mergeforge {

/// Per-tensor weight delta w_sft - w_base. The deltas keep their tensor
/// shapes so row-wise operations and serialization work unchanged.
struct TaskVector {
  TensorMap deltas;
  std::string base_id;
  std::string sft_id;

  std::size_t size() const noexcept { return deltas.size(); }
};

inline constexpr std::string_view kKindKey = "mergeforge.kind";
inline constexpr std::string_view kTaskVectorKind = "task_vector";

/// Container form of a task vector: the deltas plus a marker in the header
/// metadata so readers can tell it apart from a plain checkpoint.
inline TensorMap to_container(const TaskVector& tv) {
  TensorMap out = tv.deltas;
  out.metadata()[std::string(kKindKey)] = std::string(kTaskVectorKind);
  out.metadata()["mergeforge.base"] = tv.base_id;
  out.metadata()["mergeforge.sft"] = tv.sft_id;
  return out;
}

inline bool is_task_vector(const TensorMap& map) {
  auto it = map.metadata().find(std::string(kKindKey));
  return it != map.metadata().end() && it->second == kTaskVectorKind;
}

inline TaskVector from_container(TensorMap map) {
  if (!is_task_vector(map)) {
    fail(ErrorKind::MalformedHeader, "container has no task_vector marker in __metadata__");
  }
  TaskVector tv;
  auto& meta = map.metadata();
  if (auto it = meta.find("mergeforge.base"); it != meta.end()) tv.base_id = it->second;
  if (auto it = meta.find("mergeforge.sft"); it != meta.end()) tv.sft_id = it->second;
  meta.clear();
  tv.deltas = std::move(map);
  return tv;
}

namespace detail {
// Runs fn(name, slot) over the tensors of `like` in parallel and assembles
// the results in canonical order.
template <typename Fn>
TensorMap map_tensors(const TensorMap& like, Fn&& fn) {
  std::vector<const std::pair<const std::string, Tensor>*> items;
  items.reserve(like.size());
  for (const auto& entry : like) items.push_back(&entry);
  std::vector<Tensor> results(items.size());
  parallel_for(items.size(), [&](std::size_t i) { results[i] = fn(items[i]->first, items[i]->second); });
  TensorMap out;
  for (std::size_t i = 0; i < items.size(); ++i) out.insert(items[i]->first, std::move(results[i]));
  return out;
}
}  // namespace detail

inline TaskVector compute_delta(const TensorMap& base, const TensorMap& sft,
                                std::string base_id = "base", std::string sft_id = "sft") {
  require_same_layout(base, sft, "base", "sft");
  TaskVector tv;
  tv.base_id = std::move(base_id);
  tv.sft_id = std::move(sft_id);
  tv.deltas = detail::map_tensors(base, [&](const std::string& name, const Tensor& b) {
    const Tensor& s = sft.at(name);
    std::vector<float> d(b.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = s.data[i] - b.data[i];
    return Tensor(b.shape, std::move(d));
  });
  return tv;
}

/// out = base + sum_t weight_t * delta_t. The weighted sum is accumulated in
/// double and rounded to F32 once per element.
inline TensorMap apply_delta(const TensorMap& base,
                             const std::vector<std::pair<const TaskVector*, double>>& deltas) {
  for (std::size_t t = 0; t < deltas.size(); ++t) {
    require_same_layout(base, deltas[t].first->deltas, "base",
                        "task vector " + std::to_string(t));
  }
  return detail::map_tensors(base, [&](const std::string& name, const Tensor& b) {
    std::vector<const float*> src;
    for (const auto& [tv, _] : deltas) src.push_back(tv->deltas.at(name).data.data());
    std::vector<float> out(b.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      double acc = 0.0;
      for (std::size_t t = 0; t < deltas.size(); ++t) acc += deltas[t].second * src[t][i];
      out[i] = static_cast<float>(static_cast<double>(b.data[i]) + acc);
    }
    return Tensor(b.shape, std::move(out));
  });
}

inline TensorMap apply_delta(const TensorMap& base, const TaskVector& delta, double weight = 1.0) {
  return apply_delta(base, {{&delta, weight}});
}

// ---------------------------------------------------------------------------
// Layer grouping

/// How tensor names map onto layer indices. The default takes the integer
/// segment following a path segment named "layers"; a custom regex must
/// have one capture group matching the decimal layer index.
struct LayerRule {
  std::optional<std::string> pattern;

  static LayerRule from_pattern(std::string regex) { return LayerRule{std::move(regex)}; }
};

struct LayerGroup {
  std::string key;
  std::vector<std::string> names;
};

/// Ordered layer buckets. Numeric keys come first in numeric order, then
/// "embedding", "head", "other".
struct LayerGrouping {
  std::vector<LayerGroup> groups;
  LayerRule rule;

  std::size_t size() const noexcept { return groups.size(); }
};

namespace detail {

inline std::vector<std::string_view> split_segments(std::string_view name) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  for (;;) {
    const std::size_t dot = name.find('.', start);
    parts.push_back(name.substr(start, dot == std::string_view::npos ? dot : dot - start));
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  return parts;
}

inline std::optional<std::uint64_t> parse_index(std::string_view text) {
  if (text.empty() || text.size() > 18) return std::nullopt;
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) return std::nullopt;
  return v;
}

inline std::string prefix_class(std::string_view name) {
  for (std::string_view seg : split_segments(name)) {
    if (seg.find("embed") != std::string_view::npos || seg == "wte" || seg == "wpe") {
      return "embedding";
    }
  }
  for (std::string_view seg : split_segments(name)) {
    if (seg == "lm_head" || seg == "head" || seg == "output" || seg == "classifier") return "head";
  }
  return "other";
}

inline int class_rank(std::string_view key) {
  if (key == "embedding") return 0;
  if (key == "head") return 1;
  if (key == "other") return 2;
  return 3;
}

}  // namespace detail

/// Ordering of layer keys: numeric keys numerically, then the named classes.
inline bool layer_key_less(std::string_view a, std::string_view b) {
  const auto na = detail::parse_index(a);
  const auto nb = detail::parse_index(b);
  if (na && nb) return *na < *nb;
  if (na != nb) return na.has_value();
  const int ra = detail::class_rank(a), rb = detail::class_rank(b);
  return ra != rb ? ra < rb : a < b;
}

namespace detail {
inline std::string layer_key_with(std::string_view name, const std::regex* re) {
  if (re) {
    std::match_results<std::string_view::const_iterator> m;
    if (std::regex_search(name.begin(), name.end(), m, *re) && m.size() > 1 && m[1].matched) {
      if (auto idx = parse_index(std::string_view(m[1].first, m[1].second))) {
        return std::to_string(*idx);
      }
    }
    return prefix_class(name);
  }
  const auto segs = split_segments(name);
  for (std::size_t i = 0; i + 1 < segs.size(); ++i) {
    if (segs[i] == "layers") {
      if (auto idx = parse_index(segs[i + 1])) return std::to_string(*idx);
    }
  }
  return prefix_class(name);
}

inline std::optional<std::regex> compile_rule(const LayerRule& rule) {
  if (!rule.pattern) return std::nullopt;
  try {
    std::regex re(*rule.pattern);
    if (re.mark_count() < 1) {
      fail(ErrorKind::InvalidRecipe, "layer pattern needs one capture group: " + *rule.pattern);
    }
    return re;
  } catch (const std::regex_error& e) {
    fail(ErrorKind::InvalidRecipe, "invalid layer pattern '" + *rule.pattern + "': " + e.what());
  }
}
}  // namespace detail

/// Layer key a tensor name falls into under `rule`.
inline std::string layer_key(std::string_view name, const LayerRule& rule = {}) {
  const auto re = detail::compile_rule(rule);
  return detail::layer_key_with(name, re ? &*re : nullptr);
}

inline LayerGrouping group_layers(const std::vector<std::string>& names, const LayerRule& rule = {}) {
  const auto re = detail::compile_rule(rule);
  std::map<std::string, std::vector<std::string>, decltype(&layer_key_less)> buckets(&layer_key_less);
  std::vector<std::string> sorted = names;
  std::sort(sorted.begin(), sorted.end());
  for (const auto& name : sorted) {
    buckets[detail::layer_key_with(name, re ? &*re : nullptr)].push_back(name);
  }
  LayerGrouping grouping;
  grouping.rule = rule;
  for (auto& [key, members] : buckets) grouping.groups.push_back({key, std::move(members)});
  return grouping;
}

inline LayerGrouping group_layers(const TensorMap& map, const LayerRule& rule = {}) {
  return group_layers(map.names(), rule);
}

inline LayerGrouping group_layers(const TaskVector& tv, const LayerRule& rule = {}) {
  return group_layers(tv.deltas.names(), rule);
}

/// Per-layer magnitude of a task vector. `mean` is the mean over the layer's
/// tensors of each tensor's Euclidean norm; `total` is the norm of the whole
/// layer flattened.
struct LayerL2 {
  std::string key;
  double mean = 0.0;
  double total = 0.0;
  std::size_t n_tensors = 0;
  std::uint64_t n_params = 0;
};

inline std::vector<LayerL2> layer_l2(const TaskVector& tv, const LayerGrouping& grouping) {
  for (const auto& g : grouping.groups) {
    if (g.names.empty()) fail(ErrorKind::EmptyGroup, "layer '" + g.key + "' has no tensors");
    for (const auto& name : g.names) {
      if (!tv.deltas.contains(name)) {
        fail(ErrorKind::NameSetMismatch, "layer '" + g.key + "' names '" + name +
                                             "', which the task vector lacks");
      }
    }
  }
  std::vector<LayerL2> rows(grouping.groups.size());
  parallel_for(rows.size(), [&](std::size_t li) {
    const LayerGroup& g = grouping.groups[li];
    LayerL2& row = rows[li];
    row.key = g.key;
    row.n_tensors = g.names.size();
    std::vector<double> squares(g.names.size());
    for (std::size_t t = 0; t < g.names.size(); ++t) {
      const Tensor& d = tv.deltas.at(g.names[t]);
      squares[t] = sum_of_squares(d.values());
      row.n_params += d.size();
    }
    const double norm_sum =
        pairwise_sum(squares.size(), [&](std::size_t t) { return std::sqrt(squares[t]); });
    row.mean = norm_sum / static_cast<double>(squares.size());
    row.total = std::sqrt(pairwise_sum(squares.size(), [&](std::size_t t) { return squares[t]; }));
  });
  return rows;
}

}  // namespace mergeforge
