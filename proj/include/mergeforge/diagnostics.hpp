#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mergeforge/error.hpp"
#include "mergeforge/numeric.hpp"
#include "mergeforge/parallel.hpp"
#include "mergeforge/taskvector.hpp"

namespace mergeforge {

/// Two-pass Pearson correlation: exact means first, then the centered cross
/// and square sums. Undefined (nullopt) when either input has zero variance.
inline std::optional<double> pearson_layer(std::span<const float> dg, std::span<const float> ds) {
  if (dg.size() != ds.size()) {
    fail(ErrorKind::LengthMismatch, "pearson inputs have lengths " + std::to_string(dg.size()) +
                                        " and " + std::to_string(ds.size()));
  }
  const std::size_t n = dg.size();
  if (n < 2) fail(ErrorKind::TooFewElements, "pearson needs at least 2 elements, got " + std::to_string(n));
  const double mean_g = pairwise_sum(dg) / static_cast<double>(n);
  const double mean_s = pairwise_sum(ds) / static_cast<double>(n);
  const double cross = pairwise_sum(n, [&](std::size_t i) { return (dg[i] - mean_g) * (ds[i] - mean_s); });
  const double ss_g = pairwise_sum(n, [&](std::size_t i) {
    const double a = dg[i] - mean_g;
    return a * a;
  });
  const double ss_s = pairwise_sum(n, [&](std::size_t i) {
    const double a = ds[i] - mean_s;
    return a * a;
  });
  if (ss_g == 0.0 || ss_s == 0.0) return std::nullopt;
  return std::clamp(cross / (std::sqrt(ss_g) * std::sqrt(ss_s)), -1.0, 1.0);
}

/// One row of the per-layer diagnostics. `l2_mean`/`l2_total` hold one
/// entry per task vector, in the order the vectors were passed.
struct LayerReport {
  std::string key;
  std::vector<double> l2_mean;
  std::vector<double> l2_total;
  std::optional<double> pearson_r;
  std::uint64_t n_params = 0;
  std::size_t n_tensors = 0;
};

/// Per-layer Pearson r between two task vectors. Each layer's elements are
/// concatenated in canonical (name, flat index) order. The L2 columns are
/// filled for both vectors.
inline std::vector<LayerReport> correlation_profile(const TaskVector& vg, const TaskVector& vs,
                                                    const LayerGrouping& grouping) {
  require_same_layout(vg.deltas, vs.deltas, "first task vector", "second task vector");
  const auto l2_g = layer_l2(vg, grouping);
  const auto l2_s = layer_l2(vs, grouping);
  std::vector<LayerReport> rows(grouping.size());
  parallel_for(rows.size(), [&](std::size_t li) {
    const LayerGroup& group = grouping.groups[li];
    std::vector<float> flat_g, flat_s;
    for (const auto& name : group.names) {
      const auto& a = vg.deltas.at(name).data;
      const auto& b = vs.deltas.at(name).data;
      flat_g.insert(flat_g.end(), a.begin(), a.end());
      flat_s.insert(flat_s.end(), b.begin(), b.end());
    }
    LayerReport& row = rows[li];
    row.key = group.key;
    row.l2_mean = {l2_g[li].mean, l2_s[li].mean};
    row.l2_total = {l2_g[li].total, l2_s[li].total};
    row.n_params = flat_g.size();
    row.n_tensors = group.names.size();
    if (flat_g.size() >= 2) row.pearson_r = pearson_layer(flat_g, flat_s);
  });
  return rows;
}

/// Five-number summary with inclusive linear interpolation between order
/// statistics (position q * (n - 1)).
struct DistributionSummary {
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};

inline double quantile_inclusive(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline DistributionSummary summarize(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  DistributionSummary s;
  if (values.empty()) return s;
  s.min = values.front();
  s.max = values.back();
  s.q1 = quantile_inclusive(values, 0.25);
  s.median = quantile_inclusive(values, 0.5);
  s.q3 = quantile_inclusive(values, 0.75);
  return s;
}

/// Per-layer L2 table for several variants sharing one grouping.
/// `mean[v][l]` / `total[v][l]` index variant v and layer l.
struct L2Profile {
  std::vector<std::string> labels;
  std::vector<std::string> layer_keys;
  std::vector<std::vector<double>> mean;
  std::vector<std::vector<double>> total;
  std::vector<DistributionSummary> summary;  // of mean[v] over layers
};

inline L2Profile l2_profile(const std::vector<std::pair<std::string, const TaskVector*>>& variants,
                            const LayerGrouping& grouping) {
  L2Profile p;
  for (const auto& g : grouping.groups) p.layer_keys.push_back(g.key);
  for (const auto& [label, tv] : variants) {
    const auto rows = layer_l2(*tv, grouping);
    std::vector<double> mean, total;
    for (const auto& r : rows) {
      mean.push_back(r.mean);
      total.push_back(r.total);
    }
    p.labels.push_back(label);
    p.summary.push_back(summarize(mean));
    p.mean.push_back(std::move(mean));
    p.total.push_back(std::move(total));
  }
  return p;
}

enum class Verdict { DataMix, Merge };

constexpr std::string_view to_string(Verdict v) noexcept {
  return v == Verdict::DataMix ? "DATA_MIX" : "MERGE";
}

enum class LayerWeighting { Uniform, ParamWeighted };

struct Recommendation {
  Verdict verdict = Verdict::Merge;
  double mean_r = 0.0;
  double threshold = 0.5;
  LayerWeighting weighting = LayerWeighting::Uniform;
  std::size_t defined_layers = 0;
  std::size_t undefined_layers = 0;
  std::vector<LayerReport> per_layer_evidence;
  std::string notes;
};

/// High inter-task update correlation favours training on mixed data;
/// low correlation favours merging specialists. The mean runs over layers
/// with a defined r.
inline Recommendation recommend_strategy(const std::vector<LayerReport>& profile, double threshold = 0.5,
                                         LayerWeighting weighting = LayerWeighting::Uniform) {
  Recommendation rec;
  rec.threshold = threshold;
  rec.weighting = weighting;
  rec.per_layer_evidence = profile;
  double num = 0.0, den = 0.0;
  for (const auto& row : profile) {
    if (!row.pearson_r) {
      ++rec.undefined_layers;
      continue;
    }
    ++rec.defined_layers;
    const double w = weighting == LayerWeighting::Uniform ? 1.0 : static_cast<double>(row.n_params);
    num += w * *row.pearson_r;
    den += w;
  }
  if (rec.defined_layers == 0 || den == 0.0) {
    fail(ErrorKind::NoDefinedCorrelations, "no layer has a defined correlation (" +
                                               std::to_string(profile.size()) + " layers)");
  }
  rec.mean_r = num / den;
  rec.verdict = rec.mean_r >= threshold ? Verdict::DataMix : Verdict::Merge;
  rec.notes = std::to_string(rec.defined_layers) + " layers with defined r, " +
              std::to_string(rec.undefined_layers) + " undefined (zero variance) excluded";
  return rec;
}

}  // namespace mergeforge
