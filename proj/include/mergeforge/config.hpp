#pragma once

// JSON documents accepted by the CLI: merge recipes and sweep plans.
// Unknown fields are rejected.

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <iterator>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "mergeforge/error.hpp"
#include "mergeforge/merge.hpp"
#include "mergeforge/sweep.hpp"

namespace mergeforge {

namespace detail {

using ojson = nlohmann::ordered_json;

inline void reject_unknown(const ojson& obj, std::initializer_list<std::string_view> known, ErrorKind kind,
                           std::string_view what) {
  if (!obj.is_object()) fail(kind, std::string(what) + " must be a JSON object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (auto k : known) ok = ok || key == k;
    if (!ok) fail(kind, std::string(what) + " has unknown field '" + key + "'");
  }
}

inline double get_number(const ojson& obj, const char* key, double fallback, ErrorKind kind) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number()) fail(kind, std::string("field '") + key + "' must be a number");
  return obj[key].get<double>();
}

inline std::uint64_t get_seed(const ojson& obj, std::uint64_t fallback, ErrorKind kind) {
  if (!obj.contains("seed")) return fallback;
  if (!obj["seed"].is_number_unsigned()) fail(kind, "field 'seed' must be a non-negative integer");
  return obj["seed"].get<std::uint64_t>();
}

inline bool get_bool(const ojson& obj, const char* key, bool fallback, ErrorKind kind) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_boolean()) fail(kind, std::string("field '") + key + "' must be a boolean");
  return obj[key].get<bool>();
}

inline ojson parse_text(std::string_view text, ErrorKind kind, std::string_view what) {
  try {
    return ojson::parse(text);
  } catch (const ojson::exception& e) {
    fail(kind, std::string(what) + " is not valid JSON: " + e.what());
  }
}

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::IoFailure, path + ": cannot open for reading");
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace detail

/// Recipe document:
///   {"method": "TIES", "tasks": [{"id": "gen", "weight": 0.5}, ...],
///    "density": 0.5, "spread": 0.0, "seed": 0, "normalize_weights": false,
///    "scale": 1.0}
/// Only "method" and "tasks" are required.
inline MergeRecipe parse_recipe(std::string_view text) {
  constexpr auto kind = ErrorKind::InvalidRecipe;
  const auto doc = detail::parse_text(text, kind, "recipe");
  detail::reject_unknown(doc, {"method", "tasks", "density", "spread", "seed", "normalize_weights", "scale"},
                         kind, "recipe");
  if (!doc.contains("method") || !doc["method"].is_string()) fail(kind, "recipe needs a string 'method'");
  if (!doc.contains("tasks") || !doc["tasks"].is_array() || doc["tasks"].empty()) {
    fail(kind, "recipe needs a non-empty 'tasks' array");
  }
  MergeRecipe r;
  r.method = parse_merge_method(doc["method"].get<std::string>());
  for (const auto& t : doc["tasks"]) {
    detail::reject_unknown(t, {"id", "weight"}, kind, "recipe task");
    TaskWeight tw;
    if (t.contains("id")) {
      if (!t["id"].is_string()) fail(kind, "task 'id' must be a string");
      tw.id = t["id"].get<std::string>();
    } else {
      tw.id = "task" + std::to_string(r.tasks.size());
    }
    tw.weight = detail::get_number(t, "weight", 1.0, kind);
    r.tasks.push_back(std::move(tw));
  }
  r.density = detail::get_number(doc, "density", 1.0, kind);
  r.spread = detail::get_number(doc, "spread", 0.0, kind);
  r.seed = detail::get_seed(doc, 0, kind);
  r.normalize_weights = detail::get_bool(doc, "normalize_weights", false, kind);
  r.scale = detail::get_number(doc, "scale", 1.0, kind);

  std::vector<double> weights;
  for (const auto& t : r.tasks) weights.push_back(t.weight);
  check_weights(weights, r.normalize_weights);
  if (r.method != MergeMethod::Linear) check_density(r.density);
  if (r.method == MergeMethod::Della) check_spread(r.density, r.spread);
  return r;
}

inline MergeRecipe load_recipe(const std::string& path) { return parse_recipe(detail::slurp(path)); }

/// Sweep plan document:
///   {"methods": ["LINEAR", "TIES", "DARE", "DELLA"],
///    "ratios": [[0.1, 0.9], ...] | "standard",
///    "densities": [0.5], "spread": 0.0, "scale": 1.0, "seed": 0,
///    "normalize_weights": false, "tasks": ["gen", "sum"],
///    "baseline": {"metric": value, ...}}
/// Baseline order sets the report's column order.
inline SweepPlan parse_plan(std::string_view text) {
  constexpr auto kind = ErrorKind::InvalidPlan;
  const auto doc = detail::parse_text(text, kind, "plan");
  detail::reject_unknown(doc, {"methods", "ratios", "densities", "spread", "scale", "seed", "normalize_weights",
                               "tasks", "baseline"},
                         kind, "plan");
  SweepPlan plan;
  if (!doc.contains("methods") || !doc["methods"].is_array()) fail(kind, "plan needs a 'methods' array");
  for (const auto& m : doc["methods"]) {
    if (!m.is_string()) fail(kind, "methods must be strings");
    try {
      plan.methods.push_back(parse_merge_method(m.get<std::string>()));
    } catch (const Error& e) {
      fail(kind, e.detail());
    }
  }
  if (!doc.contains("ratios") || (doc["ratios"].is_string() && doc["ratios"] == "standard")) {
    plan.ratios = standard_ratio_grid();
  } else if (doc["ratios"].is_array()) {
    for (const auto& r : doc["ratios"]) {
      if (!r.is_array() || r.size() != 2 || !r[0].is_number() || !r[1].is_number()) {
        fail(kind, "each ratio must be a [weight_g, weight_s] pair");
      }
      plan.ratios.push_back({r[0].get<double>(), r[1].get<double>()});
    }
  } else {
    fail(kind, "'ratios' must be an array of pairs or \"standard\"");
  }
  if (doc.contains("densities")) {
    if (!doc["densities"].is_array()) fail(kind, "'densities' must be an array");
    plan.densities.clear();
    for (const auto& d : doc["densities"]) {
      if (!d.is_number()) fail(kind, "densities must be numbers");
      plan.densities.push_back(d.get<double>());
    }
  }
  plan.spread = detail::get_number(doc, "spread", 0.0, kind);
  plan.scale = detail::get_number(doc, "scale", 1.0, kind);
  plan.seed = detail::get_seed(doc, 0, kind);
  plan.normalize_weights = detail::get_bool(doc, "normalize_weights", false, kind);
  if (doc.contains("tasks")) {
    if (!doc["tasks"].is_array()) fail(kind, "'tasks' must be an array of two ids");
    plan.task_ids.clear();
    for (const auto& t : doc["tasks"]) {
      if (!t.is_string()) fail(kind, "task ids must be strings");
      plan.task_ids.push_back(t.get<std::string>());
    }
  }
  if (doc.contains("baseline")) {
    if (!doc["baseline"].is_object()) fail(kind, "'baseline' must map metric -> score");
    for (const auto& [metric, v] : doc["baseline"].items()) {
      if (!v.is_number()) fail(kind, "baseline '" + metric + "' must be a number");
      plan.baseline.emplace_back(metric, v.get<double>());
    }
  }
  try {
    validate_plan(plan);
  } catch (const Error& e) {
    if (e.kind() != kind) fail(kind, e.detail());
    throw;
  }
  return plan;
}

inline SweepPlan load_plan(const std::string& path) { return parse_plan(detail::slurp(path)); }

}  // namespace mergeforge
