#pragma once

// Ablation sweeps: one merge per (method, weight ratio, density) grid point,
// each scored by an injected callback and compared against declared
// baseline scores.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mergeforge/error.hpp"
#include "mergeforge/merge.hpp"
#include "mergeforge/numeric.hpp"
#include "mergeforge/tensor.hpp"

namespace mergeforge {

struct WeightRatio {
  double g = 0.5;
  double s = 0.5;
};

struct SweepPlan {
  std::vector<MergeMethod> methods;
  std::vector<WeightRatio> ratios;
  std::vector<double> densities{0.5};
  double spread = 0.0;
  double scale = 1.0;
  bool normalize_weights = false;
  std::uint64_t seed = 0;
  std::vector<std::string> task_ids{"g", "s"};
  /// Declared baseline per metric, in column order.
  std::vector<std::pair<std::string, double>> baseline;
};

/// The 0.1/0.9 ... 0.9/0.1 weight grid used by the merge-weight ablation.
inline std::vector<WeightRatio> standard_ratio_grid() {
  std::vector<WeightRatio> grid;
  for (int i = 1; i <= 9; ++i) grid.push_back({i / 10.0, (10 - i) / 10.0});
  return grid;
}

struct SweepRow {
  MergeMethod method = MergeMethod::Linear;
  WeightRatio ratio;
  double density = 1.0;
  std::vector<double> scores;
  std::vector<double> pct_change;
  double avg_pct_change = 0.0;
  bool best = false;
};

struct SweepReport {
  std::vector<std::pair<std::string, double>> baseline;
  std::vector<SweepRow> rows;
};

using Scorer = std::function<std::map<std::string, double>(const TensorMap&)>;

inline double percent_change(double score, double baseline) {
  return 100.0 * (score - baseline) / baseline;
}

inline void validate_plan(const SweepPlan& plan) {
  if (plan.methods.empty()) fail(ErrorKind::InvalidPlan, "plan lists no methods");
  if (plan.ratios.empty()) fail(ErrorKind::InvalidPlan, "plan has an empty weight-ratio grid");
  if (plan.densities.empty()) fail(ErrorKind::InvalidPlan, "plan has an empty density grid");
  if (plan.task_ids.size() != 2) fail(ErrorKind::InvalidPlan, "a sweep merges exactly two tasks");
  for (const auto& r : plan.ratios) {
    if (!(r.g >= 0.0) || !(r.s >= 0.0) || !std::isfinite(r.g) || !std::isfinite(r.s) ||
        (r.g == 0.0 && r.s == 0.0)) {
      fail(ErrorKind::InvalidPlan, "weight ratios must be >= 0 and not both zero");
    }
  }
  for (double d : plan.densities) check_density(d);
  for (const auto& [metric, value] : plan.baseline) {
    if (!(value != 0.0) || !std::isfinite(value)) {
      fail(ErrorKind::InvalidPlan, "baseline for '" + metric + "' must be finite and non-zero");
    }
  }
}

/// Marks the row with the largest average change within each method;
/// ties go to the earlier row.
inline void mark_best(SweepReport& report) {
  std::map<MergeMethod, std::size_t> best;
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    report.rows[i].best = false;
    auto [it, fresh] = best.try_emplace(report.rows[i].method, i);
    if (!fresh && report.rows[i].avg_pct_change > report.rows[it->second].avg_pct_change) it->second = i;
  }
  for (const auto& [_, i] : best) report.rows[i].best = true;
}

/// Fills percent changes and averages for rows whose scores are set.
inline void finalize_report(SweepReport& report) {
  for (auto& row : report.rows) {
    row.pct_change.clear();
    double sum = 0.0;
    for (std::size_t m = 0; m < report.baseline.size(); ++m) {
      row.pct_change.push_back(percent_change(row.scores[m], report.baseline[m].second));
      sum += row.pct_change.back();
    }
    row.avg_pct_change = report.baseline.empty() ? 0.0 : sum / static_cast<double>(report.baseline.size());
  }
  mark_best(report);
}

inline std::string describe_point(MergeMethod method, const WeightRatio& r, double density) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%s %g/%g density %g", std::string(to_string(method)).c_str(), r.g, r.s,
                density);
  return buf;
}

/// Merges and scores every grid point in grid order (method, ratio,
/// density). The scorer must report every baseline metric.
inline SweepReport run_sweep(const SweepPlan& plan, const TensorMap& base, const TensorMap& task_g,
                             const TensorMap& task_s, const Scorer& scorer) {
  validate_plan(plan);
  const TaskVector vg = compute_delta(base, task_g, "base", plan.task_ids[0]);
  const TaskVector vs = compute_delta(base, task_s, "base", plan.task_ids[1]);
  SweepReport report;
  report.baseline = plan.baseline;
  for (MergeMethod method : plan.methods) {
    for (const WeightRatio& ratio : plan.ratios) {
      for (double density : plan.densities) {
        MergeRecipe recipe;
        recipe.method = method;
        recipe.tasks = {{plan.task_ids[0], ratio.g}, {plan.task_ids[1], ratio.s}};
        recipe.density = density;
        recipe.spread = plan.spread;
        recipe.seed = plan.seed;
        recipe.normalize_weights = plan.normalize_weights;
        recipe.scale = plan.scale;
        SweepRow row;
        row.method = method;
        row.ratio = ratio;
        row.density = density;
        std::map<std::string, double> scores;
        try {
          const TensorMap merged = method == MergeMethod::Linear
                                       ? merge(recipe, base, {&task_g, &task_s})
                                       : merge_task_vectors(recipe, base, {&vg, &vs});
          scores = scorer(merged);
        } catch (const Error& e) {
          throw Error(e.kind(), describe_point(method, ratio, density) + ": " + e.detail());
        } catch (const std::exception& e) {
          fail(ErrorKind::ScorerFailure, describe_point(method, ratio, density) + ": " + e.what());
        }
        for (const auto& [metric, _] : plan.baseline) {
          auto it = scores.find(metric);
          if (it == scores.end()) {
            fail(ErrorKind::ScorerFailure, describe_point(method, ratio, density) +
                                               ": scorer did not report '" + metric + "'");
          }
          row.scores.push_back(it->second);
        }
        report.rows.push_back(std::move(row));
      }
    }
  }
  finalize_report(report);
  return report;
}

/// Synthetic scorer for desk-scale sweeps: metric "cos_<id>" is the cosine
/// between the merged model's delta and task <id>'s delta, so a specialist
/// scores exactly 1 on its own task.
inline Scorer retention_scorer(const TensorMap& base, std::vector<std::pair<std::string, const TensorMap*>> tasks) {
  return [&base, tasks = std::move(tasks)](const TensorMap& merged) {
    std::map<std::string, double> out;
    for (const auto& [id, model] : tasks) {
      double dot = 0.0, nm = 0.0, nt = 0.0;
      for (const auto& [name, b] : base) {
        const auto& m = merged.at(name).data;
        const auto& t = model->at(name).data;
        dot += pairwise_sum(b.size(), [&](std::size_t i) {
          return (static_cast<double>(m[i]) - b.data[i]) * (static_cast<double>(t[i]) - b.data[i]);
        });
        nm += pairwise_sum(b.size(), [&](std::size_t i) {
          const double v = static_cast<double>(m[i]) - b.data[i];
          return v * v;
        });
        nt += pairwise_sum(b.size(), [&](std::size_t i) {
          const double v = static_cast<double>(t[i]) - b.data[i];
          return v * v;
        });
      }
      out["cos_" + id] = (nm == 0.0 || nt == 0.0) ? 0.0 : dot / (std::sqrt(nm) * std::sqrt(nt));
    }
    return out;
  };
}

// ---------------------------------------------------------------------------
// Formatting

enum class ReportFormat { Csv, Json, Markdown };

/// Shortest decimal text that round-trips the double.
inline std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc() ? std::string(buf, ptr) : std::string("nan");
}

/// Signed percentage rounded to two decimals: "+1.59%", "-0.77%", "0.00%".
inline std::string format_pct(double pct) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", pct);
  std::string s = buf;
  if (s == "0.00" || s == "-0.00") return "0.00%";
  if (s[0] != '-' && s != "nan" && s != "inf") s = "+" + s;
  return s + "%";
}

inline std::string format_ratio(const WeightRatio& r) { return format_number(r.g) + "/" + format_number(r.s); }

inline std::string format_report(const SweepReport& report, ReportFormat format) {
  switch (format) {
    case ReportFormat::Csv: {
      std::string out = "method,weight_g,weight_s,density";
      for (const auto& [m, _] : report.baseline) out += "," + m + "," + m + "_pct";
      out += ",avg_pct,best\n";
      for (const auto& row : report.rows) {
        out += std::string(to_string(row.method)) + "," + format_number(row.ratio.g) + "," +
               format_number(row.ratio.s) + "," + format_number(row.density);
        for (std::size_t m = 0; m < row.scores.size(); ++m) {
          char pct[64];
          std::snprintf(pct, sizeof pct, "%.2f", row.pct_change[m]);
          out += "," + format_number(row.scores[m]) + "," + pct;
        }
        char avg[64];
        std::snprintf(avg, sizeof avg, "%.2f", row.avg_pct_change);
        out += std::string(",") + avg + "," + (row.best ? "1" : "0") + "\n";
      }
      return out;
    }
    case ReportFormat::Json: {
      nlohmann::ordered_json doc;
      doc["metrics"] = nlohmann::ordered_json::array();
      doc["baseline"] = nlohmann::ordered_json::object();
      for (const auto& [m, v] : report.baseline) {
        doc["metrics"].push_back(m);
        doc["baseline"][m] = v;
      }
      doc["rows"] = nlohmann::ordered_json::array();
      for (const auto& row : report.rows) {
        nlohmann::ordered_json r;
        r["method"] = to_string(row.method);
        r["weight_g"] = row.ratio.g;
        r["weight_s"] = row.ratio.s;
        r["density"] = row.density;
        r["scores"] = nlohmann::ordered_json::object();
        r["pct_change"] = nlohmann::ordered_json::object();
        for (std::size_t m = 0; m < report.baseline.size(); ++m) {
          r["scores"][report.baseline[m].first] = row.scores[m];
          r["pct_change"][report.baseline[m].first] = row.pct_change[m];
        }
        r["avg_pct_change"] = row.avg_pct_change;
        r["best"] = row.best;
        doc["rows"].push_back(std::move(r));
      }
      return doc.dump(2) + "\n";
    }
    case ReportFormat::Markdown: {
      std::string out = "| Method | Weight | Density |";
      std::string rule = "|---|---|---|";
      for (const auto& [m, _] : report.baseline) {
        out += " " + m + " |";
        rule += "---|";
      }
      out += " AVG % |\n" + rule + "---|\n";
      for (const auto& row : report.rows) {
        const std::string em = row.best ? "**" : "";
        auto cell = [&](const std::string& text) { return " " + em + text + em + " |"; };
        out += "|" + cell(std::string(to_string(row.method))) + cell(format_ratio(row.ratio)) +
               cell(format_number(row.density));
        for (std::size_t m = 0; m < row.scores.size(); ++m) {
          out += cell(format_number(row.scores[m]) + "(" + format_pct(row.pct_change[m]) + ")");
        }
        out += cell(format_pct(row.avg_pct_change)) + "\n";
      }
      return out;
    }
  }
  return {};
}

}  // namespace mergeforge
