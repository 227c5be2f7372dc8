// mergeforge command-line front end.
//
// Exit codes: 0 success, 1 domain error, 2 usage error.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "mergeforge/mergeforge.hpp"

namespace mf = mergeforge;
using ojson = nlohmann::ordered_json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  unsigned threads = 0;
  bool quiet = false;
  std::string format = "text";

  bool json() const { return format == "json"; }
  std::optional<std::uint64_t> seed_override() const {
    if (seed_opt && seed_opt->count() > 0) return seed;
    return std::nullopt;
  }
};

/// Structured progress lines on stderr: `mergeforge cmd=<c> event=<e> k=v ...`.
class Progress {
 public:
  Progress(const Globals& g, std::string cmd) : quiet_(g.quiet), cmd_(std::move(cmd)) {}

  void operator()(const std::string& event, std::initializer_list<std::pair<std::string, std::string>> fields = {}) const {
    if (quiet_) return;
    std::string line = "mergeforge cmd=" + cmd_ + " event=" + event;
    for (const auto& [k, v] : fields) line += " " + k + "=" + quote(v);
    std::cerr << line << '\n';
  }

 private:
  static std::string quote(const std::string& v) {
    if (!v.empty() && v.find_first_of(" \t\"=") == std::string::npos) return v;
    std::string out = "\"";
    for (char c : v) {
      if (c == '"' || c == '\\') out += '\\';
      out += c;
    }
    return out + "\"";
  }

  bool quiet_;
  std::string cmd_;
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) mf::fail(mf::ErrorKind::IoFailure, path + ": cannot open for writing");
  out << text;
  out.close();
  if (!out) mf::fail(mf::ErrorKind::IoFailure, path + ": write failed");
}

std::vector<std::string> read_lines(const std::string& path) { return mf::read_jsonl(path).records; }

std::string num(double v) { return mf::format_number(v); }

ojson json_number_or_null(const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); }

// ---------------------------------------------------------------------------
// inspect

struct InspectArgs {
  std::string path;
};

int run_inspect(const InspectArgs& a, const Globals& g) {
  Progress log(g, "inspect");
  const mf::HeaderSummary s = mf::validate_header(a.path);
  log("validated", {{"path", a.path}, {"tensors", std::to_string(s.tensor_count)}});
  if (g.json()) {
    ojson doc;
    doc["path"] = a.path;
    doc["tensor_count"] = s.tensor_count;
    doc["parameter_count"] = s.parameter_count;
    doc["total_bytes"] = s.total_bytes;
    doc["dtypes"] = ojson::array();
    for (mf::Dtype d : s.dtypes) doc["dtypes"].push_back(mf::to_string(d));
    doc["metadata"] = ojson::object();
    for (const auto& [k, v] : s.metadata) doc["metadata"][k] = v;
    doc["tensors"] = ojson::array();
    for (const auto& t : s.tensors) {
      doc["tensors"].push_back({{"name", t.name},
                                {"dtype", mf::to_string(t.dtype)},
                                {"shape", t.shape},
                                {"data_offsets", {t.begin, t.end}}});
    }
    std::cout << doc.dump(2) << '\n';
    return 0;
  }
  std::string dtypes;
  for (mf::Dtype d : s.dtypes) dtypes += (dtypes.empty() ? "" : ",") + std::string(mf::to_string(d));
  std::cout << "path        " << a.path << '\n'
            << "tensors     " << s.tensor_count << '\n'
            << "parameters  " << s.parameter_count << '\n'
            << "bytes       " << s.total_bytes << '\n'
            << "dtypes      " << (dtypes.empty() ? "-" : dtypes) << '\n';
  for (const auto& [k, v] : s.metadata) std::cout << "meta        " << k << "=" << v << '\n';
  for (const auto& t : s.tensors) {
    std::cout << "  " << t.name << "  " << mf::to_string(t.dtype) << "  " << mf::shape_string(t.shape) << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------
// diff

struct DiffArgs {
  std::string base, sft, out;
};

int run_diff(const DiffArgs& a, const Globals& g) {
  Progress log(g, "diff");
  const mf::TensorMap base = mf::read_checkpoint(a.base);
  log("read", {{"path", a.base}, {"tensors", std::to_string(base.size())}});
  const mf::TensorMap sft = mf::read_checkpoint(a.sft);
  log("read", {{"path", a.sft}, {"tensors", std::to_string(sft.size())}});
  const mf::TaskVector tv = mf::compute_delta(base, sft, a.base, a.sft);
  mf::write_checkpoint(mf::to_container(tv), a.out);
  log("wrote", {{"path", a.out}, {"parameters", std::to_string(tv.deltas.parameter_count())}});
  return 0;
}

// ---------------------------------------------------------------------------
// merge

struct MergeArgs {
  std::string recipe, base, out;
  std::vector<std::string> tasks;
};

int run_merge(const MergeArgs& a, const Globals& g) {
  Progress log(g, "merge");
  mf::MergeRecipe recipe = mf::load_recipe(a.recipe);
  if (auto s = g.seed_override()) recipe.seed = *s;
  if (recipe.tasks.size() != a.tasks.size()) {
    throw UsageError("--task given " + std::to_string(a.tasks.size()) + " times but the recipe lists " +
                     std::to_string(recipe.tasks.size()) + " tasks");
  }
  log("recipe", {{"method", std::string(mf::to_string(recipe.method))},
                 {"tasks", std::to_string(recipe.tasks.size())},
                 {"seed", std::to_string(recipe.seed)}});
  const mf::TensorMap base = mf::read_checkpoint(a.base);
  log("read", {{"path", a.base}, {"tensors", std::to_string(base.size())}});

  std::vector<mf::TensorMap> inputs;
  for (const auto& path : a.tasks) {
    inputs.push_back(mf::read_checkpoint(path));
    log("read", {{"path", path}, {"tensors", std::to_string(inputs.back().size())}});
  }

  // Task inputs may be full checkpoints or task-vector containers from `diff`.
  bool any_vector = false;
  for (const auto& m : inputs) any_vector = any_vector || mf::is_task_vector(m);
  mf::TensorMap merged;
  if (!any_vector) {
    std::vector<const mf::TensorMap*> ptrs;
    for (const auto& m : inputs) ptrs.push_back(&m);
    merged = mf::merge(recipe, base, ptrs);
  } else {
    if (recipe.method == mf::MergeMethod::Linear) {
      mf::fail(mf::ErrorKind::InvalidRecipe, "LINEAR averages checkpoints; pass checkpoints, not task vectors");
    }
    std::vector<mf::TaskVector> vectors;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
      vectors.push_back(mf::is_task_vector(inputs[t]) ? mf::from_container(inputs[t])
                                                      : mf::compute_delta(base, inputs[t], a.base, a.tasks[t]));
    }
    std::vector<const mf::TaskVector*> ptrs;
    for (const auto& v : vectors) ptrs.push_back(&v);
    merged = mf::merge_task_vectors(recipe, base, ptrs);
  }
  mf::write_checkpoint(merged, a.out);
  log("wrote", {{"path", a.out}, {"tensors", std::to_string(merged.size())}});
  return 0;
}

// ---------------------------------------------------------------------------
// diagnose

struct DiagnoseArgs {
  std::string base, sft_a, sft_b, report, table;
  std::string label_a = "a", label_b = "b";
  double threshold = 0.5;
  std::string weighting = "uniform";
  std::string layer_pattern;
};

int run_diagnose(const DiagnoseArgs& a, const Globals& g) {
  Progress log(g, "diagnose");
  if (a.label_a == a.label_b) throw UsageError("--label-a and --label-b must differ");
  const mf::TensorMap base = mf::read_checkpoint(a.base);
  const mf::TensorMap ma = mf::read_checkpoint(a.sft_a);
  const mf::TensorMap mb = mf::read_checkpoint(a.sft_b);
  log("read", {{"base", a.base}, {"a", a.sft_a}, {"b", a.sft_b}});
  const mf::TaskVector va = mf::compute_delta(base, ma, a.base, a.sft_a);
  const mf::TaskVector vb = mf::compute_delta(base, mb, a.base, a.sft_b);
  mf::LayerRule rule;
  if (!a.layer_pattern.empty()) rule.pattern = a.layer_pattern;
  const mf::LayerGrouping grouping = mf::group_layers(va, rule);
  const auto profile = mf::correlation_profile(va, vb, grouping);
  const auto l2 = mf::l2_profile({{a.label_a, &va}, {a.label_b, &vb}}, grouping);
  log("profiled", {{"layers", std::to_string(profile.size())}});
  const auto weighting =
      a.weighting == "params" ? mf::LayerWeighting::ParamWeighted : mf::LayerWeighting::Uniform;
  const mf::Recommendation rec = mf::recommend_strategy(profile, a.threshold, weighting);
  log("verdict", {{"verdict", std::string(mf::to_string(rec.verdict))}, {"mean_r", num(rec.mean_r)}});

  const std::vector<std::string> labels = {a.label_a, a.label_b};
  ojson doc;
  doc["labels"] = labels;
  doc["layers"] = ojson::array();
  for (const auto& row : profile) {
    ojson r;
    r["layer"] = row.key;
    r["n_tensors"] = row.n_tensors;
    r["n_params"] = row.n_params;
    r["l2_mean"] = ojson::object();
    r["l2_total"] = ojson::object();
    for (std::size_t v = 0; v < labels.size(); ++v) {
      r["l2_mean"][labels[v]] = row.l2_mean[v];
      r["l2_total"][labels[v]] = row.l2_total[v];
    }
    r["pearson_r"] = json_number_or_null(row.pearson_r);
    doc["layers"].push_back(std::move(r));
  }
  doc["l2_summary"] = ojson::object();
  for (std::size_t v = 0; v < l2.labels.size(); ++v) {
    const auto& s = l2.summary[v];
    doc["l2_summary"][l2.labels[v]] = {
        {"min", s.min}, {"q1", s.q1}, {"median", s.median}, {"q3", s.q3}, {"max", s.max}};
  }
  doc["recommendation"] = {{"verdict", mf::to_string(rec.verdict)},
                           {"mean_r", rec.mean_r},
                           {"threshold", rec.threshold},
                           {"weighting", a.weighting},
                           {"defined_layers", rec.defined_layers},
                           {"undefined_layers", rec.undefined_layers},
                           {"notes", rec.notes}};

  std::string csv = "layer";
  for (const auto& l : labels) csv += ",l2_mean_" + l;
  csv += ",pearson_r\n";
  for (const auto& row : profile) {
    csv += row.key;
    for (double v : row.l2_mean) csv += "," + num(v);
    csv += "," + (row.pearson_r ? num(*row.pearson_r) : std::string()) + "\n";
  }

  if (!a.report.empty()) {
    write_text(a.report, doc.dump(2) + "\n");
    log("wrote", {{"path", a.report}});
  }
  if (!a.table.empty()) {
    write_text(a.table, csv);
    log("wrote", {{"path", a.table}});
  }
  if (a.report.empty() && a.table.empty()) {
    if (g.json()) {
      std::cout << doc.dump(2) << '\n';
    } else {
      std::cout << csv << "verdict " << mf::to_string(rec.verdict) << " (mean r " << num(rec.mean_r)
                << ", threshold " << num(rec.threshold) << ", " << rec.notes << ")\n";
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// mix

struct MixArgs {
  std::vector<std::string> inputs;
  std::vector<double> ratios;
  std::string out;
};

int run_mix(const MixArgs& a, const Globals& g) {
  Progress log(g, "mix");
  if (!a.ratios.empty() && a.ratios.size() != a.inputs.size()) {
    throw UsageError("--ratio given " + std::to_string(a.ratios.size()) + " times for " +
                     std::to_string(a.inputs.size()) + " --in files");
  }
  const std::uint64_t seed = g.seed_override().value_or(0);
  std::vector<mf::RecordDataset> parts;
  for (std::size_t i = 0; i < a.inputs.size(); ++i) {
    mf::RecordDataset ds = mf::read_jsonl(a.inputs[i]);
    const double ratio = a.ratios.empty() ? 1.0 : a.ratios[i];
    const std::size_t before = ds.count();
    ds = mf::subsample(ds, ratio, mf::derive_seed(seed, i));
    log("read", {{"path", a.inputs[i]}, {"records", std::to_string(before)}, {"kept", std::to_string(ds.count())}});
    parts.push_back(std::move(ds));
  }
  const mf::RecordDataset mixed = mf::mix_datasets(parts, seed);
  if (a.out.empty()) {
    std::cout << mf::encode_jsonl(mixed);
  } else {
    mf::write_jsonl(mixed, a.out);
    log("wrote", {{"path", a.out}, {"records", std::to_string(mixed.count())}});
  }
  return 0;
}

// ---------------------------------------------------------------------------
// score

struct ScoreArgs {
  std::string hyp, ref, out;
  std::string metrics = "bleu4,chrfpp,rougel";
  bool lowercase = false;
};

int run_score(const ScoreArgs& a, const Globals& g) {
  Progress log(g, "score");
  std::vector<mf::Metric> metrics;
  std::stringstream ss(a.metrics);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      metrics.push_back(mf::parse_metric(item));
    } catch (const mf::Error&) {
      throw UsageError("--metrics: unknown metric '" + item + "' (expected bleu4, chrfpp, rougel)");
    }
  }
  if (metrics.empty()) throw UsageError("--metrics: no metrics named");
  const auto hyps = read_lines(a.hyp);
  const auto refs = read_lines(a.ref);
  log("read", {{"hyp", a.hyp}, {"ref", a.ref}, {"pairs", std::to_string(hyps.size())}});
  const mf::ScoredCorpus scored = mf::score_corpus(hyps, refs, metrics, {a.lowercase});

  ojson doc;
  doc["pairs"] = hyps.size();
  doc["lowercase"] = a.lowercase;
  doc["aggregate"] = ojson::object();
  for (std::size_t m = 0; m < metrics.size(); ++m) doc["aggregate"][std::string(mf::to_string(metrics[m]))] = scored.aggregate[m];
  doc["per_pair"] = ojson::array();
  for (const auto& row : scored.per_pair) {
    ojson r = ojson::object();
    for (std::size_t m = 0; m < metrics.size(); ++m) r[std::string(mf::to_string(metrics[m]))] = row[m];
    doc["per_pair"].push_back(std::move(r));
  }
  if (!a.out.empty()) {
    write_text(a.out, doc.dump(2) + "\n");
    log("wrote", {{"path", a.out}});
  } else if (g.json()) {
    std::cout << doc.dump(2) << '\n';
  } else {
    for (std::size_t m = 0; m < metrics.size(); ++m) {
      std::cout << mf::to_string(metrics[m]) << ' ' << num(scored.aggregate[m]) << '\n';
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepArgs {
  std::string plan, base, out;
  std::vector<std::string> tasks;
};

mf::ReportFormat format_for_path(const std::string& path) {
  auto ends = [&](const char* ext) {
    const std::string e(ext);
    return path.size() >= e.size() && path.compare(path.size() - e.size(), e.size(), e) == 0;
  };
  if (ends(".csv")) return mf::ReportFormat::Csv;
  if (ends(".json")) return mf::ReportFormat::Json;
  if (ends(".md")) return mf::ReportFormat::Markdown;
  throw UsageError("--out must end in .csv, .json or .md: " + path);
}

int run_sweep(const SweepArgs& a, const Globals& g) {
  Progress log(g, "sweep");
  if (a.tasks.size() != 2) throw UsageError("--task must be given exactly twice (got " + std::to_string(a.tasks.size()) + ")");
  const mf::ReportFormat fmt =
      a.out.empty() ? (g.json() ? mf::ReportFormat::Json : mf::ReportFormat::Markdown) : format_for_path(a.out);
  mf::SweepPlan plan = mf::load_plan(a.plan);
  if (auto s = g.seed_override()) plan.seed = *s;
  const mf::TensorMap base = mf::read_checkpoint(a.base);
  const mf::TensorMap tg = mf::read_checkpoint(a.tasks[0]);
  const mf::TensorMap ts = mf::read_checkpoint(a.tasks[1]);
  log("read", {{"base", a.base}, {"g", a.tasks[0]}, {"s", a.tasks[1]}});

  // Without declared baselines the synthetic retention scorer compares
  // against a specialist's own score of 1.
  const std::string id_g = plan.task_ids[0], id_s = plan.task_ids[1];
  if (plan.baseline.empty()) plan.baseline = {{"cos_" + id_g, 1.0}, {"cos_" + id_s, 1.0}};
  const mf::Scorer scorer = mf::retention_scorer(base, {{id_g, &tg}, {id_s, &ts}});
  log("plan", {{"methods", std::to_string(plan.methods.size())},
               {"ratios", std::to_string(plan.ratios.size())},
               {"densities", std::to_string(plan.densities.size())},
               {"seed", std::to_string(plan.seed)}});
  const mf::SweepReport report = mf::run_sweep(plan, base, tg, ts, scorer);
  const std::string text = mf::format_report(report, fmt);
  if (a.out.empty()) {
    std::cout << text;
  } else {
    write_text(a.out, text);
    log("wrote", {{"path", a.out}, {"rows", std::to_string(report.rows.size())}});
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Checkpoint merging and weight-space diagnostics", "mergeforge"};
  app.set_version_flag("--version", std::string("mergeforge ") + MERGEFORGE_VERSION);
  app.require_subcommand(1);

  Globals g;
  g.seed_opt = app.add_option("--seed", g.seed, "Seed for every random choice (env MERGEFORGE_SEED)")
                   ->envname("MERGEFORGE_SEED");
  app.add_option("--threads", g.threads, "Worker thread cap (default: all cores)")
      ->check(CLI::PositiveNumber);
  app.add_flag("--quiet", g.quiet, "Suppress progress lines on stderr");
  app.add_option("--format", g.format, "Output format for reports on stdout")
      ->check(CLI::IsMember({"text", "json"}));

  InspectArgs inspect;
  auto* c_inspect = app.add_subcommand("inspect", "Validate a checkpoint header and summarize it");
  c_inspect->add_option("path", inspect.path, "Checkpoint file")->required();

  DiffArgs diff;
  auto* c_diff = app.add_subcommand("diff", "Write the task vector sft - base");
  c_diff->add_option("--base", diff.base)->required();
  c_diff->add_option("--sft", diff.sft)->required();
  c_diff->add_option("--out", diff.out)->required();

  MergeArgs merge;
  auto* c_merge = app.add_subcommand("merge", "Merge task checkpoints according to a recipe");
  c_merge->add_option("--recipe", merge.recipe, "Recipe JSON")->required();
  c_merge->add_option("--base", merge.base)->required();
  c_merge->add_option("--task", merge.tasks, "Task checkpoint or task vector, in recipe order")->required();
  c_merge->add_option("--out", merge.out)->required();

  DiagnoseArgs diag;
  auto* c_diag = app.add_subcommand("diagnose", "Per-layer L2 and correlation diagnostics with a verdict");
  c_diag->add_option("--base", diag.base)->required();
  c_diag->add_option("--sft-a", diag.sft_a)->required();
  c_diag->add_option("--sft-b", diag.sft_b)->required();
  c_diag->add_option("--threshold", diag.threshold)->check(CLI::Range(-1.0, 1.0));
  c_diag->add_option("--weighting", diag.weighting)->check(CLI::IsMember({"uniform", "params"}));
  c_diag->add_option("--layer-pattern", diag.layer_pattern, "Regex with one capture group for the layer index");
  c_diag->add_option("--label-a", diag.label_a);
  c_diag->add_option("--label-b", diag.label_b);
  c_diag->add_option("--report", diag.report, "JSON report path");
  c_diag->add_option("--table", diag.table, "CSV table path");

  MixArgs mix;
  auto* c_mix = app.add_subcommand("mix", "Subsample and shuffle JSON-lines datasets together");
  c_mix->add_option("--in", mix.inputs)->required();
  c_mix->add_option("--ratio", mix.ratios, "Keep ratio per --in, in order");
  c_mix->add_option("--out", mix.out);

  ScoreArgs score;
  auto* c_score = app.add_subcommand("score", "Score line-aligned hypotheses against references");
  c_score->add_option("--hyp", score.hyp)->required();
  c_score->add_option("--ref", score.ref)->required();
  c_score->add_option("--metrics", score.metrics, "Comma-separated: bleu4,chrfpp,rougel");
  c_score->add_flag("--lowercase", score.lowercase);
  c_score->add_option("--out", score.out, "JSON output path");

  SweepArgs sweep;
  auto* c_sweep = app.add_subcommand("sweep", "Merge and score every point of a weight-ratio grid");
  c_sweep->add_option("--plan", sweep.plan)->required();
  c_sweep->add_option("--base", sweep.base)->required();
  c_sweep->add_option("--task", sweep.tasks)->required();
  c_sweep->add_option("--out", sweep.out, "Report path (.csv, .json or .md)");

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    std::cerr << "run 'mergeforge --help' for usage\n";
    return 2;
  }

  mf::set_max_threads(g.threads);
  try {
    if (c_inspect->parsed()) return run_inspect(inspect, g);
    if (c_diff->parsed()) return run_diff(diff, g);
    if (c_merge->parsed()) return run_merge(merge, g);
    if (c_diag->parsed()) return run_diagnose(diag, g);
    if (c_mix->parsed()) return run_mix(mix, g);
    if (c_score->parsed()) return run_score(score, g);
    if (c_sweep->parsed()) return run_sweep(sweep, g);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const mf::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
