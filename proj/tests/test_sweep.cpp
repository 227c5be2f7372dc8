#include <gtest/gtest.h>

#include <random>

#include "mergeforge/sweep.hpp"
#include "support.hpp"

using namespace mergeforge;

TEST(Percent, SignedTwoDecimals) {
  EXPECT_EQ(format_pct(percent_change(0.768, 0.756)), "+1.59%");
  EXPECT_EQ(format_pct(percent_change(0.902, 0.909)), "-0.77%");
  EXPECT_EQ(format_pct(percent_change(0.707, 0.707)), "0.00%");
  EXPECT_EQ(format_pct(-0.001), "0.00%");
  EXPECT_EQ(format_pct(-12.87), "-12.87%");
}

TEST(Grid, StandardRatios) {
  const auto grid = standard_ratio_grid();
  ASSERT_EQ(grid.size(), 9u);
  EXPECT_DOUBLE_EQ(grid.front().g, 0.1);
  EXPECT_DOUBLE_EQ(grid.front().s, 0.9);
  EXPECT_DOUBLE_EQ(grid[4].g, 0.5);
  EXPECT_DOUBLE_EQ(grid.back().g, 0.9);
  EXPECT_EQ(format_ratio(grid[2]), "0.3/0.7");
}

TEST(Report, AveragesAndBestRow) {
  SweepReport report;
  report.baseline = {{"a", 0.5}, {"b", 2.0}};
  SweepRow r1, r2, r3;
  r1.method = r2.method = MergeMethod::Ties;
  r3.method = MergeMethod::Della;
  r1.scores = {0.55, 2.0};  // +10%, 0%
  r2.scores = {0.5, 2.2};   // 0%, +10%
  r3.scores = {0.45, 1.8};  // -10%, -10%
  report.rows = {r1, r2, r3};
  finalize_report(report);
  EXPECT_NEAR(report.rows[0].avg_pct_change, 5.0, 1e-12);
  EXPECT_NEAR(report.rows[1].avg_pct_change, 5.0, 1e-12);
  EXPECT_TRUE(report.rows[0].best);  // tie goes to the earlier row
  EXPECT_FALSE(report.rows[1].best);
  EXPECT_TRUE(report.rows[2].best);  // the only DELLA row
}

TEST(Report, Formats) {
  SweepReport report;
  report.baseline = {{"humaneval", 0.756}};
  SweepRow row;
  row.method = MergeMethod::Linear;
  row.ratio = {0.5, 0.5};
  row.density = 1.0;
  row.scores = {0.768};
  report.rows = {row};
  finalize_report(report);
  EXPECT_EQ(format_report(report, ReportFormat::Markdown),
            "| Method | Weight | Density | humaneval | AVG % |\n"
            "|---|---|---|---|---|\n"
            "| **LINEAR** | **0.5/0.5** | **1** | **0.768(+1.59%)** | **+1.59%** |\n");
  EXPECT_EQ(format_report(report, ReportFormat::Csv),
            "method,weight_g,weight_s,density,humaneval,humaneval_pct,avg_pct,best\n"
            "LINEAR,0.5,0.5,1,0.768,1.59,1.59,1\n");
  const auto doc = nlohmann::json::parse(format_report(report, ReportFormat::Json));
  EXPECT_EQ(doc["rows"][0]["method"], "LINEAR");
  EXPECT_DOUBLE_EQ(doc["rows"][0]["scores"]["humaneval"].get<double>(), 0.768);
  EXPECT_TRUE(doc["rows"][0]["best"].get<bool>());
}

TEST(Plan, Validation) {
  SweepPlan plan;
  EXPECT_THROW(validate_plan(plan), Error);
  plan.methods = {MergeMethod::Ties};
  plan.ratios = standard_ratio_grid();
  EXPECT_NO_THROW(validate_plan(plan));
  plan.baseline = {{"m", 0.0}};
  EXPECT_THROW(validate_plan(plan), Error);
  plan.baseline.clear();
  plan.ratios = {{0.0, 0.0}};
  EXPECT_THROW(validate_plan(plan), Error);
}

class SweepRun : public ::testing::Test {
 protected:
  void SetUp() override {
    std::mt19937_64 rng(42);
    const TensorMap layout = mftest::toy_layout(2, 6);
    base = mftest::random_like(rng, layout, -1, 1);
    g = mftest::random_like(rng, layout, -1, 1);
    s = mftest::random_like(rng, layout, -1, 1);
    plan.methods = {MergeMethod::Linear, MergeMethod::Ties, MergeMethod::DareTies, MergeMethod::Della};
    plan.ratios = standard_ratio_grid();
    plan.densities = {0.5};
    plan.spread = 0.2;
    plan.seed = 3;
    plan.baseline = {{"cos_g", 1.0}, {"cos_s", 1.0}};
  }
  TensorMap base, g, s;
  SweepPlan plan;
};

TEST_F(SweepRun, GridOrderAndDeterminism) {
  const Scorer scorer = retention_scorer(base, {{"g", &g}, {"s", &s}});
  const SweepReport a = run_sweep(plan, base, g, s, scorer);
  ASSERT_EQ(a.rows.size(), 36u);
  EXPECT_EQ(a.rows[0].method, MergeMethod::Linear);
  EXPECT_EQ(a.rows[9].method, MergeMethod::Ties);
  EXPECT_DOUBLE_EQ(a.rows[10].ratio.g, 0.2);
  std::size_t best = 0;
  for (const auto& r : a.rows) best += r.best;
  EXPECT_EQ(best, 4u);
  const SweepReport b = run_sweep(plan, base, g, s, scorer);
  for (ReportFormat f : {ReportFormat::Csv, ReportFormat::Json, ReportFormat::Markdown}) {
    EXPECT_EQ(format_report(a, f), format_report(b, f));
  }
}

TEST_F(SweepRun, RetentionFavoursTheHeavierTask) {
  plan.methods = {MergeMethod::Linear};
  // LINEAR merges checkpoints, so its delta is w_g * dg + w_s * ds when the
  // weights sum to 1.
  const SweepReport r = run_sweep(plan, base, g, s, retention_scorer(base, {{"g", &g}, {"s", &s}}));
  EXPECT_GT(r.rows.back().scores[0], r.rows.front().scores[0]);
  EXPECT_LT(r.rows.back().scores[1], r.rows.front().scores[1]);
}

TEST_F(SweepRun, ScorerErrorsNameTheGridPoint) {
  const Scorer missing = [](const TensorMap&) { return std::map<std::string, double>{{"cos_g", 1.0}}; };
  try {
    run_sweep(plan, base, g, s, missing);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ScorerFailure);
    EXPECT_NE(std::string(e.what()).find("LINEAR 0.1/0.9"), std::string::npos);
  }
  const Scorer throws = [](const TensorMap&) -> std::map<std::string, double> { throw std::runtime_error("boom"); };
  try {
    run_sweep(plan, base, g, s, throws);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ScorerFailure);
  }
}
