#include <gtest/gtest.h>

#include <locale>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include "steinlab/fixtures.hpp"
#include "steinlab/report.hpp"

using namespace steinlab;

namespace {

Trajectory tiny_run() {
  ExperimentConfig cfg = gaussian_fixture(EstimatorKind::sds);
  cfg.steps = 20;
  cfg.probe_every = 10;
  cfg.probe_draws = 50;
  return run_distillation(cfg);
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(FormatNumber, ShortestRoundTrip) {
  EXPECT_EQ(format_number(0.1), "0.1");
  EXPECT_EQ(format_number(-2.0), "-2");
  EXPECT_EQ(format_number(1e-300), "1e-300");
  EXPECT_EQ(std::stod(format_number(1.0 / 3.0)), 1.0 / 3.0);
  EXPECT_EQ(format_number(std::numeric_limits<double>::infinity()), "inf");
  EXPECT_EQ(format_number(-std::numeric_limits<double>::infinity()), "-inf");
  EXPECT_EQ(format_number(std::nan("")), "nan");
}

TEST(FormatNumber, IgnoresGlobalLocale) {
  struct CommaDecimal : std::numpunct<char> {
    char do_decimal_point() const override { return ','; }
  };
  const std::locale previous = std::locale::global(std::locale(std::locale::classic(), new CommaDecimal));
  EXPECT_EQ(format_number(2.5), "2.5");
  std::locale::global(previous);
}

TEST(TrajectoryCsv, HeaderAndRows) {
  const Trajectory tr = tiny_run();
  std::ostringstream out;
  write_trajectory_csv(out, tr);
  const auto l = lines(out.str());
  ASSERT_EQ(l.size(), 4u);
  EXPECT_EQ(l[0], "step,kl,var_total,var_max,mean_norm");
  EXPECT_EQ(l[1].rfind("0,", 0), 0u);
  EXPECT_EQ(l[3].rfind("20,", 0), 0u);
  EXPECT_EQ(std::count(l[2].begin(), l[2].end(), ','), 4);
}

TEST(TrajectoryCsv, DivergenceRecordHasEmptyVarianceColumns) {
  Trajectory tr = tiny_run();
  TrajectoryRecord r;
  r.step = 21;
  r.kl = std::numeric_limits<double>::infinity();
  tr.records.push_back(r);
  std::ostringstream out;
  write_trajectory_csv(out, tr);
  EXPECT_EQ(lines(out.str()).back(), "21,inf,,,");
}

TEST(ComparisonCsv, HeadersAndRowCounts) {
  ExperimentConfig a = gaussian_fixture(EstimatorKind::sds);
  ExperimentConfig b = gaussian_fixture(EstimatorKind::ssd);
  for (auto* c : {&a, &b}) {
    c->steps = 30;
    c->probe_every = 10;
    c->probe_draws = 20;
  }
  const ComparisonTable table = compare_estimators({a, b}, {1, 2});
  std::ostringstream runs, summary, curve;
  write_runs_csv(runs, table);
  write_summary_csv(summary, table);
  write_curve_csv(curve, table.summaries[0].curve);
  const auto r = lines(runs.str());
  const auto s = lines(summary.str());
  const auto c = lines(curve.str());
  EXPECT_EQ(r[0], kRunsCsvHeader);
  EXPECT_EQ(r.size(), 5u);
  EXPECT_EQ(r[1].rfind("gaussian_sds,sds,1,", 0), 0u);
  EXPECT_EQ(s[0], kSummaryCsvHeader);
  EXPECT_EQ(s.size(), 3u);
  EXPECT_EQ(c[0], kTrajectoryCsvHeader);
  EXPECT_EQ(c.size(), 5u);
}

TEST(Svg, SelfContainedWithOneSeriesEach) {
  std::vector<ChartSeries> series{{"alpha", {0, 1, 2}, {1.0, 0.5, 0.25}},
                                  {"beta", {0, 1, 2}, {2.0, std::nan(""), 1.0}}};
  const std::string svg = render_line_chart(series, {.title = "t", .x_label = "step", .y_label = "kl"});
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("data-series=\"alpha\""), std::string::npos);
  EXPECT_NE(svg.find("data-series=\"beta\""), std::string::npos);
  EXPECT_EQ(svg.find("href"), std::string::npos);
  EXPECT_EQ(svg.find("<script"), std::string::npos);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
}
