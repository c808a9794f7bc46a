#pragma once

#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "steinlab/harness.hpp"

namespace steinlab {

/// Shortest round-trip decimal, independent of the global locale. Non-finite
/// values print as "inf", "-inf" or "nan".
std::string format_number(double value);

inline constexpr std::string_view kTrajectoryCsvHeader = "step,kl,var_total,var_max,mean_norm";
inline constexpr std::string_view kRunsCsvHeader =
    "name,estimator,seed,steps_to_threshold,final_kl,mean_total_variance,diverged";
inline constexpr std::string_view kSummaryCsvHeader =
    "name,estimator,runs,reached,steps_to_threshold_mean,steps_to_threshold_sd,final_kl_mean,"
    "final_kl_sd,mean_total_variance_mean,mean_total_variance_sd,kl_threshold";

/// One line per record. The variance columns are empty for a record without a
/// probe (the divergence record).
void write_trajectory_csv(std::ostream& out, const Trajectory& trajectory);

/// Seed-averaged curve with the trajectory header.
void write_curve_csv(std::ostream& out, const std::vector<CurvePoint>& curve);

/// One line per (config, seed); steps_to_threshold is empty when not reached.
void write_runs_csv(std::ostream& out, const ComparisonTable& table);

/// One line per config with mean and sample SD of each aggregate.
void write_summary_csv(std::ostream& out, const ComparisonTable& table);

struct ChartSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct ChartOptions {
  std::string title;
  std::string x_label;
  std::string y_label;
  double width = 720.0;
  double height = 420.0;
};

/// Self-contained SVG line chart, one polyline per series plus a legend.
/// Non-finite points are skipped.
std::string render_line_chart(const std::vector<ChartSeries>& series, const ChartOptions& options);

/// Chart of one CurvePoint field against step, one series per summary.
enum class CurveMetric { kl, var_total };
std::string render_comparison_chart(const ComparisonTable& table, CurveMetric metric);

}  // namespace steinlab
