#include "steinlab/report.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

namespace steinlab {

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  std::array<char, 64> buf{};
  const auto result = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return std::string(buf.data(), result.ptr);
}

namespace {

void write_point(std::ostream& out, long step, double kl, const VarianceReport* variance) {
  out << step << ',' << format_number(kl) << ',';
  if (variance) {
    out << format_number(variance->total_variance) << ','
        << format_number(variance->max_variance()) << ','
        << format_number(variance->mean_norm);
  } else {
    out << ",,";
  }
  out << '\n';
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string quoted = "\"";
  for (char ch : s) {
    if (ch == '"') quoted += '"';
    quoted += ch;
  }
  return quoted + "\"";
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

/// Fixed-point formatting for SVG coordinates and tick labels.
std::string fixed(double v, int precision = 2) {
  std::array<char, 64> buf{};
  const auto result =
      std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::fixed, precision);
  return std::string(buf.data(), result.ptr);
}

std::string tick_label(double v) {
  std::array<char, 64> buf{};
  const auto result =
      std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::general, 4);
  return std::string(buf.data(), result.ptr);
}

/// Roughly five round-numbered ticks covering [lo, hi].
std::vector<double> nice_ticks(double lo, double hi) {
  const double span = hi - lo;
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    step = m * mag;
    if (step >= raw) break;
  }
  std::vector<double> ticks;
  for (double v = std::ceil(lo / step) * step; v <= hi + 1e-9 * span; v += step) {
    ticks.push_back(std::abs(v) < 1e-12 * span ? 0.0 : v);
  }
  return ticks;
}

constexpr std::array<const char*, 8> kPalette = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                                 "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

}  // namespace

void write_trajectory_csv(std::ostream& out, const Trajectory& trajectory) {
  out << kTrajectoryCsvHeader << '\n';
  for (const auto& r : trajectory.records) {
    write_point(out, r.step, r.kl, r.variance ? &*r.variance : nullptr);
  }
}

void write_curve_csv(std::ostream& out, const std::vector<CurvePoint>& curve) {
  out << kTrajectoryCsvHeader << '\n';
  for (const auto& p : curve) {
    out << p.step << ',' << format_number(p.kl) << ',' << format_number(p.var_total) << ','
        << format_number(p.var_max) << ',' << format_number(p.mean_norm) << '\n';
  }
}

void write_runs_csv(std::ostream& out, const ComparisonTable& table) {
  out << kRunsCsvHeader << '\n';
  for (const auto& row : table.rows) {
    out << csv_field(row.name) << ',' << to_string(row.estimator) << ',' << row.seed << ',';
    if (row.steps_to_threshold) out << *row.steps_to_threshold;
    out << ',' << format_number(row.final_kl) << ',' << format_number(row.mean_total_variance)
        << ',' << (row.diverged ? 1 : 0) << '\n';
  }
}

void write_summary_csv(std::ostream& out, const ComparisonTable& table) {
  out << kSummaryCsvHeader << '\n';
  for (const auto& s : table.summaries) {
    out << csv_field(s.name) << ',' << to_string(s.estimator) << ',' << s.final_kl.count << ','
        << s.reached << ',';
    if (s.reached > 0) out << format_number(s.steps_to_threshold.mean);
    out << ',';
    if (s.reached > 1) out << format_number(s.steps_to_threshold.sd);
    out << ',' << format_number(s.final_kl.mean) << ',' << format_number(s.final_kl.sd) << ','
        << format_number(s.mean_total_variance.mean) << ','
        << format_number(s.mean_total_variance.sd) << ',' << format_number(table.kl_threshold)
        << '\n';
  }
}

std::string render_line_chart(const std::vector<ChartSeries>& series, const ChartOptions& options) {
  const double left = 80.0, right = 170.0, top = 40.0, bottom = 55.0;
  const double plot_w = options.width - left - right;
  const double plot_h = options.height - top - bottom;

  double x_lo = std::numeric_limits<double>::infinity(), x_hi = -x_lo;
  double y_lo = x_lo, y_hi = -x_lo;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x_lo = std::min(x_lo, s.x[i]);
      x_hi = std::max(x_hi, s.x[i]);
      y_lo = std::min(y_lo, s.y[i]);
      y_hi = std::max(y_hi, s.y[i]);
    }
  }
  if (!std::isfinite(x_lo)) x_lo = 0.0, x_hi = 1.0, y_lo = 0.0, y_hi = 1.0;
  if (x_hi == x_lo) x_hi = x_lo + 1.0;
  if (y_hi == y_lo) {
    y_lo -= 0.5;
    y_hi += 0.5;
  }
  const double pad = 0.05 * (y_hi - y_lo);
  y_lo -= pad;
  y_hi += pad;
  auto px = [&](double x) { return left + (x - x_lo) / (x_hi - x_lo) * plot_w; };
  auto py = [&](double y) { return top + (y_hi - y) / (y_hi - y_lo) * plot_h; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fixed(options.width, 0)
      << "\" height=\"" << fixed(options.height, 0) << "\" viewBox=\"0 0 "
      << fixed(options.width, 0) << ' ' << fixed(options.height, 0)
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << fixed(left + plot_w / 2) << "\" y=\"22\" text-anchor=\"middle\" "
      << "font-size=\"15\">" << xml_escape(options.title) << "</text>\n";

  for (double t : nice_ticks(y_lo, y_hi)) {
    svg << "<line x1=\"" << fixed(left) << "\" x2=\"" << fixed(left + plot_w) << "\" y1=\""
        << fixed(py(t)) << "\" y2=\"" << fixed(py(t)) << "\" stroke=\"#e0e0e0\"/>\n";
    svg << "<text x=\"" << fixed(left - 6) << "\" y=\"" << fixed(py(t) + 4)
        << "\" text-anchor=\"end\">" << tick_label(t) << "</text>\n";
  }
  for (double t : nice_ticks(x_lo, x_hi)) {
    svg << "<line x1=\"" << fixed(px(t)) << "\" x2=\"" << fixed(px(t)) << "\" y1=\"" << fixed(top)
        << "\" y2=\"" << fixed(top + plot_h) << "\" stroke=\"#f0f0f0\"/>\n";
    svg << "<text x=\"" << fixed(px(t)) << "\" y=\"" << fixed(top + plot_h + 16)
        << "\" text-anchor=\"middle\">" << tick_label(t) << "</text>\n";
  }
  svg << "<rect x=\"" << fixed(left) << "\" y=\"" << fixed(top) << "\" width=\"" << fixed(plot_w)
      << "\" height=\"" << fixed(plot_h) << "\" fill=\"none\" stroke=\"#444\"/>\n";
  svg << "<text x=\"" << fixed(left + plot_w / 2) << "\" y=\"" << fixed(options.height - 12)
      << "\" text-anchor=\"middle\">" << xml_escape(options.x_label) << "</text>\n";
  svg << "<text transform=\"translate(18," << fixed(top + plot_h / 2)
      << ") rotate(-90)\" text-anchor=\"middle\">" << xml_escape(options.y_label) << "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % kPalette.size()];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\" "
        << "data-series=\"" << xml_escape(s.name) << "\" points=\"";
    bool first = true;
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      if (!first) svg << ' ';
      svg << fixed(px(s.x[i])) << ',' << fixed(py(s.y[i]));
      first = false;
    }
    svg << "\"/>\n";
    const double ly = top + 14.0 + 18.0 * static_cast<double>(k);
    svg << "<line x1=\"" << fixed(left + plot_w + 12) << "\" x2=\"" << fixed(left + plot_w + 36)
        << "\" y1=\"" << fixed(ly) << "\" y2=\"" << fixed(ly) << "\" stroke=\"" << color
        << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << fixed(left + plot_w + 42) << "\" y=\"" << fixed(ly + 4) << "\">"
        << xml_escape(s.name) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string render_comparison_chart(const ComparisonTable& table, CurveMetric metric) {
  std::vector<ChartSeries> series;
  for (const auto& s : table.summaries) {
    ChartSeries cs;
    cs.name = s.name.empty() ? std::string(to_string(s.estimator)) : s.name;
    for (const auto& p : s.curve) {
      cs.x.push_back(static_cast<double>(p.step));
      cs.y.push_back(metric == CurveMetric::kl ? p.kl : p.var_total);
    }
    series.push_back(std::move(cs));
  }
  ChartOptions options;
  options.x_label = "step";
  if (metric == CurveMetric::kl) {
    options.title = "KL vs step (seed mean)";
    options.y_label = "kl";
  } else {
    options.title = "Total variance vs step (seed mean)";
    options.y_label = "var_total";
  }
  return render_line_chart(series, options);
}

}  // namespace steinlab
