#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace steinlab {

enum class CheckLevel { fast, full };

/// Monte Carlo draws per statistical invariant: 10^3 (fast) or 10^5 (full).
long check_draws(CheckLevel level);

struct CheckOptions {
  CheckLevel level = CheckLevel::fast;
  std::uint64_t seed = 20240607;
  /// Test hook: flips the sign of the epsilon * phi term inside the SSD
  /// control variate, which must make the zero-mean invariants fail.
  bool inject_stein_sign_fault = false;
};

struct InvariantResult {
  std::string module;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct CheckReport {
  std::vector<InvariantResult> results;
  double seconds = 0.0;

  bool all_passed() const;
};

/// Runs the invariant suites of every module in a fixed order. `on_result`
/// sees each result as soon as it is computed.
CheckReport run_checks(const CheckOptions& options,
                       const std::function<void(const InvariantResult&)>& on_result = {});

/// Sample mean and per-coordinate standard error of the rows of `samples`.
struct SampleMoments {
  Eigen::VectorXd mean;
  Eigen::VectorXd standard_error;
};

/// Streaming accumulator for SampleMoments.
class MomentAccumulator {
 public:
  explicit MomentAccumulator(Eigen::Index dim);
  void add(const Eigen::VectorXd& x);
  long count() const { return n_; }
  SampleMoments moments() const;

 private:
  long n_ = 0;
  Eigen::VectorXd mean_;
  Eigen::VectorXd m2_;
};

/// max_i |mean_i - expected_i| / se_i (inf when an se_i is 0 and the gap is not).
double max_standardized_gap(const SampleMoments& m, const Eigen::VectorXd& expected);

}  // namespace steinlab
