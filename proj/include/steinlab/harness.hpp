#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "steinlab/baseline.hpp"
#include "steinlab/estimators.hpp"
#include "steinlab/renderer.hpp"
#include "steinlab/targets.hpp"

namespace steinlab {

enum class EstimatorKind { sds, vsd_analytic, vsd_surrogate, ssd };

std::string_view to_string(EstimatorKind kind);
std::optional<EstimatorKind> parse_estimator_kind(std::string_view name);

/// Interleaved score-matching schedule for the vsd_surrogate estimator.
struct SurrogateSettings {
  std::size_t bucket_count = 8;
  long fit_every = 1;
  long fit_steps = 1;
  long batch = 16;
  double lr = 1e-2;

  bool operator==(const SurrogateSettings&) const = default;
};

struct ExperimentConfig {
  ExperimentConfig(GaussianMixture target, Renderer renderer, NoiseSchedule schedule);

  std::string name;
  GaussianMixture target;
  Renderer renderer;
  NoiseSchedule schedule;
  EstimatorKind estimator = EstimatorKind::sds;
  std::optional<BaselineFunction> baseline;
  Eigen::VectorXd theta_init;  // empty means zeros
  long steps = 0;
  double lr_theta = 1e-2;
  double lr_mu = 1e-3;
  long mu_update_every = 1;
  long mu_batch = 16;
  long probe_every = 100;
  long probe_draws = 1000;
  std::uint64_t seed = 0;
  bool fold_alpha = true;
  long kl_samples = 4096;
  std::optional<double> kl_threshold;
  SurrogateSettings surrogate;

  /// Throws ConfigError naming the offending field.
  void validate() const;

  /// Problem with `fold_alpha` applied to the schedule.
  Problem problem() const;
  Eigen::VectorXd initial_theta() const;
};

/// Estimator-specific mutable state carried through a run.
struct EstimatorState {
  ControlWeights mu;
  std::optional<SurrogateScoreModel> surrogate;
};

EstimatorState initial_state(const ExperimentConfig& config);

GradientSample estimator_sample(const ExperimentConfig& config, const Problem& problem,
                                const EstimatorState& state, const Eigen::VectorXd& theta,
                                const DrawContext& ctx);

// ---------------------------------------------------------------------------
// KL metric

enum class KlMode { closed_form, monte_carlo };

/// Number of evenly spaced t nodes on [t_min, t_max] used by kl_metric.
inline constexpr int kKlGridPoints = 64;

std::vector<double> kl_time_grid(const NoiseSchedule& schedule);

struct KlEstimate {
  double value = 0.0;
  double standard_error = 0.0;  // 0 for closed_form
};

/// KL(N(mq, diag vq) || N(mp, diag vp)).
double gaussian_kl_diagonal(const Eigen::VectorXd& mean_q, const Eigen::VectorXd& var_q,
                            const Eigen::VectorXd& mean_p, const Eigen::VectorXd& var_p);

/// True when the closed form applies: single-component target and a linear
/// (or identity) renderer.
bool closed_form_kl_available(const Problem& problem);

/// Weight-averaged component covariance S of the target.
Eigen::VectorXd matched_clean_variance(const GaussianMixture& gmm);

/// Grid mean of KL(N(0, sigma_t^2 I) || N(0, alpha_t^2 S + sigma_t^2 I)): the
/// part of the KL that comes from q_t being narrower than p_t. It does not
/// depend on theta.
double kl_spread_offset(const Problem& problem);

/// E_{t,c} KL(q_t(. | theta, c) || p_t) - kl_spread_offset, with
/// q_t = N(alpha_t g(theta, c), sigma_t^2 I), t on the kKlGridPoints grid and c
/// uniform. Removing the constant offset makes a single-Gaussian target read 0
/// at g = m without changing any gradient.
/// closed_form sums exact Gaussian KLs (throws UnsupportedModeError for
/// mixtures); monte_carlo averages log q_t - log p_t over n draws with t
/// cycling through the same grid.
KlEstimate kl_metric(const Eigen::VectorXd& theta, const Problem& problem, KlMode mode, long n,
                     std::uint64_t seed);

/// Closed-form expectation of every estimator's delta on a single-Gaussian
/// target with a linear renderer:
///   E[delta] = -grad_theta E_{t ~ U, c}[ lambda(t) KL_t(theta) ],
///   lambda(t) = w(t) sigma_t / alpha_t,
/// where w(t) is the schedule's estimator weight. The t-integral uses
/// composite Simpson with `intervals` panels.
Eigen::VectorXd expected_update_closed_form(const Eigen::VectorXd& theta, const Problem& problem,
                                            int intervals = 4096);

// ---------------------------------------------------------------------------
// Variance probes and runs

struct VarianceReport {
  long step = 0;
  Eigen::VectorXd per_coordinate_variance;
  double total_variance = 0.0;
  double mean_norm = 0.0;

  double max_variance() const;
};

/// Unbiased per-coordinate variance and mean norm over the given draws.
VarianceReport variance_probe(const ExperimentConfig& config, const EstimatorState& state,
                              const Eigen::VectorXd& theta, std::span<const DrawContext> contexts,
                              long step);

/// Freezes theta and draws config.probe_draws fresh contexts from `seed`.
VarianceReport variance_probe(const ExperimentConfig& config, const EstimatorState& state,
                              const Eigen::VectorXd& theta, long step, std::uint64_t seed);

struct TrajectoryRecord {
  long step = 0;
  Eigen::VectorXd theta;
  double kl = 0.0;
  std::optional<VarianceReport> variance;
  Eigen::VectorXd mu;  // empty unless the estimator is ssd
};

enum class RunStatus { ok, diverged };

struct Trajectory {
  std::vector<TrajectoryRecord> records;
  RunStatus status = RunStatus::ok;
  long steps_completed = 0;
  Eigen::VectorXd final_theta;
  Eigen::VectorXd final_mu;
};

/// ||theta|| above this (or a non-finite theta) aborts a run as diverged.
inline constexpr double kDivergenceNorm = 1e6;

/// KL value reported for each record: closed form when available, otherwise
/// Monte Carlo with config.kl_samples draws and a per-run fixed seed.
double record_kl(const ExperimentConfig& config, const Problem& problem,
                 const Eigen::VectorXd& theta);

/// Alternating SGD loop theta <- theta + lr_theta * delta, with mu updates
/// (ssd) or surrogate fits (vsd_surrogate) interleaved. Deterministic in
/// config.seed.
Trajectory run_distillation(const ExperimentConfig& config);

/// First recorded step with kl <= threshold.
std::optional<long> steps_to_threshold(const Trajectory& trajectory, double threshold);

// ---------------------------------------------------------------------------
// Comparisons

struct ComparisonRow {
  std::size_t config_index = 0;
  std::string name;
  EstimatorKind estimator = EstimatorKind::sds;
  std::uint64_t seed = 0;
  std::optional<long> steps_to_threshold;
  double final_kl = 0.0;
  double mean_total_variance = 0.0;
  bool diverged = false;
};

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;
  long count = 0;
};

MeanSd mean_sd(std::span<const double> values);

struct CurvePoint {
  long step = 0;
  double kl = 0.0;
  double var_total = 0.0;
  double var_max = 0.0;
  double mean_norm = 0.0;
};

struct ComparisonSummary {
  std::size_t config_index = 0;
  std::string name;
  EstimatorKind estimator = EstimatorKind::sds;
  MeanSd steps_to_threshold;  // over runs that reached the threshold
  long reached = 0;
  MeanSd final_kl;
  MeanSd mean_total_variance;
  std::vector<CurvePoint> curve;  // seed-averaged, steps common to all runs
};

struct ComparisonTable {
  double kl_threshold = 0.0;
  std::vector<ComparisonRow> rows;
  std::vector<ComparisonSummary> summaries;
  std::vector<Trajectory> trajectories;  // parallel to rows
};

struct CompareOptions {
  std::size_t jobs = 1;
  std::optional<double> kl_threshold;
  double mixture_percentile = 0.2;
  double gaussian_threshold = 0.05;
};

/// True when configs share target, renderer and schedule.
bool same_fixture(const ExperimentConfig& a, const ExperimentConfig& b);

/// Runs every (config, seed) pair and aggregates steps-to-threshold, final KL
/// and mean total variance. Threshold precedence: options.kl_threshold, the
/// first config's kl_threshold, gaussian_threshold for single-component
/// targets, else the mixture_percentile quantile of all recorded KL values.
/// Throws PreconditionError when configs do not share a fixture.
ComparisonTable compare_estimators(const std::vector<ExperimentConfig>& configs,
                                   const std::vector<std::uint64_t>& seeds,
                                   const CompareOptions& options = {});

}  // namespace steinlab
