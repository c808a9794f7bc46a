#include "steinlab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <thread>

#include "steinlab/errors.hpp"
#include "steinlab/stein.hpp"

namespace steinlab {
namespace {

// Stream tags for derive_seed. Draws, mu batches, surrogate fits, probes and
// the KL evaluation each get their own stream so that estimators sharing a
// seed see the same (t, c, epsilon) sequence.
constexpr std::uint64_t kDrawStream = 0x6472617721ULL;
constexpr std::uint64_t kMuStream = 0x6d75ULL;
constexpr std::uint64_t kSurrogateStream = 0x7375727220ULL;
constexpr std::uint64_t kProbeStream = 0x70726f6265ULL;
constexpr std::uint64_t kKlStream = 0x6b6cULL;

}  // namespace

std::string_view to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::sds:
      return "sds";
    case EstimatorKind::vsd_analytic:
      return "vsd_analytic";
    case EstimatorKind::vsd_surrogate:
      return "vsd_surrogate";
    case EstimatorKind::ssd:
      return "ssd";
  }
  return "unknown";
}

std::optional<EstimatorKind> parse_estimator_kind(std::string_view name) {
  for (auto kind : {EstimatorKind::sds, EstimatorKind::vsd_analytic, EstimatorKind::vsd_surrogate,
                    EstimatorKind::ssd}) {
    if (to_string(kind) == name) return kind;
  }
  return std::nullopt;
}

ExperimentConfig::ExperimentConfig(GaussianMixture target_, Renderer renderer_,
                                   NoiseSchedule schedule_)
    : target(std::move(target_)), renderer(std::move(renderer_)), schedule(schedule_) {}

void ExperimentConfig::validate() const {
  if (renderer.output_dim() != target.dim()) {
    throw ConfigError("/renderer", "output dimension does not match the target dimension");
  }
  if (steps < 0) throw ConfigError("/steps", "must be >= 0");
  if (!(lr_theta > 0.0) || !std::isfinite(lr_theta)) throw ConfigError("/lr_theta", "must be > 0");
  if (!(lr_mu >= 0.0) || !std::isfinite(lr_mu)) throw ConfigError("/lr_mu", "must be >= 0");
  if (mu_update_every < 1) throw ConfigError("/mu_update_every", "must be >= 1");
  if (mu_batch < 1) throw ConfigError("/mu_batch", "must be >= 1");
  if (probe_every < 1) throw ConfigError("/probe_every", "must be >= 1");
  if (probe_draws < 2) throw ConfigError("/probe_draws", "must be >= 2");
  if (kl_samples < 2) throw ConfigError("/kl_samples", "must be >= 2");
  if (kl_threshold && !std::isfinite(*kl_threshold)) {
    throw ConfigError("/kl_threshold", "must be finite");
  }
  if (estimator == EstimatorKind::ssd && !baseline) {
    throw ConfigError("/baseline", "required by the ssd estimator");
  }
  if (baseline && baseline->input_dim() != 0 && baseline->input_dim() != target.dim()) {
    throw ConfigError("/baseline", "dimension does not match the target dimension");
  }
  if (theta_init.size() != 0 && theta_init.size() != renderer.input_dim()) {
    throw ConfigError("/theta_init", "length must equal the renderer input dimension");
  }
  if (theta_init.size() != 0 && !theta_init.allFinite()) {
    throw ConfigError("/theta_init", "entries must be finite");
  }
  if (estimator == EstimatorKind::vsd_surrogate) {
    if (surrogate.bucket_count < 1) throw ConfigError("/surrogate/bucket_count", "must be >= 1");
    if (surrogate.fit_every < 1) throw ConfigError("/surrogate/fit_every", "must be >= 1");
    if (surrogate.fit_steps < 0) throw ConfigError("/surrogate/fit_steps", "must be >= 0");
    if (surrogate.batch < 1) throw ConfigError("/surrogate/batch", "must be >= 1");
    if (!(surrogate.lr > 0.0)) throw ConfigError("/surrogate/lr", "must be > 0");
  }
}

Problem ExperimentConfig::problem() const {
  NoiseSchedule s = schedule;
  s.set_fold_alpha(fold_alpha);
  return Problem(target, s, renderer);
}

Eigen::VectorXd ExperimentConfig::initial_theta() const {
  if (theta_init.size() == 0) return Eigen::VectorXd::Zero(renderer.input_dim());
  return theta_init;
}

EstimatorState initial_state(const ExperimentConfig& config) {
  EstimatorState state;
  state.mu = ControlWeights::ones(config.target.dim());
  if (config.estimator == EstimatorKind::vsd_surrogate) {
    state.surrogate.emplace(config.schedule, config.renderer.condition_count(), config.target.dim(),
                            config.surrogate.bucket_count);
  }
  return state;
}

GradientSample estimator_sample(const ExperimentConfig& config, const Problem& problem,
                                const EstimatorState& state, const Eigen::VectorXd& theta,
                                const DrawContext& ctx) {
  switch (config.estimator) {
    case EstimatorKind::sds:
      return sds_sample(problem, theta, ctx);
    case EstimatorKind::vsd_analytic:
      return vsd_sample_analytic(problem, theta, ctx);
    case EstimatorKind::vsd_surrogate:
      if (!state.surrogate) throw PreconditionError("vsd_surrogate needs a surrogate model");
      return vsd_sample_surrogate(problem, theta, *state.surrogate, ctx);
    case EstimatorKind::ssd:
      if (!config.baseline) throw PreconditionError("ssd needs a baseline function");
      return ssd_sample(problem, theta, *config.baseline, state.mu, ctx);
  }
  throw PreconditionError("unknown estimator");
}

// ---------------------------------------------------------------------------

std::vector<double> kl_time_grid(const NoiseSchedule& schedule) {
  std::vector<double> grid(kKlGridPoints);
  const double span = schedule.t_max() - schedule.t_min();
  for (int i = 0; i < kKlGridPoints; ++i) {
    grid[static_cast<std::size_t>(i)] =
        schedule.t_min() + span * static_cast<double>(i) / (kKlGridPoints - 1);
  }
  return grid;
}

double gaussian_kl_diagonal(const Eigen::VectorXd& mean_q, const Eigen::VectorXd& var_q,
                            const Eigen::VectorXd& mean_p, const Eigen::VectorXd& var_p) {
  const Eigen::ArrayXd vq = var_q.array();
  const Eigen::ArrayXd vp = var_p.array();
  const Eigen::ArrayXd diff = (mean_q - mean_p).array();
  return 0.5 * ((vp / vq).log() + (vq + diff.square()) / vp - 1.0).sum();
}

bool closed_form_kl_available(const Problem& problem) { return problem.target.size() == 1; }

Eigen::VectorXd matched_clean_variance(const GaussianMixture& gmm) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(gmm.dim());
  for (std::size_t k = 0; k < gmm.size(); ++k) v += gmm.weights()[k] * gmm.covariances()[k];
  return v;
}

double kl_spread_offset(const Problem& problem) {
  const Eigen::VectorXd spread = matched_clean_variance(problem.target);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(spread.size());
  double total = 0.0;
  const auto grid = kl_time_grid(problem.schedule);
  for (double t : grid) {
    const ScheduleValues s = schedule_eval(problem.schedule, t);
    const Eigen::VectorXd var_q = Eigen::VectorXd::Constant(spread.size(), s.sigma * s.sigma);
    const Eigen::VectorXd var_p = (s.alpha * s.alpha) * spread.array() + s.sigma * s.sigma;
    total += gaussian_kl_diagonal(zero, var_q, zero, var_p);
  }
  return total / static_cast<double>(grid.size());
}

KlEstimate kl_metric(const Eigen::VectorXd& theta, const Problem& problem, KlMode mode, long n,
                     std::uint64_t seed) {
  const auto grid = kl_time_grid(problem.schedule);
  const std::size_t conditions = problem.renderer.condition_count();

  if (mode == KlMode::closed_form) {
    if (!closed_form_kl_available(problem)) {
      throw UnsupportedModeError("closed-form KL needs a single-component target");
    }
    const Eigen::VectorXd& m = problem.target.means().front();
    const Eigen::VectorXd& s2 = problem.target.covariances().front();
    double total = 0.0;
    for (double t : grid) {
      const ScheduleValues s = schedule_eval(problem.schedule, t);
      const Eigen::VectorXd var_p = (s.alpha * s.alpha) * s2.array() + s.sigma * s.sigma;
      // Equal variances: the point-render KL minus kl_spread_offset.
      const Eigen::VectorXd& var_q = var_p;
      for (std::size_t c = 0; c < conditions; ++c) {
        const Eigen::VectorXd mean_q = s.alpha * render(problem.renderer, theta, Condition{c});
        total += gaussian_kl_diagonal(mean_q, var_q, s.alpha * m, var_p);
      }
    }
    return {total / static_cast<double>(grid.size() * conditions), 0.0};
  }

  if (n < 2) throw PreconditionError("Monte Carlo KL needs n >= 2");
  Rng rng(seed);
  const Eigen::Index dim = problem.target.dim();
  double sum = 0.0;
  double sum_sq = 0.0;
  for (long i = 0; i < n; ++i) {
    const double t = grid[static_cast<std::size_t>(i) % grid.size()];
    const ScheduleValues s = schedule_eval(problem.schedule, t);
    const Condition c{rng.index(conditions)};
    const Eigen::VectorXd eps = rng.normal_vector(dim);
    const Eigen::VectorXd mean_q = s.alpha * render(problem.renderer, theta, c);
    const Eigen::VectorXd x = mean_q + s.sigma * eps;
    const double log_q = diagonal_gaussian_log_density(
        x, mean_q, Eigen::VectorXd::Constant(dim, s.sigma * s.sigma));
    const double term = log_q - perturbed_log_density(problem.target, problem.schedule, t, x);
    sum += term;
    sum_sq += term * term;
  }
  const double nn = static_cast<double>(n);
  const double mean = sum / nn;
  const double var = std::max(0.0, (sum_sq - nn * mean * mean) / (nn - 1.0));
  return {mean - kl_spread_offset(problem), std::sqrt(var / nn)};
}

Eigen::VectorXd expected_update_closed_form(const Eigen::VectorXd& theta, const Problem& problem,
                                            int intervals) {
  if (!closed_form_kl_available(problem)) {
    throw UnsupportedModeError("closed-form KL gradient needs a single-component target");
  }
  if (intervals < 2 || intervals % 2 != 0) {
    throw PreconditionError("Simpson rule needs an even number of intervals");
  }
  const Eigen::VectorXd& m = problem.target.means().front();
  const Eigen::VectorXd& s2 = problem.target.covariances().front();
  const std::size_t conditions = problem.renderer.condition_count();

  // -lambda(t) grad_theta KL_t = -lambda(t) alpha^2 E_c[J_c^T ((g_c - m) / v_p)].
  auto integrand = [&](double t) {
    const ScheduleValues s = schedule_eval(problem.schedule, t);
    const double lambda = problem.schedule.estimator_weight(t) * s.sigma / s.alpha;
    const Eigen::ArrayXd var_p = (s.alpha * s.alpha) * s2.array() + s.sigma * s.sigma;
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(theta.size());
    for (std::size_t c = 0; c < conditions; ++c) {
      const Eigen::VectorXd gap = render(problem.renderer, theta, Condition{c}) - m;
      const Eigen::VectorXd inner = (gap.array() / var_p).matrix();
      acc += jacobian_transpose_apply(problem.renderer, theta, Condition{c}, inner);
    }
    return Eigen::VectorXd(-lambda * s.alpha * s.alpha * acc / static_cast<double>(conditions));
  };

  const double a = problem.schedule.t_min();
  const double b = problem.schedule.t_max();
  const double h = (b - a) / intervals;
  Eigen::VectorXd total = integrand(a) + integrand(b);
  for (int i = 1; i < intervals; ++i) {
    total += (i % 2 == 1 ? 4.0 : 2.0) * integrand(a + h * i);
  }
  // Average over t ~ U[a, b].
  return total * (h / 3.0) / (b - a);
}

// ---------------------------------------------------------------------------

double VarianceReport::max_variance() const {
  return per_coordinate_variance.size() == 0 ? 0.0 : per_coordinate_variance.maxCoeff();
}

VarianceReport variance_probe(const ExperimentConfig& config, const EstimatorState& state,
                              const Eigen::VectorXd& theta, std::span<const DrawContext> contexts,
                              long step) {
  if (contexts.size() < 2) throw PreconditionError("variance probe needs at least two draws");
  const Problem problem = config.problem();
  const Eigen::Index dim = theta.size();
  Eigen::MatrixXd deltas(static_cast<Eigen::Index>(contexts.size()), dim);
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    deltas.row(static_cast<Eigen::Index>(i)) =
        estimator_sample(config, problem, state, theta, contexts[i]).delta.transpose();
  }
  const double n = static_cast<double>(contexts.size());
  const Eigen::RowVectorXd mean = deltas.colwise().mean();
  const Eigen::MatrixXd centered = deltas.rowwise() - mean;

  VarianceReport report;
  report.step = step;
  report.per_coordinate_variance = centered.array().square().colwise().sum().transpose() / (n - 1.0);
  report.total_variance = report.per_coordinate_variance.sum();
  report.mean_norm = mean.norm();
  return report;
}

VarianceReport variance_probe(const ExperimentConfig& config, const EstimatorState& state,
                              const Eigen::VectorXd& theta, long step, std::uint64_t seed) {
  const Problem problem = config.problem();
  Rng rng(seed);
  std::vector<DrawContext> contexts;
  contexts.reserve(static_cast<std::size_t>(config.probe_draws));
  for (long i = 0; i < config.probe_draws; ++i) {
    contexts.push_back(draw_context(problem, theta, rng));
  }
  return variance_probe(config, state, theta, contexts, step);
}

double record_kl(const ExperimentConfig& config, const Problem& problem,
                 const Eigen::VectorXd& theta) {
  if (closed_form_kl_available(problem)) {
    return kl_metric(theta, problem, KlMode::closed_form, 0, 0).value;
  }
  return kl_metric(theta, problem, KlMode::monte_carlo, config.kl_samples,
                   derive_seed(config.seed, kKlStream))
      .value;
}

namespace {

bool diverged(const Eigen::VectorXd& theta) {
  return !theta.allFinite() || theta.norm() > kDivergenceNorm;
}

}  // namespace

Trajectory run_distillation(const ExperimentConfig& config) {
  config.validate();
  const Problem problem = config.problem();
  const bool is_ssd = config.estimator == EstimatorKind::ssd;

  Eigen::VectorXd theta = config.initial_theta();
  EstimatorState state = initial_state(config);
  Rng draw_rng(derive_seed(config.seed, kDrawStream));
  Rng mu_rng(derive_seed(config.seed, kMuStream));

  Trajectory out;
  auto record = [&](long step) {
    TrajectoryRecord r;
    r.step = step;
    r.theta = theta;
    r.kl = record_kl(config, problem, theta);
    r.variance = variance_probe(config, state, theta, step,
                                derive_seed(config.seed, kProbeStream, static_cast<std::uint64_t>(step)));
    if (is_ssd) r.mu = state.mu.mu;
    out.records.push_back(std::move(r));
  };

  record(0);
  std::vector<DrawContext> mu_batch(static_cast<std::size_t>(config.mu_batch));
  for (long step = 1; step <= config.steps; ++step) {
    const DrawContext ctx = draw_context(problem, theta, draw_rng);
    theta += config.lr_theta * estimator_sample(config, problem, state, theta, ctx).delta;
    out.steps_completed = step;

    if (diverged(theta)) {
      TrajectoryRecord r;
      r.step = step;
      r.theta = theta;
      r.kl = std::numeric_limits<double>::infinity();
      if (is_ssd) r.mu = state.mu.mu;
      out.records.push_back(std::move(r));
      out.status = RunStatus::diverged;
      break;
    }

    if (is_ssd && step % config.mu_update_every == 0) {
      for (auto& c : mu_batch) c = draw_context(problem, theta, mu_rng);
      state.mu = update_mu(problem, theta, *config.baseline, state.mu, mu_batch, config.lr_mu);
    }
    if (state.surrogate && step % config.surrogate.fit_every == 0) {
      SurrogateFitOptions fit;
      fit.steps = config.surrogate.fit_steps;
      fit.lr = config.surrogate.lr;
      fit.batch_size = config.surrogate.batch;
      fit.seed = derive_seed(config.seed, kSurrogateStream, static_cast<std::uint64_t>(step));
      const Eigen::VectorXd snapshot[] = {theta};
      state.surrogate = fit_surrogate(std::move(*state.surrogate), problem, snapshot, fit);
    }
    if (step % config.probe_every == 0 || step == config.steps) record(step);
  }

  out.final_theta = theta;
  if (is_ssd) out.final_mu = state.mu.mu;
  return out;
}

std::optional<long> steps_to_threshold(const Trajectory& trajectory, double threshold) {
  for (const auto& r : trajectory.records) {
    if (r.kl <= threshold) return r.step;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------

MeanSd mean_sd(std::span<const double> values) {
  MeanSd out;
  out.count = static_cast<long>(values.size());
  if (values.empty()) return out;
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return out;
}

namespace {

bool same_target(const GaussianMixture& a, const GaussianMixture& b) {
  if (a.size() != b.size() || a.dim() != b.dim()) return false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a.weights()[k] != b.weights()[k] || a.means()[k] != b.means()[k] ||
        a.covariances()[k] != b.covariances()[k]) {
      return false;
    }
  }
  return true;
}

bool same_renderer(const Renderer& a, const Renderer& b) {
  if (a.kind() != b.kind() || a.condition_count() != b.condition_count() ||
      a.input_dim() != b.input_dim() || a.output_dim() != b.output_dim()) {
    return false;
  }
  for (std::size_t c = 0; c < a.projections().size(); ++c) {
    if (a.projections()[c] != b.projections()[c]) return false;
  }
  return true;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(values.size() - 1, lo + 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

}  // namespace

bool same_fixture(const ExperimentConfig& a, const ExperimentConfig& b) {
  return same_target(a.target, b.target) && same_renderer(a.renderer, b.renderer) &&
         a.schedule.t_min() == b.schedule.t_min() && a.schedule.t_max() == b.schedule.t_max() &&
         a.schedule.weight_kind() == b.schedule.weight_kind();
}

ComparisonTable compare_estimators(const std::vector<ExperimentConfig>& configs,
                                   const std::vector<std::uint64_t>& seeds,
                                   const CompareOptions& options) {
  if (configs.empty()) throw PreconditionError("compare_estimators needs at least one config");
  if (seeds.empty()) throw PreconditionError("compare_estimators needs at least one seed");
  for (const auto& c : configs) {
    if (!same_fixture(configs.front(), c)) {
      throw PreconditionError("configs '" + configs.front().name + "' and '" + c.name +
                              "' do not share target, renderer and schedule");
    }
    c.validate();
  }

  ComparisonTable table;
  const std::size_t runs = configs.size() * seeds.size();
  table.trajectories.resize(runs);
  table.rows.resize(runs);

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < runs; i = next++) {
      ExperimentConfig cfg = configs[i / seeds.size()];
      cfg.seed = seeds[i % seeds.size()];
      table.trajectories[i] = run_distillation(cfg);
    }
  };
  const std::size_t jobs = std::clamp<std::size_t>(options.jobs, 1, runs);
  {
    std::vector<std::jthread> pool;
    for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
    worker();
  }

  if (options.kl_threshold) {
    table.kl_threshold = *options.kl_threshold;
  } else if (configs.front().kl_threshold) {
    table.kl_threshold = *configs.front().kl_threshold;
  } else if (configs.front().target.size() == 1) {
    table.kl_threshold = options.gaussian_threshold;
  } else {
    std::vector<double> all;
    for (const auto& traj : table.trajectories) {
      for (const auto& r : traj.records) {
        if (std::isfinite(r.kl)) all.push_back(r.kl);
      }
    }
    table.kl_threshold = quantile(std::move(all), options.mixture_percentile);
  }

  for (std::size_t i = 0; i < runs; ++i) {
    const ExperimentConfig& cfg = configs[i / seeds.size()];
    const Trajectory& traj = table.trajectories[i];
    ComparisonRow& row = table.rows[i];
    row.config_index = i / seeds.size();
    row.name = cfg.name;
    row.estimator = cfg.estimator;
    row.seed = seeds[i % seeds.size()];
    row.steps_to_threshold = steps_to_threshold(traj, table.kl_threshold);
    row.final_kl = traj.records.back().kl;
    row.diverged = traj.status == RunStatus::diverged;
    std::vector<double> vars;
    for (const auto& r : traj.records) {
      if (r.variance) vars.push_back(r.variance->total_variance);
    }
    row.mean_total_variance = mean_sd(vars).mean;
  }

  for (std::size_t ci = 0; ci < configs.size(); ++ci) {
    ComparisonSummary s;
    s.config_index = ci;
    s.name = configs[ci].name;
    s.estimator = configs[ci].estimator;
    std::vector<double> steps, finals, vars;
    std::map<long, std::vector<CurvePoint>> by_step;
    for (std::size_t si = 0; si < seeds.size(); ++si) {
      const std::size_t i = ci * seeds.size() + si;
      const ComparisonRow& row = table.rows[i];
      if (row.steps_to_threshold) steps.push_back(static_cast<double>(*row.steps_to_threshold));
      finals.push_back(row.final_kl);
      vars.push_back(row.mean_total_variance);
      for (const auto& r : table.trajectories[i].records) {
        if (!r.variance) continue;
        by_step[r.step].push_back({r.step, r.kl, r.variance->total_variance,
                                   r.variance->max_variance(), r.variance->mean_norm});
      }
    }
    s.steps_to_threshold = mean_sd(steps);
    s.reached = static_cast<long>(steps.size());
    s.final_kl = mean_sd(finals);
    s.mean_total_variance = mean_sd(vars);
    for (const auto& [step, points] : by_step) {
      if (points.size() != seeds.size()) continue;
      CurvePoint avg;
      avg.step = step;
      for (const auto& p : points) {
        avg.kl += p.kl;
        avg.var_total += p.var_total;
        avg.var_max += p.var_max;
        avg.mean_norm += p.mean_norm;
      }
      const double n = static_cast<double>(points.size());
      avg.kl /= n;
      avg.var_total /= n;
      avg.var_max /= n;
      avg.mean_norm /= n;
      s.curve.push_back(avg);
    }
    table.summaries.push_back(std::move(s));
  }
  return table;
}

}  // namespace steinlab
