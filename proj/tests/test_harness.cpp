#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "steinlab/errors.hpp"
#include "steinlab/fixtures.hpp"
#include "steinlab/harness.hpp"
#include "test_support.hpp"

using namespace steinlab;
using test::gaussian_problem;

namespace {

// Textbook KL between 1-D Gaussians, summed over coordinates.
double textbook_kl(const Eigen::VectorXd& mq, const Eigen::VectorXd& vq, const Eigen::VectorXd& mp,
                   const Eigen::VectorXd& vp) {
  double kl = 0.0;
  for (Eigen::Index i = 0; i < mq.size(); ++i) {
    const double d = mq[i] - mp[i];
    kl += 0.5 * (std::log(vp[i] / vq[i]) + (vq[i] + d * d) / vp[i] - 1.0);
  }
  return kl;
}

ExperimentConfig short_config(EstimatorKind kind, long steps) {
  ExperimentConfig cfg = gaussian_fixture(kind);
  cfg.steps = steps;
  cfg.probe_every = 50;
  cfg.probe_draws = 200;
  return cfg;
}

CompareOptions with_jobs(std::size_t jobs) {
  CompareOptions o;
  o.jobs = jobs;
  return o;
}

}  // namespace

TEST(GaussianKl, MatchesTextbook) {
  const Eigen::VectorXd mq = Eigen::Vector2d(0.1, -0.4), vq = Eigen::Vector2d(0.5, 2.0);
  const Eigen::VectorXd mp = Eigen::Vector2d(1.0, 0.3), vp = Eigen::Vector2d(1.5, 0.7);
  EXPECT_NEAR(gaussian_kl_diagonal(mq, vq, mp, vp), textbook_kl(mq, vq, mp, vp), 1e-14);
  EXPECT_EQ(gaussian_kl_diagonal(mq, vq, mq, vq), 0.0);
}

TEST(KlMetric, ZeroAtTargetMean) {
  const Eigen::VectorXd m = Eigen::Vector3d(0.2, -0.7, 1.1);
  const Problem p = gaussian_problem(m, Eigen::VectorXd::Ones(3));
  EXPECT_NEAR(kl_metric(m, p, KlMode::closed_form, 0, 0).value, 0.0, 1e-14);
}

TEST(KlMetric, MeanGapReducesToTextbookKl) {
  const Eigen::VectorXd m = Eigen::Vector3d(0.2, -0.7, 1.1);
  const Eigen::VectorXd s = Eigen::Vector3d(0.5, 1.0, 2.0);
  const Eigen::VectorXd d = Eigen::Vector3d(0.3, -0.2, 0.6);
  const Problem p = gaussian_problem(m, s);
  double expected = 0.0;
  const auto grid = kl_time_grid(p.schedule);
  for (double t : grid) {
    const double a = std::sqrt(1.0 - t);
    const Eigen::VectorXd vp = (a * a * s.array() + t).matrix();
    // Equal spreads: only the mean gap alpha_t d contributes.
    expected += textbook_kl(a * (m + d), vp, a * m, vp);
  }
  expected /= static_cast<double>(grid.size());
  EXPECT_NEAR(kl_metric(m + d, p, KlMode::closed_form, 0, 0).value, expected, 1e-12);
}

TEST(KlMetric, MonteCarloAgreesWithClosedForm) {
  const Problem p = gaussian_problem(Eigen::Vector2d(0.5, -0.5), Eigen::Vector2d(0.25, 0.25));
  const Eigen::VectorXd theta = Eigen::Vector2d(1.0, 0.2);
  const auto exact = kl_metric(theta, p, KlMode::closed_form, 0, 0);
  const auto mc = kl_metric(theta, p, KlMode::monte_carlo, 100000, 7);
  EXPECT_GT(mc.standard_error, 0.0);
  EXPECT_LE(std::abs(mc.value - exact.value), 3.0 * mc.standard_error);
}

TEST(KlMetric, ClosedFormRejectsMixture) {
  const Problem p = mixture_fixture(EstimatorKind::sds).problem();
  EXPECT_FALSE(closed_form_kl_available(p));
  EXPECT_THROW(kl_metric(Eigen::VectorXd::Zero(6), p, KlMode::closed_form, 0, 0), UnsupportedModeError);
  EXPECT_NO_THROW(kl_metric(Eigen::VectorXd::Zero(6), p, KlMode::monte_carlo, 256, 0));
}

TEST(KlMetric, TimeGridCoversRange) {
  const auto grid = kl_time_grid(NoiseSchedule(0.1, 0.6));
  ASSERT_EQ(grid.size(), static_cast<std::size_t>(kKlGridPoints));
  EXPECT_DOUBLE_EQ(grid.front(), 0.1);
  EXPECT_DOUBLE_EQ(grid.back(), 0.6);
}

TEST(VarianceProbe, IdenticalContextsGiveZeroVariance) {
  ExperimentConfig cfg = gaussian_fixture(EstimatorKind::ssd);
  const Problem p = cfg.problem();
  const Eigen::VectorXd theta = Eigen::VectorXd::Constant(8, 0.3);
  const DrawContext ctx = draw_context(p, theta, 3);
  const std::vector<DrawContext> same(50, ctx);
  const VarianceReport r = variance_probe(cfg, initial_state(cfg), theta, same, 0);
  EXPECT_LE(r.total_variance, 1e-24);
  EXPECT_LE(r.max_variance(), 1e-24);
  EXPECT_GT(r.mean_norm, 0.0);
}

TEST(VarianceProbe, MatchesDirectSampleVariance) {
  ExperimentConfig cfg = gaussian_fixture(EstimatorKind::sds);
  const Problem p = cfg.problem();
  const Eigen::VectorXd theta = Eigen::VectorXd::Constant(8, 0.3);
  Rng rng(4);
  std::vector<DrawContext> ctxs;
  Eigen::MatrixXd rows(300, 8);
  for (int i = 0; i < 300; ++i) {
    ctxs.push_back(draw_context(p, theta, rng));
    rows.row(i) = sds_sample(p, theta, ctxs.back()).delta.transpose();
  }
  const auto m = test::mean_and_error(rows);
  const Eigen::VectorXd var = m.se.array().square() * 300.0;
  const VarianceReport r = variance_probe(cfg, initial_state(cfg), theta, ctxs, 0);
  EXPECT_LT((r.per_coordinate_variance - var).norm(), 1e-12);
  EXPECT_NEAR(r.total_variance, var.sum(), 1e-12);
  EXPECT_NEAR(r.mean_norm, m.mean.norm(), 1e-12);
}

TEST(RunDistillation, ZeroStepsHoldsInitialRecord) {
  const Trajectory tr = run_distillation(short_config(EstimatorKind::sds, 0));
  ASSERT_EQ(tr.records.size(), 1u);
  EXPECT_EQ(tr.records[0].step, 0);
  EXPECT_EQ(tr.steps_completed, 0);
  EXPECT_EQ(tr.status, RunStatus::ok);
}

TEST(RunDistillation, RecordsAtProbeStepsAndEnd) {
  ExperimentConfig cfg = short_config(EstimatorKind::sds, 120);
  const Trajectory tr = run_distillation(cfg);
  std::vector<long> steps;
  for (const auto& r : tr.records) steps.push_back(r.step);
  EXPECT_EQ(steps, (std::vector<long>{0, 50, 100, 120}));
}

TEST(RunDistillation, DeterministicInSeed) {
  for (auto kind : {EstimatorKind::sds, EstimatorKind::ssd, EstimatorKind::vsd_surrogate}) {
    const ExperimentConfig cfg = short_config(kind, 200);
    const Trajectory a = run_distillation(cfg);
    const Trajectory b = run_distillation(cfg);
    ASSERT_EQ(a.records.size(), b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
      EXPECT_EQ(a.records[i].theta, b.records[i].theta);
      EXPECT_EQ(a.records[i].kl, b.records[i].kl);
      EXPECT_EQ(a.records[i].variance->total_variance, b.records[i].variance->total_variance);
    }
  }
}

TEST(RunDistillation, SdsMatchesVsdAnalyticExactly) {
  const Trajectory a = run_distillation(short_config(EstimatorKind::sds, 300));
  const Trajectory b = run_distillation(short_config(EstimatorKind::vsd_analytic, 300));
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_LE((a.records[i].theta - b.records[i].theta).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(RunDistillation, ConstantBaselineFrozenMuMatchesSds) {
  ExperimentConfig ssd = short_config(EstimatorKind::ssd, 300);
  ssd.lr_mu = 0.0;
  const Trajectory a = run_distillation(short_config(EstimatorKind::sds, 300));
  const Trajectory b = run_distillation(ssd);
  EXPECT_LE((a.final_theta - b.final_theta).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(RunDistillation, SingleGaussianSdsConverges) {
  const ExperimentConfig cfg = gaussian_fixture(EstimatorKind::sds);
  const Eigen::VectorXd m = cfg.target.means()[0];
  const double s = cfg.target.covariances()[0][0];

  // Independent oracle: deterministic gradient descent on the closed-form
  // weighted KL. With sigma^2 weighting and alpha folded in, lambda = sigma^3
  // and grad KL_t = alpha^2 (theta - m) / (alpha^2 s + sigma^2).
  double rate = 0.0;
  const int n = 20000;
  const double t0 = cfg.schedule.t_min(), t1 = cfg.schedule.t_max();
  for (int i = 0; i <= n; ++i) {
    const double t = t0 + (t1 - t0) * i / n;
    const double a2 = 1.0 - t;
    rate += (i == 0 || i == n ? 0.5 : 1.0) * std::pow(t, 1.5) * a2 / (a2 * s + t);
  }
  rate /= n;
  Eigen::VectorXd gd = cfg.initial_theta();
  for (long k = 0; k < cfg.steps; ++k) gd -= cfg.lr_theta * rate * (gd - m);
  ASSERT_LE((gd - m).cwiseAbs().maxCoeff(), 1e-3);

  const Trajectory tr = run_distillation(cfg);
  EXPECT_LE((tr.final_theta - m).cwiseAbs().maxCoeff(), 0.05);
  EXPECT_LE((tr.final_theta - gd).cwiseAbs().maxCoeff(), 0.05);
}

TEST(RunDistillation, MixtureDivergesAtUnitLearningRate) {
  ExperimentConfig cfg = mixture_fixture(EstimatorKind::sds);
  cfg.lr_theta = 1.0;
  const Trajectory tr = run_distillation(cfg);
  EXPECT_EQ(tr.status, RunStatus::diverged);
  EXPECT_LT(tr.steps_completed, cfg.steps);
  EXPECT_TRUE(std::isinf(tr.records.back().kl));
  EXPECT_FALSE(tr.records.back().variance.has_value());
  EXPECT_EQ(tr.records.back().step, tr.steps_completed);
}

TEST(RunDistillation, InvalidConfigThrows) {
  ExperimentConfig cfg = short_config(EstimatorKind::ssd, 10);
  cfg.baseline.reset();
  EXPECT_THROW(run_distillation(cfg), ConfigError);
  cfg = short_config(EstimatorKind::sds, -1);
  EXPECT_THROW(run_distillation(cfg), ConfigError);
}

TEST(StepsToThreshold, FirstRecordAtOrBelow) {
  Trajectory tr;
  for (auto [step, kl] : std::vector<std::pair<long, double>>{{0, 1.0}, {100, 0.2}, {200, 0.04}, {300, 0.06}}) {
    TrajectoryRecord r;
    r.step = step;
    r.kl = kl;
    tr.records.push_back(r);
  }
  EXPECT_EQ(steps_to_threshold(tr, 0.05), 200);
  EXPECT_EQ(steps_to_threshold(tr, 0.2), 100);
  EXPECT_FALSE(steps_to_threshold(tr, 0.01).has_value());
}

TEST(CompareEstimators, SingleConfigSingleSeed) {
  ExperimentConfig cfg = short_config(EstimatorKind::sds, 200);
  const ComparisonTable table = compare_estimators({cfg}, {3});
  ASSERT_EQ(table.rows.size(), 1u);
  cfg.seed = 3;
  const Trajectory tr = run_distillation(cfg);
  EXPECT_EQ(table.rows[0].seed, 3u);
  EXPECT_EQ(table.rows[0].final_kl, tr.records.back().kl);
  EXPECT_EQ(table.rows[0].steps_to_threshold, steps_to_threshold(tr, table.kl_threshold));
  EXPECT_EQ(table.kl_threshold, 0.05);
  double mean_var = 0.0;
  for (const auto& r : tr.records) mean_var += r.variance->total_variance;
  EXPECT_NEAR(table.rows[0].mean_total_variance, mean_var / tr.records.size(), 1e-12);
}

TEST(CompareEstimators, SdsAndVsdAnalyticGiveIdenticalRows) {
  const ComparisonTable table = compare_estimators(
      {short_config(EstimatorKind::sds, 300), short_config(EstimatorKind::vsd_analytic, 300)},
      {1, 2}, with_jobs(2));
  ASSERT_EQ(table.rows.size(), 4u);
  for (std::size_t s = 0; s < 2; ++s) {
    const auto& a = table.rows[s];
    const auto& b = table.rows[2 + s];
    EXPECT_EQ(a.config_index, 0u);
    EXPECT_EQ(b.config_index, 1u);
    EXPECT_EQ(a.seed, b.seed);
    EXPECT_NEAR(a.final_kl, b.final_kl, 1e-12);
    EXPECT_NEAR(a.mean_total_variance, b.mean_total_variance, 1e-9);
    EXPECT_EQ(a.steps_to_threshold, b.steps_to_threshold);
  }
}

TEST(CompareEstimators, JobsDoNotChangeResults) {
  const std::vector<ExperimentConfig> cfgs{short_config(EstimatorKind::sds, 100),
                                           short_config(EstimatorKind::ssd, 100)};
  const auto serial = compare_estimators(cfgs, {1, 2, 3}, with_jobs(1));
  const auto parallel = compare_estimators(cfgs, {1, 2, 3}, with_jobs(4));
  ASSERT_EQ(serial.rows.size(), parallel.rows.size());
  for (std::size_t i = 0; i < serial.rows.size(); ++i) {
    EXPECT_EQ(serial.rows[i].final_kl, parallel.rows[i].final_kl);
    EXPECT_EQ(serial.rows[i].mean_total_variance, parallel.rows[i].mean_total_variance);
  }
}

TEST(CompareEstimators, RejectsMismatchedFixtures) {
  EXPECT_THROW(compare_estimators({short_config(EstimatorKind::sds, 10),
                                   mixture_fixture(EstimatorKind::sds)},
                                  {1}),
               PreconditionError);
}

TEST(CompareEstimators, FeatureAlignmentSsdReachesThresholdSooner) {
  std::vector<ExperimentConfig> cfgs{wide_gaussian_fixture(EstimatorKind::sds),
                                     wide_gaussian_fixture(EstimatorKind::ssd)};
  CompareOptions options = with_jobs(4);
  options.kl_threshold = 0.01;
  const ComparisonTable table = compare_estimators(cfgs, {1, 2, 3, 4, 5}, options);
  int ssd_wins = 0;
  for (std::size_t s = 0; s < 5; ++s) {
    const auto sds = table.rows[s].steps_to_threshold;
    const auto ssd = table.rows[5 + s].steps_to_threshold;
    if (ssd && (!sds || *ssd < *sds)) ++ssd_wins;
  }
  EXPECT_GE(ssd_wins, 4);
}

TEST(MeanSdTest, SampleStandardDeviation) {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  const MeanSd m = mean_sd(v);
  EXPECT_DOUBLE_EQ(m.mean, 2.5);
  EXPECT_NEAR(m.sd, std::sqrt(5.0 / 3.0), 1e-15);
  EXPECT_EQ(m.count, 4);
}

// The 100-step moving average of the KL must fall monotonically while it is
// above the noise floor, and stay below the floor once it gets there.
TEST(RunDistillation, KlMovingAverageTrendsDown) {
  constexpr double kFloor = 1e-2;
  for (auto kind : {EstimatorKind::sds, EstimatorKind::vsd_analytic, EstimatorKind::vsd_surrogate,
                    EstimatorKind::ssd}) {
    ExperimentConfig cfg = gaussian_fixture(kind);
    cfg.probe_every = 1;
    cfg.probe_draws = 2;
    const Trajectory tr = run_distillation(cfg);
    std::vector<double> average;
    double window = 0.0;
    for (std::size_t i = 0; i < tr.records.size(); ++i) {
      window += tr.records[i].kl;
      if (i >= 100) window -= tr.records[i - 100].kl;
      if (i >= 99) average.push_back(window / 100.0);
    }
    bool reached = false;
    for (std::size_t i = 1; i < average.size(); ++i) {
      if (!reached) {
        ASSERT_LE(average[i], average[i - 1]) << to_string(kind) << " at window " << i;
        reached = average[i] <= kFloor;
      } else {
        ASSERT_LE(average[i], kFloor) << to_string(kind) << " at window " << i;
      }
    }
    EXPECT_TRUE(reached) << to_string(kind);
  }
}

TEST(VarianceProbe, MeanNormWithinNoiseAtOptimum) {
  for (auto kind : {EstimatorKind::sds, EstimatorKind::vsd_analytic, EstimatorKind::ssd}) {
    ExperimentConfig cfg = gaussian_fixture(kind);
    cfg.probe_draws = 4000;
    const VarianceReport r =
        variance_probe(cfg, initial_state(cfg), cfg.target.means()[0], 0, 11);
    EXPECT_LE(r.mean_norm, 3.0 * std::sqrt(r.total_variance / cfg.probe_draws)) << to_string(kind);
  }
}
