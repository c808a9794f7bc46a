#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "steinlab/errors.hpp"
#include "steinlab/fixtures.hpp"
#include "steinlab/stein.hpp"
#include "test_support.hpp"

using namespace steinlab;
using test::gaussian_problem;

namespace {

Problem mixture_problem() { return mixture_fixture(EstimatorKind::ssd).problem(); }

std::vector<DrawContext> draws(const Problem& p, const Eigen::VectorXd& theta, int n,
                               std::uint64_t seed) {
  Rng rng(seed);
  std::vector<DrawContext> out;
  for (int i = 0; i < n; ++i) out.push_back(draw_context(p, theta, rng));
  return out;
}

}  // namespace

TEST(SteinResidual, LinearBaselineOnStandardGaussian) {
  const Problem p = gaussian_problem(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Ones(3));
  const auto phi = BaselineFunction::quadratic(Eigen::MatrixXd::Zero(3, 3), Eigen::VectorXd::Zero(3),
                                               Eigen::Vector3d(1.0, -2.0, 0.5));
  const auto r = stein_identity_residual(phi, p, Eigen::VectorXd::Zero(3), {}, 0.5, 100000, 3);
  EXPECT_LE(r.residual_norm, 3.0 * r.standard_error);
  for (int i = 0; i < 3; ++i) EXPECT_LE(std::abs(r.mean[i]), 3.0 * r.standard_errors[i]);
}

TEST(SteinResidual, ConstantBaseline) {
  const Problem p = mixture_problem();
  const Eigen::VectorXd theta = seeded_gaussian_matrix(6, 1, 2).col(0);
  const auto r = stein_identity_residual(BaselineFunction::constant_neg_one(), p, theta, Condition{1},
                                         0.3, 100000, 4);
  EXPECT_LE(r.residual_norm, 3.0 * r.standard_error);
}

TEST(SteinResidual, FeatureAlignmentScalesAsInverseRootN) {
  const Problem p = mixture_problem();
  const Eigen::VectorXd theta = seeded_gaussian_matrix(6, 1, 2).col(0);
  const auto phi = BaselineFunction::feature_alignment(seeded_gaussian_matrix(4, 4, 7), 1.0);
  // Average over independent replicates so the fit is not at the mercy of a
  // single draw of a half-normal-like norm.
  std::vector<double> xs, ys;
  for (long n : {1000L, 10000L, 100000L}) {
    double mean_norm = 0.0;
    const int reps = 8;
    for (int k = 0; k < reps; ++k) {
      mean_norm += stein_identity_residual(phi, p, theta, Condition{0}, 0.3, n, 1000 * n + k).residual_norm;
    }
    xs.push_back(std::log(static_cast<double>(n)));
    ys.push_back(std::log(mean_norm / reps));
  }
  // Fixed slope -1/2: intercept by least squares, then every point within a factor of 2.
  double intercept = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) intercept += ys[i] + 0.5 * xs[i];
  intercept /= static_cast<double>(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    EXPECT_LE(std::abs(ys[i] - (intercept - 0.5 * xs[i])), std::log(2.0)) << i;
  }
}

TEST(SteinResidual, RequiresTwoDraws) {
  const Problem p = gaussian_problem(Eigen::VectorXd::Zero(2), Eigen::VectorXd::Ones(2));
  EXPECT_THROW(stein_identity_residual(BaselineFunction::constant_neg_one(), p,
                                       Eigen::VectorXd::Zero(2), {}, 0.5, 1, 0),
               PreconditionError);
}

TEST(OptimalMu, HandWorkedExample) {
  Eigen::MatrixXd d(3, 1), xi(3, 1);
  d << 1, 2, 3;
  xi << -1, 0, 1;
  const auto r = optimal_mu_closed_form(PairedSampleSet(d, xi));
  EXPECT_NEAR(r.mu[0], -1.0, 1e-15);
  EXPECT_NEAR(r.predicted_residual_variance[0], 0.0, 1e-14);
}

TEST(OptimalMu, IndependentControlVariate) {
  Rng rng(12);
  const long n = 100000;
  Eigen::MatrixXd d(n, 2), xi(n, 2);
  for (long i = 0; i < n; ++i) {
    d.row(i) << 1.0 + 2.0 * rng.normal(), rng.normal();
    xi.row(i) << rng.normal(), 3.0 * rng.normal();
  }
  const auto r = optimal_mu_closed_form(PairedSampleSet(d, xi));
  for (int j = 0; j < 2; ++j) {
    const double var_d = (d.col(j).array() - d.col(j).mean()).square().mean();
    const double var_xi = (xi.col(j).array() - xi.col(j).mean()).square().mean();
    // se of Cov/Var under independence: sqrt(var_d / (n var_xi)).
    EXPECT_LE(std::abs(r.mu[j]), 3.0 * std::sqrt(var_d / (n * var_xi))) << j;
    EXPECT_NEAR(r.predicted_residual_variance[j] / var_d, 1.0, 0.05) << j;
  }
}

TEST(OptimalMu, PerfectAnticorrelation) {
  Rng rng(13);
  Eigen::MatrixXd d(500, 1);
  for (long i = 0; i < 500; ++i) d(i, 0) = 2.0 + rng.normal();
  const Eigen::MatrixXd xi = -(d.array() - d.mean()).matrix();
  const auto r = optimal_mu_closed_form(PairedSampleSet(d, xi));
  EXPECT_NEAR(r.mu[0], 1.0, 1e-12);
  EXPECT_NEAR(r.predicted_residual_variance[0], 0.0, 1e-10);
}

TEST(OptimalMu, ZeroVarianceCoordinateFlagged) {
  Eigen::MatrixXd d(4, 2), xi(4, 2);
  d << 1, 2, 3, 4, 5, 6, 7, 8;
  xi << 1, 0, -1, 0, 2, 0, -2, 0;
  const auto r = optimal_mu_closed_form(PairedSampleSet(d, xi));
  EXPECT_FALSE(r.flagged[0]);
  EXPECT_TRUE(r.flagged[1]);
  EXPECT_EQ(r.mu[1], 0.0);
}

TEST(OptimalMu, ResidualVarianceMatchesMeasured) {
  Rng rng(14);
  const long n = 200000;
  Eigen::MatrixXd d(n, 2), xi(n, 2);
  for (long i = 0; i < n; ++i) {
    const double a = rng.normal(), b = rng.normal(), c = rng.normal();
    d.row(i) << 0.5 + a + 0.3 * b, -1.0 + 2.0 * c - 0.5 * b;
    xi.row(i) << 0.8 * a + 0.6 * b, c + 0.2 * a;
  }
  const auto r = optimal_mu_closed_form(PairedSampleSet(d, xi));
  for (int j = 0; j < 2; ++j) {
    const Eigen::ArrayXd resid = d.col(j).array() + r.mu[j] * xi.col(j).array();
    const double measured = (resid - resid.mean()).square().mean();
    EXPECT_NEAR(measured / r.predicted_residual_variance[j], 1.0, 1e-9) << j;
  }
}

TEST(PairedSampleSetTest, ShapeMismatchThrows) {
  EXPECT_THROW(PairedSampleSet(Eigen::MatrixXd::Zero(3, 2), Eigen::MatrixXd::Zero(3, 1)), ShapeError);
}

TEST(MuGradient, ZeroWhenDirectionVanishes) {
  const Problem p = gaussian_problem(Eigen::Vector2d(0.5, 0.5), Eigen::Vector2d(1.0, 1.0));
  const Eigen::VectorXd theta = Eigen::Vector2d(1.0, -1.0);
  const DrawContext ctx = make_context(p, theta, 0.5, {}, Eigen::VectorXd::Zero(2));
  const auto g = mu_gradient(p, theta, BaselineFunction::constant_neg_one(),
                             ControlWeights{Eigen::Vector2d(0.3, 2.0)}, ctx);
  EXPECT_EQ(g, Eigen::VectorXd::Zero(2));
}

TEST(MuGradient, ScalarCalculus) {
  const Problem p = gaussian_problem(Eigen::VectorXd::Constant(1, 0.4), Eigen::VectorXd::Constant(1, 0.7),
                                     NoiseSchedule(0.02, 0.98, WeightKind::unit, false));
  const Eigen::VectorXd theta = Eigen::VectorXd::Constant(1, -0.9);
  const auto phi = BaselineFunction::quadratic(Eigen::MatrixXd::Constant(1, 1, 0.5),
                                               Eigen::VectorXd::Constant(1, 0.2));
  const DrawContext ctx = draw_context(p, theta, 4);
  const double mu = 1.7;
  const GradientSample s = ssd_sample(p, theta, phi, ControlWeights{Eigen::VectorXd::Constant(1, mu)}, ctx);
  const double score = s.score_term[0];
  const double b = stein_direction(p, theta, phi, ctx).b[0];
  const auto g = mu_gradient(p, theta, phi, ControlWeights{Eigen::VectorXd::Constant(1, mu)}, ctx);
  EXPECT_NEAR(g[0], 2.0 * (score + mu * b) * b, 1e-12);
}

TEST(MuGradient, MatchesFiniteDifferences) {
  const Problem p = mixture_problem();
  const auto phi = BaselineFunction::feature_alignment(seeded_gaussian_matrix(4, 4, 7), 1.0);
  Rng rng(5);
  for (int k = 0; k < 20; ++k) {
    const Eigen::VectorXd theta = rng.normal_vector(6);
    const Eigen::VectorXd mu0 = rng.normal_vector(4);
    const DrawContext ctx = draw_context(p, theta, rng);
    const auto f = [&](const Eigen::VectorXd& mu) {
      return ssd_sample(p, theta, phi, ControlWeights{mu}, ctx).delta.squaredNorm();
    };
    const Eigen::VectorXd fd = test::central_difference(f, mu0, 1e-5);
    EXPECT_LE(test::relative_error(mu_gradient(p, theta, phi, ControlWeights{mu0}, ctx), fd), 1e-6) << k;
  }
}

TEST(UpdateMu, ZeroLearningRateIsIdentity) {
  const Problem p = mixture_problem();
  const Eigen::VectorXd theta = Eigen::VectorXd::Zero(6);
  const auto batch = draws(p, theta, 8, 1);
  const ControlWeights mu{Eigen::Vector4d(0.1, 0.2, 0.3, 0.4)};
  EXPECT_EQ(update_mu(p, theta, BaselineFunction::constant_neg_one(), mu, batch, 0.0).mu, mu.mu);
  EXPECT_THROW(update_mu(p, theta, BaselineFunction::constant_neg_one(), mu, batch, -1.0),
               PreconditionError);
}

TEST(UpdateMu, ConvergesToGridMinimizer) {
  const Problem p = gaussian_problem(Eigen::Vector2d(0.3, -0.2), Eigen::Vector2d(1.0, 1.0),
                                     NoiseSchedule(0.02, 0.5));
  const Eigen::VectorXd theta = Eigen::Vector2d(1.5, -1.0);
  const auto phi = BaselineFunction::feature_alignment(seeded_gaussian_matrix(2, 2, 3), 1.0);
  const auto batch = draws(p, theta, 256, 6);

  // Brute-force grid over [-3, 3]^2 at 0.01, then a 0.0005 refinement.
  const auto moment = [&](double a, double b) {
    return ssd_second_moment(p, theta, phi, ControlWeights{Eigen::Vector2d(a, b)}, batch);
  };
  double best = std::numeric_limits<double>::infinity(), ba = 0, bb = 0;
  for (int i = -300; i <= 300; i += 2) {
    for (int j = -300; j <= 300; j += 2) {
      const double v = moment(i * 0.01, j * 0.01);
      if (v < best) best = v, ba = i * 0.01, bb = j * 0.01;
    }
  }
  const double ca = ba, cb = bb;
  for (int i = -40; i <= 40; ++i) {
    for (int j = -40; j <= 40; ++j) {
      const double v = moment(ca + i * 5e-4, cb + j * 5e-4);
      if (v < best) best = v, ba = ca + i * 5e-4, bb = cb + j * 5e-4;
    }
  }

  ControlWeights mu{Eigen::VectorXd::Zero(2)};
  double previous = ssd_second_moment(p, theta, phi, mu, batch);
  for (int k = 0; k < 5000; ++k) {
    mu = update_mu(p, theta, phi, mu, batch, 0.05);
    const double m = ssd_second_moment(p, theta, phi, mu, batch);
    ASSERT_LE(m, previous + 1e-12) << k;
    previous = m;
  }
  EXPECT_NEAR(mu.mu[0], ba, 0.02 * std::abs(ba));
  EXPECT_NEAR(mu.mu[1], bb, 0.02 * std::abs(bb));

  const ControlWeights exact = optimal_mu_second_moment(p, theta, phi, batch);
  EXPECT_NEAR(exact.mu[0], ba, 0.02 * std::abs(ba));
  EXPECT_NEAR(exact.mu[1], bb, 0.02 * std::abs(bb));
}
