#include "steinlab/fixtures.hpp"

#include <cmath>

#include "steinlab/rng.hpp"

namespace steinlab {

Eigen::MatrixXd seeded_gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.normal();
  }
  return m;
}

namespace {

ExperimentConfig single_gaussian(double variance, NoiseSchedule schedule, std::string name,
                                 EstimatorKind estimator) {
  constexpr Eigen::Index kDim = 8;
  const Eigen::VectorXd mean = Eigen::VectorXd::LinSpaced(kDim, -1.0, 1.0);
  ExperimentConfig cfg(GaussianMixture::single(mean, Eigen::VectorXd::Constant(kDim, variance)),
                       Renderer::identity(kDim), schedule);
  cfg.name = std::move(name) + "_" + std::string(to_string(estimator));
  cfg.estimator = estimator;
  cfg.steps = 5000;
  cfg.lr_theta = 1e-2;
  cfg.lr_mu = 1e-2;
  cfg.seed = 1;
  return cfg;
}

}  // namespace

ExperimentConfig gaussian_fixture(EstimatorKind estimator) {
  ExperimentConfig cfg = single_gaussian(
      0.25,
      NoiseSchedule(NoiseSchedule::kDefaultTMin, NoiseSchedule::kDefaultTMax,
                    WeightKind::sigma_squared),
      "gaussian", estimator);
  cfg.baseline = BaselineFunction::constant_neg_one();
  return cfg;
}

ExperimentConfig wide_gaussian_fixture(EstimatorKind estimator) {
  ExperimentConfig cfg = single_gaussian(1.0, NoiseSchedule(0.02, 0.5), "wide_gaussian", estimator);
  cfg.baseline = BaselineFunction::feature_alignment(seeded_gaussian_matrix(4, 8, 11), 1.0);
  return cfg;
}

ExperimentConfig mixture_fixture(EstimatorKind estimator) {
  constexpr Eigen::Index kDx = 4;
  constexpr Eigen::Index kDtheta = 6;
  std::vector<Eigen::VectorXd> means(3, Eigen::VectorXd(kDx));
  means[0] << 1.5, 1.0, 0.0, -1.0;
  means[1] << -1.5, 0.5, 1.0, 0.0;
  means[2] << 0.0, -1.5, -1.0, 1.0;
  std::vector<Eigen::VectorXd> covs(3, Eigen::VectorXd::Ones(kDx));
  std::vector<Eigen::MatrixXd> projections;
  for (std::uint64_t c = 0; c < 3; ++c) {
    projections.push_back(seeded_gaussian_matrix(kDx, kDtheta, 100 + c) *
                          (2.0 / std::sqrt(static_cast<double>(kDtheta))));
  }
  ExperimentConfig cfg(GaussianMixture({0.3, 0.3, 0.4}, means, covs),
                       Renderer::linear(std::move(projections)), NoiseSchedule(0.02, 0.5));
  cfg.name = "mixture_" + std::string(to_string(estimator));
  cfg.estimator = estimator;
  cfg.baseline = BaselineFunction::feature_alignment(seeded_gaussian_matrix(4, kDx, 7), 1.0);
  cfg.theta_init = seeded_gaussian_matrix(kDtheta, 1, 5).col(0);
  cfg.steps = 3000;
  cfg.lr_theta = 3e-2;
  cfg.lr_mu = 1e-2;
  cfg.kl_samples = 16384;
  cfg.seed = 1;
  return cfg;
}

}  // namespace steinlab
