#include "steinlab/targets.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "steinlab/errors.hpp"

namespace steinlab {

NoiseSchedule::NoiseSchedule(double t_min, double t_max, WeightKind weight, bool fold_alpha)
    : t_min_(t_min), t_max_(t_max), weight_(weight), fold_alpha_(fold_alpha) {
  if (!(t_min > 0.0 && t_min < t_max && t_max < 1.0)) {
    throw PreconditionError("noise schedule requires 0 < t_min < t_max < 1, got [" +
                            std::to_string(t_min) + ", " + std::to_string(t_max) + "]");
  }
}

double NoiseSchedule::estimator_weight(double t) const {
  const ScheduleValues v = schedule_eval(*this, t);
  return fold_alpha_ ? v.omega * v.alpha : v.omega;
}

ScheduleValues schedule_eval(const NoiseSchedule& schedule, double t) {
  if (!schedule.contains(t)) {
    throw RangeError("t = " + std::to_string(t) + " outside [" + std::to_string(schedule.t_min()) +
                     ", " + std::to_string(schedule.t_max()) + "]");
  }
  const double alpha = std::sqrt(1.0 - t);
  const double sigma = std::sqrt(t);
  const double omega = schedule.weight_kind() == WeightKind::unit ? 1.0 : t;
  return {alpha, sigma, omega};
}

GaussianMixture::GaussianMixture(std::vector<double> weights, std::vector<Eigen::VectorXd> means,
                                 std::vector<Eigen::VectorXd> covariances)
    : weights_(std::move(weights)), means_(std::move(means)), covariances_(std::move(covariances)) {
  if (weights_.empty()) throw PreconditionError("mixture needs at least one component");
  if (means_.size() != weights_.size() || covariances_.size() != weights_.size()) {
    throw ShapeError("mixture weights, means and covariances must have equal length");
  }
  double total = 0.0;
  for (double w : weights_) {
    if (!(w > 0.0)) throw PreconditionError("mixture weights must be positive");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw PreconditionError("mixture weights must sum to 1 (sum = " + std::to_string(total) + ")");
  }
  const Eigen::Index dim = means_.front().size();
  if (dim == 0) throw ShapeError("mixture dimension must be positive");
  for (std::size_t k = 0; k < weights_.size(); ++k) {
    if (means_[k].size() != dim || covariances_[k].size() != dim) {
      throw ShapeError("mixture component " + std::to_string(k) + " has mismatched dimension");
    }
    if (!(covariances_[k].array() > 0.0).all()) {
      throw PreconditionError("mixture covariances must be positive");
    }
  }
}

GaussianMixture GaussianMixture::single(const Eigen::VectorXd& mean,
                                        const Eigen::VectorXd& variances) {
  return GaussianMixture({1.0}, {mean}, {variances});
}

GaussianMixture GaussianMixture::standard_normal(Eigen::Index dim) {
  return single(Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim));
}

double diagonal_gaussian_log_density(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                                     const Eigen::VectorXd& variances) {
  const double log_two_pi = std::log(2.0 * std::numbers::pi);
  const Eigen::ArrayXd diff = (x - mean).array();
  return -0.5 * ((diff.square() / variances.array()).sum() + variances.array().log().sum() +
                 static_cast<double>(x.size()) * log_two_pi);
}

PerturbedEval perturbed_eval(const GaussianMixture& gmm, const NoiseSchedule& schedule, double t,
                             const Eigen::VectorXd& x) {
  if (x.size() != gmm.dim()) {
    throw ShapeError("point has dimension " + std::to_string(x.size()) + ", mixture has " +
                     std::to_string(gmm.dim()));
  }
  const ScheduleValues s = schedule_eval(schedule, t);
  const std::size_t K = gmm.size();

  std::vector<double> log_terms(K);
  std::vector<Eigen::VectorXd> component_scores(K);
  for (std::size_t k = 0; k < K; ++k) {
    const Eigen::VectorXd mean = s.alpha * gmm.means()[k];
    const Eigen::VectorXd var =
        (s.alpha * s.alpha) * gmm.covariances()[k].array() + s.sigma * s.sigma;
    log_terms[k] = std::log(gmm.weights()[k]) + diagonal_gaussian_log_density(x, mean, var);
    component_scores[k] = -((x - mean).array() / var.array()).matrix();
  }

  const double max_term = *std::max_element(log_terms.begin(), log_terms.end());
  double sum = 0.0;
  for (double lt : log_terms) sum += std::exp(lt - max_term);
  const double log_density = max_term + std::log(sum);

  Eigen::VectorXd score = Eigen::VectorXd::Zero(x.size());
  for (std::size_t k = 0; k < K; ++k) {
    score += std::exp(log_terms[k] - log_density) * component_scores[k];
  }
  return {log_density, std::move(score)};
}

double perturbed_log_density(const GaussianMixture& gmm, const NoiseSchedule& schedule, double t,
                             const Eigen::VectorXd& x) {
  return perturbed_eval(gmm, schedule, t, x).log_density;
}

Eigen::VectorXd perturbed_score(const GaussianMixture& gmm, const NoiseSchedule& schedule,
                                double t, const Eigen::VectorXd& x) {
  return perturbed_eval(gmm, schedule, t, x).score;
}

PerturbedSample sample_perturbed(const GaussianMixture& gmm, const NoiseSchedule& schedule,
                                 double t, Rng& rng) {
  const ScheduleValues s = schedule_eval(schedule, t);
  const std::size_t k = rng.categorical(gmm.weights());
  Eigen::VectorXd x0 = gmm.means()[k] + (gmm.covariances()[k].array().sqrt() *
                                         rng.normal_vector(gmm.dim()).array())
                                            .matrix();
  Eigen::VectorXd eps = rng.normal_vector(gmm.dim());
  Eigen::VectorXd xt = s.alpha * x0 + s.sigma * eps;
  return {t, std::move(xt), std::move(eps), std::move(x0)};
}

PerturbedSample sample_perturbed(const GaussianMixture& gmm, const NoiseSchedule& schedule,
                                 double t, std::uint64_t seed) {
  Rng rng(seed);
  return sample_perturbed(gmm, schedule, t, rng);
}

}  // namespace steinlab
