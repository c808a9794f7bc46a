#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "steinlab/rng.hpp"

namespace steinlab {

enum class ScheduleKind { variance_preserving };

/// Loss weighting omega(t).
enum class WeightKind { unit, sigma_squared };

struct ScheduleValues {
  double alpha;
  double sigma;
  double omega;
};

/// Variance-preserving Gaussian perturbation: alpha_t = sqrt(1 - t),
/// sigma_t = sqrt(t), restricted to t in [t_min, t_max].
///
/// `fold_alpha` controls whether the estimators multiply their bracket by an
/// extra alpha_t (the chain-rule factor of the KL gradient) on top of omega.
class NoiseSchedule {
 public:
  static constexpr double kDefaultTMin = 0.02;
  static constexpr double kDefaultTMax = 0.98;

  NoiseSchedule() : NoiseSchedule(kDefaultTMin, kDefaultTMax) {}
  NoiseSchedule(double t_min, double t_max, WeightKind weight = WeightKind::unit,
                bool fold_alpha = true);

  ScheduleKind kind() const { return ScheduleKind::variance_preserving; }
  double t_min() const { return t_min_; }
  double t_max() const { return t_max_; }
  WeightKind weight_kind() const { return weight_; }
  bool fold_alpha() const { return fold_alpha_; }
  void set_fold_alpha(bool fold) { fold_alpha_ = fold; }

  bool contains(double t) const { return t >= t_min_ && t <= t_max_; }

  /// omega(t) * (fold_alpha ? alpha_t : 1): the scalar every estimator
  /// applies to its observation-space bracket.
  double estimator_weight(double t) const;

 private:
  double t_min_;
  double t_max_;
  WeightKind weight_;
  bool fold_alpha_;
};

/// (alpha_t, sigma_t, omega(t)). Throws RangeError outside [t_min, t_max].
ScheduleValues schedule_eval(const NoiseSchedule& schedule, double t);

/// Mixture of axis-aligned Gaussians, the clean target p_0.
class GaussianMixture {
 public:
  /// Throws PreconditionError / ShapeError when the invariants fail
  /// (weights positive and summing to one, positive variances, shared D_x).
  GaussianMixture(std::vector<double> weights, std::vector<Eigen::VectorXd> means,
                  std::vector<Eigen::VectorXd> covariances);

  /// Single component N(mean, diag(variances)).
  static GaussianMixture single(const Eigen::VectorXd& mean, const Eigen::VectorXd& variances);
  static GaussianMixture standard_normal(Eigen::Index dim);

  Eigen::Index dim() const { return means_.front().size(); }
  std::size_t size() const { return weights_.size(); }

  const std::vector<double>& weights() const { return weights_; }
  const std::vector<Eigen::VectorXd>& means() const { return means_; }
  const std::vector<Eigen::VectorXd>& covariances() const { return covariances_; }

 private:
  std::vector<double> weights_;
  std::vector<Eigen::VectorXd> means_;
  std::vector<Eigen::VectorXd> covariances_;
};

/// Log density and score of p_t at one point, sharing the responsibilities.
struct PerturbedEval {
  double log_density;
  Eigen::VectorXd score;
};

PerturbedEval perturbed_eval(const GaussianMixture& gmm, const NoiseSchedule& schedule, double t,
                             const Eigen::VectorXd& x);

/// log p_t(x) with p_t = sum_k w_k N(alpha_t m_k, alpha_t^2 S_k + sigma_t^2 I).
double perturbed_log_density(const GaussianMixture& gmm, const NoiseSchedule& schedule, double t,
                             const Eigen::VectorXd& x);

/// grad_x log p_t(x).
Eigen::VectorXd perturbed_score(const GaussianMixture& gmm, const NoiseSchedule& schedule,
                                double t, const Eigen::VectorXd& x);

struct PerturbedSample {
  double t;
  Eigen::VectorXd x_t;
  Eigen::VectorXd epsilon;
  Eigen::VectorXd x_0;
};

/// Draws x_0 ~ p_0, epsilon ~ N(0, I) and returns x_t = alpha_t x_0 + sigma_t epsilon.
PerturbedSample sample_perturbed(const GaussianMixture& gmm, const NoiseSchedule& schedule,
                                 double t, Rng& rng);
PerturbedSample sample_perturbed(const GaussianMixture& gmm, const NoiseSchedule& schedule,
                                 double t, std::uint64_t seed);

/// log N(x | mean, diag(variances)).
double diagonal_gaussian_log_density(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                                     const Eigen::VectorXd& variances);

}  // namespace steinlab
