#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "steinlab/baseline.hpp"
#include "steinlab/estimators.hpp"

namespace steinlab {

/// Monte Carlo estimate of E_q[grad log q_t(x_t | theta, c) phi + grad_x phi].
struct SteinResidual {
  Eigen::VectorXd mean;
  double residual_norm = 0.0;
  Eigen::VectorXd standard_errors;  // per coordinate
  double standard_error = 0.0;      // sqrt(sum of squared per-coordinate errors)
  long flagged_draws = 0;
};

/// Draws N samples of x_t ~ q_t(. | theta, c) at fixed (t, c) and averages the
/// Stein integrand built from the exact Gaussian q-score. Requires N >= 2.
SteinResidual stein_identity_residual(const BaselineFunction& phi, const Problem& problem,
                                      const Eigen::VectorXd& theta, Condition c, double t,
                                      long n, std::uint64_t seed);

/// N paired draws of an estimator (deltas) and a zero-mean control variate (xis).
class PairedSampleSet {
 public:
  PairedSampleSet(Eigen::MatrixXd deltas, Eigen::MatrixXd xis);

  const Eigen::MatrixXd& deltas() const { return deltas_; }
  const Eigen::MatrixXd& xis() const { return xis_; }
  Eigen::Index size() const { return deltas_.rows(); }
  Eigen::Index dim() const { return deltas_.cols(); }

 private:
  Eigen::MatrixXd deltas_;
  Eigen::MatrixXd xis_;
};

struct ClosedFormMu {
  Eigen::VectorXd mu;
  Eigen::VectorXd predicted_residual_variance;
  std::vector<bool> flagged;  // xi_i had zero sample variance; mu_i set to 0
};

/// Per coordinate: mu_i = -Cov(delta_i, xi_i) / Var(xi_i) and the residual
/// variance (1 - Corr(delta_i, xi_i)^2) Var(delta_i). Moments use 1/N.
ClosedFormMu optimal_mu_closed_form(const PairedSampleSet& samples);

/// d/dmu ||delta_SSD||^2 for one draw:
///   2 w(t)^2 (J J^T (sigma_t grad log p_t + mu (.) b)) (.) b.
Eigen::VectorXd mu_gradient(const Problem& problem, const Eigen::VectorXd& theta,
                            const BaselineFunction& phi, const ControlWeights& mu,
                            const DrawContext& ctx);

/// One SGD step on the batch mean of mu_gradient. Requires lr >= 0.
ControlWeights update_mu(const Problem& problem, const Eigen::VectorXd& theta,
                         const BaselineFunction& phi, const ControlWeights& mu,
                         std::span<const DrawContext> batch, double lr);

/// Mean of ||delta_SSD||^2 over the batch.
double ssd_second_moment(const Problem& problem, const Eigen::VectorXd& theta,
                         const BaselineFunction& phi, const ControlWeights& mu,
                         std::span<const DrawContext> batch);

/// Exact minimizer of ssd_second_moment over mu. The objective is quadratic
/// in mu, so this is one linear solve (minimum-norm when singular).
ControlWeights optimal_mu_second_moment(const Problem& problem, const Eigen::VectorXd& theta,
                                        const BaselineFunction& phi,
                                        std::span<const DrawContext> batch);

}  // namespace steinlab
