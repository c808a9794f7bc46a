#pragma once

#include <cmath>
#include <functional>

#include <Eigen/Core>
#include <Eigen/Cholesky>

#include "steinlab/estimators.hpp"
#include "steinlab/rng.hpp"

namespace steinlab::test {

/// Central finite-difference gradient of f at x.
inline Eigen::VectorXd central_difference(const std::function<double(const Eigen::VectorXd&)>& f,
                                          const Eigen::VectorXd& x, double h) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd up = x, down = x;
    up[i] += h;
    down[i] -= h;
    g[i] = (f(up) - f(down)) / (2.0 * h);
  }
  return g;
}

/// Two-pass sample mean and standard error of the mean for each coordinate.
struct MeanAndError {
  Eigen::VectorXd mean;
  Eigen::VectorXd se;
};

inline MeanAndError mean_and_error(const Eigen::MatrixXd& rows) {
  const double n = static_cast<double>(rows.rows());
  MeanAndError out;
  out.mean = rows.colwise().mean().transpose();
  const Eigen::MatrixXd centered = rows.rowwise() - out.mean.transpose();
  out.se = (centered.colwise().squaredNorm().transpose() / (n - 1.0) / n).cwiseSqrt();
  return out;
}

inline double relative_error(const Eigen::VectorXd& got, const Eigen::VectorXd& want) {
  const double scale = std::max(want.norm(), 1e-12);
  return (got - want).norm() / scale;
}

/// Single Gaussian N(mean, diag(variances)) seen through the identity renderer.
inline Problem gaussian_problem(const Eigen::VectorXd& mean, const Eigen::VectorXd& variances,
                                NoiseSchedule schedule = NoiseSchedule()) {
  return Problem(GaussianMixture::single(mean, variances), schedule,
                 Renderer::identity(mean.size()));
}

}  // namespace steinlab::test
