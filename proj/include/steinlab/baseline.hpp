#pragma once

#include <Eigen/Core>

#include "steinlab/renderer.hpp"

namespace steinlab {

enum class BaselineKind { constant_neg_one, quadratic, feature_alignment };

/// Scalar baseline phi(t, theta, x_t, c) used to build Stein control variates.
///
///  - constant_neg_one:  phi = -1
///  - quadratic:         phi = -(x - center)^T A (x - center) + linear^T x
///  - feature_alignment: phi = scale * pearson(F x_t, F g(theta, c))
///
/// feature_alignment compares frozen linear features of the noisy observation
/// with the same features of the clean render. The `linear` term of the
/// quadratic kind defaults to zero.
class BaselineFunction {
 public:
  static constexpr double kDefaultAlignmentScale = 1e-2;

  static BaselineFunction constant_neg_one();
  /// `a` must be symmetric within 1e-12.
  static BaselineFunction quadratic(Eigen::MatrixXd a, Eigen::VectorXd center,
                                    Eigen::VectorXd linear = {});
  /// `features` is D_f x D_x with D_f >= 2 and full row rank.
  static BaselineFunction feature_alignment(Eigen::MatrixXd features,
                                            double scale = kDefaultAlignmentScale);

  BaselineKind kind() const { return kind_; }
  const Eigen::MatrixXd& matrix() const { return matrix_; }
  const Eigen::VectorXd& center() const { return center_; }
  const Eigen::VectorXd& linear() const { return linear_; }
  double scale() const { return scale_; }

  /// Observation dimension the baseline expects, or 0 when any is accepted.
  Eigen::Index input_dim() const;

 private:
  BaselineFunction() = default;

  BaselineKind kind_ = BaselineKind::constant_neg_one;
  Eigen::MatrixXd matrix_;  // A for quadratic, F for feature_alignment
  Eigen::VectorXd center_;
  Eigen::VectorXd linear_;
  double scale_ = 1.0;
};

struct BaselineValue {
  double value = 0.0;
  bool degenerate = false;  // zero-variance feature vector; value forced to 0
};

struct BaselineGradient {
  Eigen::VectorXd grad;
  bool degenerate = false;
};

double pearson_correlation(const Eigen::VectorXd& u, const Eigen::VectorXd& v);

BaselineValue baseline_eval(const BaselineFunction& phi, double t, const Eigen::VectorXd& theta,
                            const Eigen::VectorXd& x_t, Condition c, const Renderer& renderer);

/// Analytic grad_{x_t} phi.
BaselineGradient baseline_grad_x(const BaselineFunction& phi, double t,
                                 const Eigen::VectorXd& theta, const Eigen::VectorXd& x_t,
                                 Condition c, const Renderer& renderer);

}  // namespace steinlab
