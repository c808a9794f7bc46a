#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Core>

namespace steinlab {

/// Index of a camera-like condition, uniform over [0, C).
struct Condition {
  std::size_t index = 0;
};

enum class RendererKind { identity, linear };

/// Differentiable map g(theta, c) from parameters (D_theta) to observations
/// (D_x). Both shipped kinds are linear in theta, so the Jacobian is the
/// projection itself and does not depend on theta.
class Renderer {
 public:
  static Renderer identity(Eigen::Index dim, std::size_t conditions = 1);

  /// One D_x x D_theta matrix per condition, each of full row rank.
  static Renderer linear(std::vector<Eigen::MatrixXd> projections);

  RendererKind kind() const { return kind_; }
  std::size_t condition_count() const { return conditions_; }
  Eigen::Index input_dim() const { return input_dim_; }
  Eigen::Index output_dim() const { return output_dim_; }
  const std::vector<Eigen::MatrixXd>& projections() const { return projections_; }

  /// Dense Jacobian for condition c (identity matrix for the identity kind).
  Eigen::MatrixXd jacobian(std::size_t c) const;

 private:
  Renderer() = default;

  RendererKind kind_ = RendererKind::identity;
  std::size_t conditions_ = 1;
  Eigen::Index input_dim_ = 0;
  Eigen::Index output_dim_ = 0;
  std::vector<Eigen::MatrixXd> projections_;
};

Eigen::VectorXd render(const Renderer& r, const Eigen::VectorXd& theta, Condition c);

/// (dg/dtheta)^T v, mapping an observation-space vector to parameter space.
Eigen::VectorXd jacobian_transpose_apply(const Renderer& r, const Eigen::VectorXd& theta,
                                         Condition c, const Eigen::VectorXd& v);

/// (dg/dtheta) u, mapping a parameter-space direction to observation space.
Eigen::VectorXd jacobian_apply(const Renderer& r, const Eigen::VectorXd& theta, Condition c,
                               const Eigen::VectorXd& u);

}  // namespace steinlab
