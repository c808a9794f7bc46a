#include "steinlab/baseline.hpp"

#include <cmath>
#include <string>

#include <Eigen/QR>

#include "steinlab/errors.hpp"

namespace steinlab {
namespace {

struct Centered {
  Eigen::VectorXd vec;
  double norm;
  bool degenerate;
};

Centered center_vector(const Eigen::VectorXd& v) {
  Centered c;
  c.vec = v.array() - v.mean();
  c.norm = c.vec.norm();
  c.degenerate = !(c.norm > 1e-12 * (1.0 + v.norm()));
  return c;
}

void check_input(const BaselineFunction& phi, const Eigen::VectorXd& x_t) {
  const Eigen::Index want = phi.input_dim();
  if (want != 0 && x_t.size() != want) {
    throw ShapeError("baseline expects x_t of dimension " + std::to_string(want) + ", got " +
                     std::to_string(x_t.size()));
  }
}

}  // namespace

BaselineFunction BaselineFunction::constant_neg_one() {
  BaselineFunction phi;
  phi.kind_ = BaselineKind::constant_neg_one;
  return phi;
}

BaselineFunction BaselineFunction::quadratic(Eigen::MatrixXd a, Eigen::VectorXd center,
                                             Eigen::VectorXd linear) {
  if (a.rows() != a.cols() || a.rows() != center.size() || a.rows() == 0) {
    throw ShapeError("quadratic baseline needs a square A matching the center dimension");
  }
  if (((a - a.transpose()).array().abs() > 1e-12).any()) {
    throw PreconditionError("quadratic baseline matrix must be symmetric");
  }
  if (linear.size() == 0) linear = Eigen::VectorXd::Zero(center.size());
  if (linear.size() != center.size()) throw ShapeError("quadratic baseline linear term mismatch");
  BaselineFunction phi;
  phi.kind_ = BaselineKind::quadratic;
  phi.matrix_ = std::move(a);
  phi.center_ = std::move(center);
  phi.linear_ = std::move(linear);
  return phi;
}

BaselineFunction BaselineFunction::feature_alignment(Eigen::MatrixXd features, double scale) {
  if (features.rows() < 2) {
    throw PreconditionError("feature_alignment needs at least two features");
  }
  if (!std::isfinite(scale)) throw PreconditionError("feature_alignment scale must be finite");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(features);
  if (qr.rank() != features.rows()) {
    throw PreconditionError("feature_alignment matrix must have full row rank");
  }
  BaselineFunction phi;
  phi.kind_ = BaselineKind::feature_alignment;
  phi.matrix_ = std::move(features);
  phi.scale_ = scale;
  return phi;
}

Eigen::Index BaselineFunction::input_dim() const {
  switch (kind_) {
    case BaselineKind::constant_neg_one:
      return 0;
    case BaselineKind::quadratic:
      return center_.size();
    case BaselineKind::feature_alignment:
      return matrix_.cols();
  }
  return 0;
}

double pearson_correlation(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  const Centered uc = center_vector(u);
  const Centered vc = center_vector(v);
  if (uc.degenerate || vc.degenerate) return 0.0;
  return uc.vec.dot(vc.vec) / (uc.norm * vc.norm);
}

BaselineValue baseline_eval(const BaselineFunction& phi, double /*t*/,
                            const Eigen::VectorXd& theta, const Eigen::VectorXd& x_t,
                            Condition c, const Renderer& renderer) {
  check_input(phi, x_t);
  switch (phi.kind()) {
    case BaselineKind::constant_neg_one:
      return {-1.0, false};
    case BaselineKind::quadratic: {
      const Eigen::VectorXd d = x_t - phi.center();
      return {-d.dot(phi.matrix() * d) + phi.linear().dot(x_t), false};
    }
    case BaselineKind::feature_alignment: {
      const Centered u = center_vector(phi.matrix() * x_t);
      const Centered v = center_vector(phi.matrix() * render(renderer, theta, c));
      if (u.degenerate || v.degenerate) return {0.0, true};
      return {phi.scale() * u.vec.dot(v.vec) / (u.norm * v.norm), false};
    }
  }
  return {};
}

BaselineGradient baseline_grad_x(const BaselineFunction& phi, double /*t*/,
                                 const Eigen::VectorXd& theta, const Eigen::VectorXd& x_t,
                                 Condition c, const Renderer& renderer) {
  check_input(phi, x_t);
  switch (phi.kind()) {
    case BaselineKind::constant_neg_one:
      return {Eigen::VectorXd::Zero(x_t.size()), false};
    case BaselineKind::quadratic:
      return {-2.0 * (phi.matrix() * (x_t - phi.center())) + phi.linear(), false};
    case BaselineKind::feature_alignment: {
      const Centered u = center_vector(phi.matrix() * x_t);
      const Centered v = center_vector(phi.matrix() * render(renderer, theta, c));
      if (u.degenerate || v.degenerate) return {Eigen::VectorXd::Zero(x_t.size()), true};
      const Eigen::VectorXd u_hat = u.vec / u.norm;
      const Eigen::VectorXd v_hat = v.vec / v.norm;
      const double rho = u_hat.dot(v_hat);
      // d rho / d u; already orthogonal to the all-ones direction, so the
      // centering Jacobian drops out.
      const Eigen::VectorXd d_rho = (v_hat - rho * u_hat) / u.norm;
      return {phi.scale() * (phi.matrix().transpose() * d_rho), false};
    }
  }
  return {};
}

}  // namespace steinlab
