#include "steinlab/renderer.hpp"

#include <string>

#include <Eigen/QR>

#include "steinlab/errors.hpp"

namespace steinlab {
namespace {

void check_condition(const Renderer& r, Condition c) {
  if (c.index >= r.condition_count()) {
    throw RangeError("condition " + std::to_string(c.index) + " out of range [0, " +
                     std::to_string(r.condition_count()) + ")");
  }
}

void check_size(Eigen::Index got, Eigen::Index want, const char* what) {
  if (got != want) {
    throw ShapeError(std::string(what) + " has dimension " + std::to_string(got) + ", expected " +
                     std::to_string(want));
  }
}

}  // namespace

Renderer Renderer::identity(Eigen::Index dim, std::size_t conditions) {
  if (dim <= 0) throw ShapeError("identity renderer needs a positive dimension");
  if (conditions == 0) throw PreconditionError("renderer needs at least one condition");
  Renderer r;
  r.kind_ = RendererKind::identity;
  r.conditions_ = conditions;
  r.input_dim_ = dim;
  r.output_dim_ = dim;
  return r;
}

Renderer Renderer::linear(std::vector<Eigen::MatrixXd> projections) {
  if (projections.empty()) throw PreconditionError("linear renderer needs at least one projection");
  const Eigen::Index rows = projections.front().rows();
  const Eigen::Index cols = projections.front().cols();
  if (rows == 0 || cols == 0) throw ShapeError("projection matrices must be non-empty");
  for (std::size_t c = 0; c < projections.size(); ++c) {
    const auto& a = projections[c];
    if (a.rows() != rows || a.cols() != cols) {
      throw ShapeError("projection " + std::to_string(c) + " has a different shape");
    }
    if (!a.allFinite()) throw PreconditionError("projection entries must be finite");
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    if (qr.rank() != rows) {
      throw PreconditionError("projection " + std::to_string(c) + " is not of full row rank");
    }
  }
  Renderer r;
  r.kind_ = RendererKind::linear;
  r.conditions_ = projections.size();
  r.input_dim_ = cols;
  r.output_dim_ = rows;
  r.projections_ = std::move(projections);
  return r;
}

Eigen::MatrixXd Renderer::jacobian(std::size_t c) const {
  check_condition(*this, Condition{c});
  if (kind_ == RendererKind::identity) return Eigen::MatrixXd::Identity(output_dim_, input_dim_);
  return projections_[c];
}

Eigen::VectorXd render(const Renderer& r, const Eigen::VectorXd& theta, Condition c) {
  check_condition(r, c);
  check_size(theta.size(), r.input_dim(), "theta");
  if (r.kind() == RendererKind::identity) return theta;
  return r.projections()[c.index] * theta;
}

Eigen::VectorXd jacobian_transpose_apply(const Renderer& r, const Eigen::VectorXd& theta,
                                         Condition c, const Eigen::VectorXd& v) {
  check_condition(r, c);
  check_size(theta.size(), r.input_dim(), "theta");
  check_size(v.size(), r.output_dim(), "observation-space vector");
  if (r.kind() == RendererKind::identity) return v;
  return r.projections()[c.index].transpose() * v;
}

Eigen::VectorXd jacobian_apply(const Renderer& r, const Eigen::VectorXd& theta, Condition c,
                               const Eigen::VectorXd& u) {
  check_condition(r, c);
  check_size(theta.size(), r.input_dim(), "theta");
  check_size(u.size(), r.input_dim(), "parameter-space vector");
  if (r.kind() == RendererKind::identity) return u;
  return r.projections()[c.index] * u;
}

}  // namespace steinlab
