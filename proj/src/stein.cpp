#include "steinlab/stein.hpp"

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "steinlab/errors.hpp"

namespace steinlab {

SteinResidual stein_identity_residual(const BaselineFunction& phi, const Problem& problem,
                                      const Eigen::VectorXd& theta, Condition c, double t,
                                      long n, std::uint64_t seed) {
  if (n < 2) throw PreconditionError("stein residual needs N >= 2");
  const ScheduleValues s = schedule_eval(problem.schedule, t);
  const Eigen::Index dim = problem.target.dim();
  const Eigen::VectorXd mean_x = s.alpha * render(problem.renderer, theta, c);

  Rng rng(seed);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd sum_sq = Eigen::VectorXd::Zero(dim);
  SteinResidual out;
  for (long i = 0; i < n; ++i) {
    const Eigen::VectorXd eps = rng.normal_vector(dim);
    const Eigen::VectorXd x = mean_x + s.sigma * eps;
    const Eigen::VectorXd q_score = -(x - mean_x) / (s.sigma * s.sigma);
    const BaselineValue value = baseline_eval(phi, t, theta, x, c, problem.renderer);
    const BaselineGradient grad = baseline_grad_x(phi, t, theta, x, c, problem.renderer);
    if (value.degenerate || grad.degenerate) ++out.flagged_draws;
    const Eigen::VectorXd term = q_score * value.value + grad.grad;
    sum += term;
    sum_sq += term.cwiseAbs2();
  }
  const double nn = static_cast<double>(n);
  out.mean = sum / nn;
  const Eigen::VectorXd var =
      ((sum_sq - nn * out.mean.cwiseAbs2()) / (nn - 1.0)).cwiseMax(0.0);
  out.standard_errors = (var / nn).cwiseSqrt();
  out.residual_norm = out.mean.norm();
  out.standard_error = out.standard_errors.norm();
  return out;
}

PairedSampleSet::PairedSampleSet(Eigen::MatrixXd deltas, Eigen::MatrixXd xis)
    : deltas_(std::move(deltas)), xis_(std::move(xis)) {
  if (deltas_.rows() != xis_.rows() || deltas_.cols() != xis_.cols()) {
    throw ShapeError("paired samples need equal N and D");
  }
}

ClosedFormMu optimal_mu_closed_form(const PairedSampleSet& samples) {
  const Eigen::Index n = samples.size();
  if (n < 2) throw PreconditionError("closed-form mu needs N >= 2");
  const double nn = static_cast<double>(n);
  const Eigen::MatrixXd dc = samples.deltas().rowwise() - samples.deltas().colwise().mean();
  const Eigen::MatrixXd xc = samples.xis().rowwise() - samples.xis().colwise().mean();
  const Eigen::ArrayXd cov = (dc.array() * xc.array()).colwise().sum().transpose() / nn;
  const Eigen::ArrayXd var_d = dc.array().square().colwise().sum().transpose() / nn;
  const Eigen::ArrayXd var_x = xc.array().square().colwise().sum().transpose() / nn;

  ClosedFormMu out;
  out.mu = Eigen::VectorXd::Zero(samples.dim());
  out.predicted_residual_variance = var_d.matrix();
  out.flagged.assign(static_cast<std::size_t>(samples.dim()), false);
  for (Eigen::Index i = 0; i < samples.dim(); ++i) {
    if (!(var_x[i] > 0.0)) {
      out.flagged[static_cast<std::size_t>(i)] = true;
      continue;
    }
    out.mu[i] = -cov[i] / var_x[i];
    if (var_d[i] > 0.0) {
      const double corr_sq = cov[i] * cov[i] / (var_d[i] * var_x[i]);
      out.predicted_residual_variance[i] = std::max(0.0, (1.0 - corr_sq) * var_d[i]);
    }
  }
  return out;
}

namespace {

struct SsdPieces {
  double weight;
  Eigen::VectorXd score;  // sigma_t grad log p_t(x_t)
  Eigen::VectorXd b;      // Stein direction
};

SsdPieces ssd_pieces(const Problem& problem, const Eigen::VectorXd& theta,
                     const BaselineFunction& phi, const DrawContext& ctx) {
  const ScheduleValues s = schedule_eval(problem.schedule, ctx.t);
  SsdPieces p;
  p.weight = problem.schedule.estimator_weight(ctx.t);
  p.score = s.sigma * perturbed_score(problem.target, problem.schedule, ctx.t, ctx.x_t);
  p.b = stein_direction(problem, theta, phi, ctx).b;
  return p;
}

}  // namespace

Eigen::VectorXd mu_gradient(const Problem& problem, const Eigen::VectorXd& theta,
                            const BaselineFunction& phi, const ControlWeights& mu,
                            const DrawContext& ctx) {
  if (mu.mu.size() != problem.target.dim()) throw ShapeError("mu has wrong dimension");
  const SsdPieces p = ssd_pieces(problem, theta, phi, ctx);
  const Eigen::VectorXd bracket = p.score + mu.mu.cwiseProduct(p.b);
  const Eigen::VectorXd jjt = jacobian_apply(
      problem.renderer, theta, ctx.c,
      jacobian_transpose_apply(problem.renderer, theta, ctx.c, bracket));
  return 2.0 * p.weight * p.weight * jjt.cwiseProduct(p.b);
}

ControlWeights update_mu(const Problem& problem, const Eigen::VectorXd& theta,
                         const BaselineFunction& phi, const ControlWeights& mu,
                         std::span<const DrawContext> batch, double lr) {
  if (!(lr >= 0.0)) throw PreconditionError("update_mu needs lr >= 0");
  if (batch.empty() || lr == 0.0) return mu;
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(mu.mu.size());
  for (const auto& ctx : batch) grad += mu_gradient(problem, theta, phi, mu, ctx);
  grad /= static_cast<double>(batch.size());
  return {mu.mu - lr * grad};
}

double ssd_second_moment(const Problem& problem, const Eigen::VectorXd& theta,
                         const BaselineFunction& phi, const ControlWeights& mu,
                         std::span<const DrawContext> batch) {
  if (batch.empty()) return 0.0;
  double total = 0.0;
  for (const auto& ctx : batch) {
    total += ssd_sample(problem, theta, phi, mu, ctx).delta.squaredNorm();
  }
  return total / static_cast<double>(batch.size());
}

ControlWeights optimal_mu_second_moment(const Problem& problem, const Eigen::VectorXd& theta,
                                        const BaselineFunction& phi,
                                        std::span<const DrawContext> batch) {
  const Eigen::Index dim = problem.target.dim();
  if (batch.empty()) return ControlWeights::ones(dim);
  // ||w J^T (s + diag(b) mu)||^2 = mu^T H mu + 2 g^T mu + const with
  // H = w^2 diag(b) J J^T diag(b) and g = w^2 diag(b) J J^T s.
  Eigen::MatrixXd hessian = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::VectorXd linear = Eigen::VectorXd::Zero(dim);
  for (const auto& ctx : batch) {
    const SsdPieces p = ssd_pieces(problem, theta, phi, ctx);
    const Eigen::MatrixXd j = problem.renderer.jacobian(ctx.c.index);
    const Eigen::MatrixXd gram = j * j.transpose();
    const double w2 = p.weight * p.weight;
    hessian += w2 * p.b.asDiagonal() * gram * p.b.asDiagonal();
    linear += w2 * p.b.cwiseProduct(gram * p.score);
  }
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> solver(hessian);
  return {-solver.solve(linear)};
}

}  // namespace steinlab
