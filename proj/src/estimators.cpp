#include "steinlab/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "steinlab/errors.hpp"

namespace steinlab {
namespace {

void check_dim(Eigen::Index got, Eigen::Index want, const char* what) {
  if (got != want) {
    throw ShapeError(std::string(what) + " has dimension " + std::to_string(got) + ", expected " +
                     std::to_string(want));
  }
}

void check_context(const Problem& problem, const DrawContext& ctx) {
  check_dim(ctx.x_t.size(), problem.target.dim(), "x_t");
  check_dim(ctx.epsilon.size(), problem.target.dim(), "epsilon");
}

/// Shared tail of every estimator: lifts the observation-space score bracket
/// and control variate through w(t) J^T.
GradientSample assemble(const Problem& problem, const Eigen::VectorXd& theta,
                        const DrawContext& ctx, const Eigen::VectorXd& score_bracket,
                        const Eigen::VectorXd& cv_bracket) {
  const double w = problem.schedule.estimator_weight(ctx.t);
  GradientSample out;
  out.score_term = w * jacobian_transpose_apply(problem.renderer, theta, ctx.c, score_bracket);
  out.cv_term = w * jacobian_transpose_apply(problem.renderer, theta, ctx.c, cv_bracket);
  out.delta = out.score_term + out.cv_term;
  return out;
}

Eigen::VectorXd score_bracket(const Problem& problem, const DrawContext& ctx) {
  const ScheduleValues s = schedule_eval(problem.schedule, ctx.t);
  return s.sigma * perturbed_score(problem.target, problem.schedule, ctx.t, ctx.x_t);
}

}  // namespace

Problem::Problem(GaussianMixture target_, NoiseSchedule schedule_, Renderer renderer_)
    : target(std::move(target_)), schedule(schedule_), renderer(std::move(renderer_)) {
  if (renderer.output_dim() != target.dim()) {
    throw ShapeError("renderer output dimension " + std::to_string(renderer.output_dim()) +
                     " does not match target dimension " + std::to_string(target.dim()));
  }
}

DrawContext make_context(const Problem& problem, const Eigen::VectorXd& theta, double t,
                         Condition c, Eigen::VectorXd epsilon) {
  const ScheduleValues s = schedule_eval(problem.schedule, t);
  check_dim(epsilon.size(), problem.target.dim(), "epsilon");
  DrawContext ctx;
  ctx.t = t;
  ctx.c = c;
  ctx.x_t = s.alpha * render(problem.renderer, theta, c) + s.sigma * epsilon;
  ctx.epsilon = std::move(epsilon);
  return ctx;
}

DrawContext draw_context(const Problem& problem, const Eigen::VectorXd& theta, Rng& rng) {
  const double t = rng.uniform(problem.schedule.t_min(), problem.schedule.t_max());
  const Condition c{rng.index(problem.renderer.condition_count())};
  return make_context(problem, theta, t, c, rng.normal_vector(problem.target.dim()));
}

DrawContext draw_context(const Problem& problem, const Eigen::VectorXd& theta,
                         std::uint64_t seed) {
  Rng rng(seed);
  return draw_context(problem, theta, rng);
}

GradientSample sds_sample(const Problem& problem, const Eigen::VectorXd& theta,
                          const DrawContext& ctx) {
  check_context(problem, ctx);
  return assemble(problem, theta, ctx, score_bracket(problem, ctx), ctx.epsilon);
}

GradientSample vsd_sample_analytic(const Problem& problem, const Eigen::VectorXd& theta,
                                   const DrawContext& ctx) {
  check_context(problem, ctx);
  const ScheduleValues s = schedule_eval(problem.schedule, ctx.t);
  const Eigen::VectorXd mean = s.alpha * render(problem.renderer, theta, ctx.c);
  // -sigma_t * grad log q_t(x_t | c) with the Gaussian q-score.
  const Eigen::VectorXd cv = (ctx.x_t - mean) / s.sigma;
  return assemble(problem, theta, ctx, score_bracket(problem, ctx), cv);
}

SurrogateScoreModel::SurrogateScoreModel(double t_min, double t_max, std::size_t conditions,
                                         Eigen::Index dim, std::size_t bucket_count)
    : t_min_(t_min), t_max_(t_max), conditions_(conditions), dim_(dim), buckets_(bucket_count) {
  if (!(t_min < t_max)) throw PreconditionError("surrogate needs t_min < t_max");
  if (conditions == 0 || bucket_count == 0 || dim <= 0) {
    throw PreconditionError("surrogate needs positive bucket, condition and dimension counts");
  }
  maps_.assign(buckets_ * conditions_,
               AffineMap{Eigen::MatrixXd::Zero(dim, dim), Eigen::VectorXd::Zero(dim)});
}

std::size_t SurrogateScoreModel::bucket_of(double t) const {
  if (!(t >= t_min_ && t <= t_max_)) {
    throw RangeError("t = " + std::to_string(t) + " not covered by surrogate buckets");
  }
  const double pos = (t - t_min_) / (t_max_ - t_min_) * static_cast<double>(buckets_);
  return std::min(buckets_ - 1, static_cast<std::size_t>(pos));
}

AffineMap& SurrogateScoreModel::map(std::size_t bucket, std::size_t condition) {
  if (bucket >= buckets_ || condition >= conditions_) throw RangeError("surrogate map index");
  return maps_[bucket * conditions_ + condition];
}

const AffineMap& SurrogateScoreModel::map(std::size_t bucket, std::size_t condition) const {
  if (bucket >= buckets_ || condition >= conditions_) throw RangeError("surrogate map index");
  return maps_[bucket * conditions_ + condition];
}

Eigen::VectorXd SurrogateScoreModel::predict(double t, Condition c, const Eigen::VectorXd& x) const {
  check_dim(x.size(), dim_, "surrogate input");
  const AffineMap& m = map(bucket_of(t), c.index);
  return m.weight * x + m.bias;
}

std::vector<SurrogateExample> make_surrogate_pool(const Problem& problem,
                                                  std::span<const Eigen::VectorXd> theta_snapshots,
                                                  long pool_size, std::uint64_t seed) {
  if (theta_snapshots.empty()) throw PreconditionError("surrogate fit needs theta snapshots");
  Rng rng(seed);
  std::vector<SurrogateExample> pool;
  pool.reserve(static_cast<std::size_t>(std::max(0L, pool_size)));
  for (long i = 0; i < pool_size; ++i) {
    const auto& theta = theta_snapshots[static_cast<std::size_t>(i) % theta_snapshots.size()];
    DrawContext ctx = draw_context(problem, theta, rng);
    pool.push_back({ctx.t, ctx.c, std::move(ctx.x_t), std::move(ctx.epsilon)});
  }
  return pool;
}

double surrogate_loss(const SurrogateScoreModel& model, const NoiseSchedule& schedule,
                      std::span<const SurrogateExample> examples) {
  if (examples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& ex : examples) {
    const double sigma = schedule_eval(schedule, ex.t).sigma;
    total += (sigma * model.predict(ex.t, ex.c, ex.x_t) + ex.epsilon).squaredNorm();
  }
  return total / static_cast<double>(examples.size());
}

namespace {

/// One gradient step on the per-cell mean loss of `batch`.
void surrogate_step(SurrogateScoreModel& model, const NoiseSchedule& schedule,
                    std::span<const SurrogateExample> batch, double lr) {
  const std::size_t cells = model.bucket_count() * model.condition_count();
  std::vector<AffineMap> grads(cells, AffineMap{Eigen::MatrixXd::Zero(model.dim(), model.dim()),
                                                Eigen::VectorXd::Zero(model.dim())});
  std::vector<long> counts(cells, 0);
  for (const auto& ex : batch) {
    const std::size_t bucket = model.bucket_of(ex.t);
    const std::size_t cell = bucket * model.condition_count() + ex.c.index;
    const AffineMap& m = model.map(bucket, ex.c.index);
    const double sigma = schedule_eval(schedule, ex.t).sigma;
    const Eigen::VectorXd residual = sigma * (m.weight * ex.x_t + m.bias) + ex.epsilon;
    grads[cell].weight.noalias() += (2.0 * sigma) * residual * ex.x_t.transpose();
    grads[cell].bias += (2.0 * sigma) * residual;
    ++counts[cell];
  }
  for (std::size_t b = 0; b < model.bucket_count(); ++b) {
    for (std::size_t c = 0; c < model.condition_count(); ++c) {
      const std::size_t cell = b * model.condition_count() + c;
      if (counts[cell] == 0) continue;
      const double scale = lr / static_cast<double>(counts[cell]);
      AffineMap& m = model.map(b, c);
      m.weight -= scale * grads[cell].weight;
      m.bias -= scale * grads[cell].bias;
    }
  }
}

}  // namespace

SurrogateScoreModel fit_surrogate(SurrogateScoreModel model, const Problem& problem,
                                  std::span<const Eigen::VectorXd> theta_snapshots,
                                  const SurrogateFitOptions& options) {
  if (theta_snapshots.empty()) throw PreconditionError("surrogate fit needs theta snapshots");
  if (options.steps < 0) throw PreconditionError("surrogate fit needs steps >= 0");
  if (model.dim() != problem.target.dim() ||
      model.condition_count() != problem.renderer.condition_count()) {
    throw ShapeError("surrogate model does not match the problem");
  }
  if (options.steps == 0) return model;

  if (options.pool_size > 0) {
    const auto pool =
        make_surrogate_pool(problem, theta_snapshots, options.pool_size, options.seed);
    for (long step = 0; step < options.steps; ++step) {
      surrogate_step(model, problem.schedule, pool, options.lr);
    }
    return model;
  }

  if (options.batch_size <= 0) throw PreconditionError("surrogate batch size must be positive");
  Rng rng(options.seed);
  std::vector<SurrogateExample> batch(static_cast<std::size_t>(options.batch_size));
  std::size_t next_snapshot = 0;
  for (long step = 0; step < options.steps; ++step) {
    for (auto& ex : batch) {
      const auto& theta = theta_snapshots[next_snapshot++ % theta_snapshots.size()];
      DrawContext ctx = draw_context(problem, theta, rng);
      ex = {ctx.t, ctx.c, std::move(ctx.x_t), std::move(ctx.epsilon)};
    }
    surrogate_step(model, problem.schedule, batch, options.lr);
  }
  return model;
}

GradientSample vsd_sample_surrogate(const Problem& problem, const Eigen::VectorXd& theta,
                                    const SurrogateScoreModel& model, const DrawContext& ctx) {
  check_context(problem, ctx);
  const ScheduleValues s = schedule_eval(problem.schedule, ctx.t);
  const Eigen::VectorXd cv = -s.sigma * model.predict(ctx.t, ctx.c, ctx.x_t);
  return assemble(problem, theta, ctx, score_bracket(problem, ctx), cv);
}

SteinDirection stein_direction(const Problem& problem, const Eigen::VectorXd& theta,
                               const BaselineFunction& phi, const DrawContext& ctx) {
  check_context(problem, ctx);
  const ScheduleValues s = schedule_eval(problem.schedule, ctx.t);
  const BaselineValue value = baseline_eval(phi, ctx.t, theta, ctx.x_t, ctx.c, problem.renderer);
  const BaselineGradient grad =
      baseline_grad_x(phi, ctx.t, theta, ctx.x_t, ctx.c, problem.renderer);
  return {-value.value * ctx.epsilon + s.sigma * grad.grad, value.degenerate || grad.degenerate};
}

GradientSample ssd_sample(const Problem& problem, const Eigen::VectorXd& theta,
                          const BaselineFunction& phi, const ControlWeights& mu,
                          const DrawContext& ctx) {
  check_context(problem, ctx);
  check_dim(mu.mu.size(), problem.target.dim(), "mu");
  const SteinDirection dir = stein_direction(problem, theta, phi, ctx);
  GradientSample out = assemble(problem, theta, ctx, score_bracket(problem, ctx),
                                mu.mu.cwiseProduct(dir.b));
  out.flagged = dir.degenerate;
  return out;
}

}  // namespace steinlab
