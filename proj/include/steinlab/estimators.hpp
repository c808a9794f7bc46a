#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "steinlab/baseline.hpp"
#include "steinlab/renderer.hpp"
#include "steinlab/rng.hpp"
#include "steinlab/targets.hpp"

namespace steinlab {

/// Target, schedule and renderer of one distillation problem.
/// The renderer's output dimension must equal the target dimension.
struct Problem {
  Problem(GaussianMixture target, NoiseSchedule schedule, Renderer renderer);

  GaussianMixture target;
  NoiseSchedule schedule;
  Renderer renderer;
};

/// One sampled (t, c, epsilon) together with x_t = alpha_t g(theta, c) + sigma_t epsilon.
struct DrawContext {
  double t = 0.0;
  Condition c;
  Eigen::VectorXd epsilon;
  Eigen::VectorXd x_t;
};

/// A single-draw estimate, split into the score part and the control variate.
/// delta == score_term + cv_term.
struct GradientSample {
  Eigen::VectorXd delta;
  Eigen::VectorXd score_term;
  Eigen::VectorXd cv_term;
  bool flagged = false;  // baseline hit a degenerate (zero-variance) input
};

/// Learnable per-coordinate control-variate weights mu (dimension D_x).
struct ControlWeights {
  Eigen::VectorXd mu;

  static ControlWeights ones(Eigen::Index dim) { return {Eigen::VectorXd::Ones(dim)}; }
};

DrawContext make_context(const Problem& problem, const Eigen::VectorXd& theta, double t,
                         Condition c, Eigen::VectorXd epsilon);

/// t ~ U[t_min, t_max], c ~ U{0..C-1}, epsilon ~ N(0, I).
DrawContext draw_context(const Problem& problem, const Eigen::VectorXd& theta, Rng& rng);
DrawContext draw_context(const Problem& problem, const Eigen::VectorXd& theta,
                         std::uint64_t seed);

/// Score Distillation Sampling:
///   delta = w(t) J^T (sigma_t grad log p_t(x_t) + epsilon)
/// with w(t) = NoiseSchedule::estimator_weight(t).
GradientSample sds_sample(const Problem& problem, const Eigen::VectorXd& theta,
                          const DrawContext& ctx);

/// Variational Score Distillation with the exact Gaussian q-score
///   grad log q_t(x | c) = -(x - alpha_t g(theta, c)) / sigma_t^2.
GradientSample vsd_sample_analytic(const Problem& problem, const Eigen::VectorXd& theta,
                                   const DrawContext& ctx);

struct AffineMap {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
};

/// Affine model of grad log q_t(x | c): one map per (t-bucket, condition),
/// buckets splitting [t_min, t_max] evenly.
class SurrogateScoreModel {
 public:
  /// Zero-initialized model (W = 0, b = 0 everywhere).
  SurrogateScoreModel(double t_min, double t_max, std::size_t conditions, Eigen::Index dim,
                      std::size_t bucket_count);
  SurrogateScoreModel(const NoiseSchedule& schedule, std::size_t conditions, Eigen::Index dim,
                      std::size_t bucket_count)
      : SurrogateScoreModel(schedule.t_min(), schedule.t_max(), conditions, dim, bucket_count) {}

  std::size_t bucket_count() const { return buckets_; }
  std::size_t condition_count() const { return conditions_; }
  Eigen::Index dim() const { return dim_; }
  double t_min() const { return t_min_; }
  double t_max() const { return t_max_; }

  /// Throws RangeError when t is not covered.
  std::size_t bucket_of(double t) const;

  AffineMap& map(std::size_t bucket, std::size_t condition);
  const AffineMap& map(std::size_t bucket, std::size_t condition) const;

  Eigen::VectorXd predict(double t, Condition c, const Eigen::VectorXd& x) const;

 private:
  double t_min_;
  double t_max_;
  std::size_t conditions_;
  Eigen::Index dim_;
  std::size_t buckets_;
  std::vector<AffineMap> maps_;  // bucket-major
};

struct SurrogateFitOptions {
  long steps = 0;
  double lr = 1e-3;
  long batch_size = 16;  // fresh draws per step in stochastic mode
  long pool_size = 0;    // > 0: full-batch gradient descent on a fixed pool
  std::uint64_t seed = 0;
};

/// Training pair for denoising score matching.
struct SurrogateExample {
  double t;
  Condition c;
  Eigen::VectorXd x_t;
  Eigen::VectorXd epsilon;
};

/// Deterministic pool drawn as in full-batch fit_surrogate; theta cycles
/// through the snapshots.
std::vector<SurrogateExample> make_surrogate_pool(const Problem& problem,
                                                  std::span<const Eigen::VectorXd> theta_snapshots,
                                                  long pool_size, std::uint64_t seed);

/// Mean of ||sigma_t s(x_t) + epsilon||^2 over the examples.
double surrogate_loss(const SurrogateScoreModel& model, const NoiseSchedule& schedule,
                      std::span<const SurrogateExample> examples);

/// Denoising score matching: minimizes E||sigma_t s(x_t) + epsilon||^2 per
/// bucket/condition by gradient steps. Throws PreconditionError on an empty
/// snapshot list or a negative step count.
SurrogateScoreModel fit_surrogate(SurrogateScoreModel model, const Problem& problem,
                                  std::span<const Eigen::VectorXd> theta_snapshots,
                                  const SurrogateFitOptions& options);

/// VSD with grad log q_t replaced by the surrogate's prediction.
GradientSample vsd_sample_surrogate(const Problem& problem, const Eigen::VectorXd& theta,
                                    const SurrogateScoreModel& model, const DrawContext& ctx);

/// Stein direction sigma_t (grad log q_t(x_t) phi + grad_x phi) = -epsilon phi + sigma_t grad_x phi.
/// Zero-mean over epsilon for any regular phi.
struct SteinDirection {
  Eigen::VectorXd b;
  bool degenerate = false;
};

SteinDirection stein_direction(const Problem& problem, const Eigen::VectorXd& theta,
                               const BaselineFunction& phi, const DrawContext& ctx);

/// Stein Score Distillation:
///   delta = w(t) J^T (sigma_t grad log p_t(x_t) + mu (.) b)
GradientSample ssd_sample(const Problem& problem, const Eigen::VectorXd& theta,
                          const BaselineFunction& phi, const ControlWeights& mu,
                          const DrawContext& ctx);

}  // namespace steinlab
