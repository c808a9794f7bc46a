#include "steinlab/check.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "steinlab/baseline.hpp"
#include "steinlab/estimators.hpp"
#include "steinlab/fixtures.hpp"
#include "steinlab/harness.hpp"
#include "steinlab/report.hpp"
#include "steinlab/serialization.hpp"
#include "steinlab/stein.hpp"
#include "steinlab/targets.hpp"

namespace steinlab {

long check_draws(CheckLevel level) { return level == CheckLevel::full ? 100000 : 1000; }

bool CheckReport::all_passed() const {
  for (const auto& r : results) {
    if (!r.passed) return false;
  }
  return !results.empty();
}

MomentAccumulator::MomentAccumulator(Eigen::Index dim)
    : mean_(Eigen::VectorXd::Zero(dim)), m2_(Eigen::VectorXd::Zero(dim)) {}

void MomentAccumulator::add(const Eigen::VectorXd& x) {
  ++n_;
  const Eigen::VectorXd d = x - mean_;
  mean_ += d / static_cast<double>(n_);
  m2_ += d.cwiseProduct(x - mean_);
}

SampleMoments MomentAccumulator::moments() const {
  SampleMoments m;
  m.mean = mean_;
  if (n_ < 2) {
    m.standard_error = Eigen::VectorXd::Constant(mean_.size(), std::numeric_limits<double>::infinity());
  } else {
    const double n = static_cast<double>(n_);
    m.standard_error = (m2_ / (n - 1.0) / n).cwiseSqrt();
  }
  return m;
}

double max_standardized_gap(const SampleMoments& m, const Eigen::VectorXd& expected) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < m.mean.size(); ++i) {
    const double gap = std::abs(m.mean[i] - expected[i]);
    const double se = m.standard_error[i];
    if (se > 0.0) {
      worst = std::max(worst, gap / se);
    } else if (gap > 0.0) {
      return std::numeric_limits<double>::infinity();
    }
  }
  return worst;
}

namespace {

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

/// Norm of the mean against the root-sum-square of the standard errors.
bool mean_within_3se(const SampleMoments& m, const Eigen::VectorXd& expected, std::string& detail) {
  const double gap = (m.mean - expected).norm();
  const double se = m.standard_error.norm();
  detail = "|mean - expected| = " + fmt(gap) + ", 3 SE = " + fmt(3.0 * se);
  return gap <= 3.0 * se;
}

Eigen::VectorXd random_vector(Rng& rng, Eigen::Index n) { return rng.normal_vector(n); }

Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.normal();
  }
  return m;
}

double relative_error(const Eigen::VectorXd& got, const Eigen::VectorXd& want) {
  return (got - want).norm() / std::max(want.norm(), 1e-12);
}

class Suite {
 public:
  Suite(const CheckOptions& options, const std::function<void(const InvariantResult&)>& sink)
      : options_(options), sink_(sink) {}

  template <typename F>
  void run(const std::string& module, const std::string& name, F&& body) {
    const auto start = std::chrono::steady_clock::now();
    InvariantResult r;
    r.module = module;
    r.name = name;
    try {
      r.passed = body(r.detail);
    } catch (const std::exception& e) {
      r.passed = false;
      r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (sink_) sink_(r);
    report_.results.push_back(std::move(r));
  }

  CheckReport take() { return std::move(report_); }
  const CheckOptions& options() const { return options_; }

 private:
  const CheckOptions& options_;
  const std::function<void(const InvariantResult&)>& sink_;
  CheckReport report_;
};

GaussianMixture three_component_2d() {
  std::vector<Eigen::VectorXd> means(3, Eigen::VectorXd(2));
  means[0] << 1.0, 0.5;
  means[1] << -0.8, 1.2;
  means[2] << 0.2, -1.4;
  std::vector<Eigen::VectorXd> covs(3, Eigen::VectorXd(2));
  covs[0] << 0.3, 0.5;
  covs[1] << 0.8, 0.2;
  covs[2] << 0.4, 0.4;
  return GaussianMixture({0.5, 0.3, 0.2}, means, covs);
}

/// Control variate of ssd_sample, optionally with the injected sign fault.
Eigen::VectorXd ssd_cv(const Problem& problem, const Eigen::VectorXd& theta,
                       const BaselineFunction& phi, const ControlWeights& mu,
                       const DrawContext& ctx, bool fault) {
  Eigen::VectorXd cv = ssd_sample(problem, theta, phi, mu, ctx).cv_term;
  if (fault) {
    const double value = baseline_eval(phi, ctx.t, theta, ctx.x_t, ctx.c, problem.renderer).value;
    const double w = problem.schedule.estimator_weight(ctx.t);
    cv += 2.0 * w *
          jacobian_transpose_apply(problem.renderer, theta, ctx.c,
                                   mu.mu.cwiseProduct(ctx.epsilon) * value);
  }
  return cv;
}

void targets_suite(Suite& suite) {
  const long n = check_draws(suite.options().level);
  const std::uint64_t seed = suite.options().seed;

  suite.run("targets", "variance_preserving_identity", [](std::string& detail) {
    const NoiseSchedule schedule;
    double worst = 0.0;
    for (int i = 0; i <= 1000; ++i) {
      const double t = schedule.t_min() + (schedule.t_max() - schedule.t_min()) * i / 1000.0;
      const ScheduleValues s = schedule_eval(schedule, t);
      worst = std::max(worst, std::abs(s.alpha * s.alpha + s.sigma * s.sigma - 1.0));
    }
    detail = "max |alpha^2 + sigma^2 - 1| = " + fmt(worst);
    return worst <= 1e-15;
  });

  suite.run("targets", "score_matches_finite_difference", [&](std::string& detail) {
    const GaussianMixture gmm = three_component_2d();
    const NoiseSchedule schedule;
    Rng rng(derive_seed(seed, 1));
    double worst = 0.0;
    for (int k = 0; k < 50; ++k) {
      const double t = rng.uniform(schedule.t_min(), schedule.t_max());
      const Eigen::VectorXd x = 1.5 * rng.normal_vector(2);
      const Eigen::VectorXd score = perturbed_score(gmm, schedule, t, x);
      Eigen::VectorXd fd(2);
      for (int i = 0; i < 2; ++i) {
        Eigen::VectorXd xp = x, xm = x;
        xp[i] += 1e-5;
        xm[i] -= 1e-5;
        fd[i] = (perturbed_log_density(gmm, schedule, t, xp) -
                 perturbed_log_density(gmm, schedule, t, xm)) / 2e-5;
      }
      worst = std::max(worst, relative_error(score, fd));
    }
    detail = "max relative error = " + fmt(worst);
    return worst <= 1e-6;
  });

  suite.run("targets", "sample_mean_clt", [&](std::string& detail) {
    const GaussianMixture gmm = GaussianMixture::standard_normal(4);
    const NoiseSchedule schedule;
    Rng rng(derive_seed(seed, 2));
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(4);
    for (long i = 0; i < n; ++i) {
      sum += sample_perturbed(gmm, schedule, rng.uniform(0.02, 0.98), rng).x_t;
    }
    const double norm = (sum / static_cast<double>(n)).norm();
    const double bound = 3.0 * std::sqrt(4.0 / static_cast<double>(n));
    detail = "|mean| = " + fmt(norm) + ", bound = " + fmt(bound);
    return norm <= bound;
  });
}

void renderer_suite(Suite& suite) {
  const std::uint64_t seed = suite.options().seed;
  suite.run("renderer", "adjoint_identity", [&](std::string& detail) {
    Rng rng(derive_seed(seed, 3));
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
      const Renderer r = Renderer::linear({random_matrix(rng, 4, 6), random_matrix(rng, 4, 6)});
      const Eigen::VectorXd theta = random_vector(rng, 6);
      const Eigen::VectorXd u = random_vector(rng, 6);
      const Eigen::VectorXd v = random_vector(rng, 4);
      const Condition c{static_cast<std::size_t>(k % 2)};
      const double lhs = jacobian_apply(r, theta, c, u).dot(v);
      const double rhs = u.dot(jacobian_transpose_apply(r, theta, c, v));
      worst = std::max(worst, std::abs(lhs - rhs) / (1.0 + std::abs(lhs)));
    }
    detail = "max |<Au, v> - <u, A^T v>| = " + fmt(worst);
    return worst <= 1e-12;
  });
}

void estimators_suite(Suite& suite) {
  const long n = check_draws(suite.options().level);
  const std::uint64_t seed = suite.options().seed;
  const bool fault = suite.options().inject_stein_sign_fault;
  const ExperimentConfig mixture = mixture_fixture(EstimatorKind::sds);
  const Problem problem = mixture.problem();
  const Eigen::VectorXd theta = mixture.initial_theta();
  const BaselineFunction quadratic =
      BaselineFunction::quadratic(0.3 * Eigen::MatrixXd::Identity(4, 4), Eigen::VectorXd::Zero(4));
  const BaselineFunction alignment = *mixture.baseline;
  ControlWeights mu;
  mu.mu = Eigen::Vector4d(0.5, -1.0, 1.5, 0.8);

  suite.run("estimators", "sds_equals_vsd_analytic", [&](std::string& detail) {
    Rng rng(derive_seed(seed, 4));
    double worst = 0.0;
    for (long i = 0; i < n; ++i) {
      const DrawContext ctx = draw_context(problem, theta, rng);
      worst = std::max(worst, (sds_sample(problem, theta, ctx).delta -
                               vsd_sample_analytic(problem, theta, ctx).delta).cwiseAbs().maxCoeff());
    }
    detail = "max |delta difference| = " + fmt(worst);
    return worst <= 1e-12;
  });

  suite.run("estimators", "ssd_constant_baseline_is_sds", [&](std::string& detail) {
    Rng rng(derive_seed(seed, 5));
    const BaselineFunction neg_one = BaselineFunction::constant_neg_one();
    const ControlWeights ones = ControlWeights::ones(4);
    double worst = 0.0;
    for (long i = 0; i < n; ++i) {
      const DrawContext ctx = draw_context(problem, theta, rng);
      worst = std::max(worst, (sds_sample(problem, theta, ctx).delta -
                               ssd_sample(problem, theta, neg_one, ones, ctx).delta).cwiseAbs().maxCoeff());
    }
    detail = "max |delta difference| = " + fmt(worst);
    return worst <= 1e-12;
  });

  auto zero_mean = [&](const std::string& name, std::uint64_t stream, auto&& cv_of) {
    suite.run("estimators", "cv_zero_mean/" + name, [&](std::string& detail) {
      Rng rng(derive_seed(seed, stream));
      MomentAccumulator acc(theta.size());
      for (long i = 0; i < n; ++i) acc.add(cv_of(draw_context(problem, theta, rng)));
      return mean_within_3se(acc.moments(), Eigen::VectorXd::Zero(theta.size()), detail);
    });
  };
  zero_mean("sds", 6, [&](const DrawContext& ctx) { return sds_sample(problem, theta, ctx).cv_term; });
  zero_mean("vsd_analytic", 7,
            [&](const DrawContext& ctx) { return vsd_sample_analytic(problem, theta, ctx).cv_term; });
  zero_mean("ssd_quadratic", 8, [&](const DrawContext& ctx) {
    return ssd_cv(problem, theta, quadratic, mu, ctx, fault);
  });
  zero_mean("ssd_feature_alignment", 9, [&](const DrawContext& ctx) {
    return ssd_cv(problem, theta, alignment, mu, ctx, fault);
  });

  suite.run("estimators", "mean_matches_kl_gradient", [&](std::string& detail) {
    const ExperimentConfig g = gaussian_fixture(EstimatorKind::sds);
    const Problem gp = g.problem();
    const Eigen::VectorXd th = Eigen::VectorXd::Zero(8);
    const Eigen::VectorXd expected = expected_update_closed_form(th, gp);
    const BaselineFunction phi = BaselineFunction::feature_alignment(
        seeded_gaussian_matrix(4, 8, 11), 1.0);
    const ControlWeights half{Eigen::VectorXd::Constant(8, 0.5)};
    Rng rng(derive_seed(seed, 10));
    MomentAccumulator sds(8), ssd(8);
    for (long i = 0; i < n; ++i) {
      const DrawContext ctx = draw_context(gp, th, rng);
      sds.add(sds_sample(gp, th, ctx).delta);
      ssd.add(ssd_sample(gp, th, phi, half, ctx).delta);
    }
    std::string d1, d2;
    const bool ok = mean_within_3se(sds.moments(), expected, d1) &&
                    mean_within_3se(ssd.moments(), expected, d2);
    detail = "sds: " + d1 + (d2.empty() ? "" : "; ssd: " + d2);
    return ok;
  });

  suite.run("estimators", "zero_surrogate_is_score_term", [&](std::string& detail) {
    const SurrogateScoreModel model(problem.schedule, 3, 4, 4);
    Rng rng(derive_seed(seed, 11));
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const DrawContext ctx = draw_context(problem, theta, rng);
      const GradientSample s = vsd_sample_surrogate(problem, theta, model, ctx);
      worst = std::max(worst, s.cv_term.cwiseAbs().maxCoeff() +
                                  (s.delta - s.score_term).cwiseAbs().maxCoeff());
    }
    detail = "max |cv_term| + |delta - score_term| = " + fmt(worst);
    return worst == 0.0;
  });
}

void stein_suite(Suite& suite) {
  const long n = std::max<long>(check_draws(suite.options().level), 1000);
  const std::uint64_t seed = suite.options().seed;
  const ExperimentConfig mixture = mixture_fixture(EstimatorKind::ssd);
  const Problem problem = mixture.problem();
  const Eigen::VectorXd theta = mixture.initial_theta();

  const std::vector<std::pair<std::string, BaselineFunction>> baselines = {
      {"constant_neg_one", BaselineFunction::constant_neg_one()},
      {"quadratic", BaselineFunction::quadratic(0.3 * Eigen::MatrixXd::Identity(4, 4),
                                                Eigen::VectorXd::Constant(4, 0.2))},
      {"feature_alignment", *mixture.baseline}};
  for (const auto& [name, phi] : baselines) {
    suite.run("stein", "identity_residual/" + name, [&, phi = phi](std::string& detail) {
      const SteinResidual r =
          stein_identity_residual(phi, problem, theta, Condition{1}, 0.3, n, derive_seed(seed, 12));
      detail = "residual = " + fmt(r.residual_norm) + ", 3 SE = " + fmt(3.0 * r.standard_error);
      return r.residual_norm <= 3.0 * r.standard_error;
    });
  }

  suite.run("stein", "baseline_grad_finite_difference", [&](std::string& detail) {
    Rng rng(derive_seed(seed, 13));
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
      const Eigen::Index dx = 3 + k % 4;
      const Renderer r = Renderer::identity(dx);
      const Eigen::VectorXd theta_k = random_vector(rng, dx);
      const Eigen::VectorXd x = random_vector(rng, dx);
      Eigen::MatrixXd a = random_matrix(rng, dx, dx);
      a = 0.5 * (a + a.transpose()).eval();
      const BaselineFunction phi =
          k % 2 == 0 ? BaselineFunction::feature_alignment(random_matrix(rng, dx, dx), 0.7)
                     : BaselineFunction::quadratic(a, random_vector(rng, dx), random_vector(rng, dx));
      const Eigen::VectorXd grad = baseline_grad_x(phi, 0.4, theta_k, x, Condition{}, r).grad;
      Eigen::VectorXd fd(dx);
      for (Eigen::Index i = 0; i < dx; ++i) {
        Eigen::VectorXd xp = x, xm = x;
        xp[i] += 1e-6;
        xm[i] -= 1e-6;
        fd[i] = (baseline_eval(phi, 0.4, theta_k, xp, Condition{}, r).value -
                 baseline_eval(phi, 0.4, theta_k, xm, Condition{}, r).value) / 2e-6;
      }
      worst = std::max(worst, relative_error(grad, fd));
    }
    detail = "max relative error = " + fmt(worst);
    return worst <= 1e-5;
  });

  suite.run("stein", "mu_gradient_finite_difference", [&](std::string& detail) {
    Rng rng(derive_seed(seed, 14));
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
      const Eigen::VectorXd th = random_vector(rng, 6);
      const DrawContext ctx = draw_context(problem, th, rng);
      const ControlWeights mu{random_vector(rng, 4)};
      const BaselineFunction& phi = baselines[1 + k % 2].second;
      const Eigen::VectorXd grad = mu_gradient(problem, th, phi, mu, ctx);
      Eigen::VectorXd fd(4);
      for (int i = 0; i < 4; ++i) {
        ControlWeights up = mu, down = mu;
        up.mu[i] += 1e-5;
        down.mu[i] -= 1e-5;
        fd[i] = (ssd_sample(problem, th, phi, up, ctx).delta.squaredNorm() -
                 ssd_sample(problem, th, phi, down, ctx).delta.squaredNorm()) / 2e-5;
      }
      worst = std::max(worst, relative_error(grad, fd));
    }
    detail = "max relative error = " + fmt(worst);
    return worst <= 1e-5;
  });

  suite.run("stein", "closed_form_mu_minimizes_second_moment", [&](std::string& detail) {
    Rng rng(derive_seed(seed, 15));
    const Eigen::Index size = 2000;
    Eigen::MatrixXd xi(size, 3), delta(size, 3);
    for (Eigen::Index i = 0; i < size; ++i) {
      xi.row(i) = rng.normal_vector(3).transpose();
      delta.row(i) = (Eigen::Vector3d(1.0, -0.5, 0.0).cwiseProduct(xi.row(i).transpose()) +
                      rng.normal_vector(3) + Eigen::Vector3d(2.0, 0.0, -1.0)).transpose();
    }
    const ClosedFormMu cf = optimal_mu_closed_form(PairedSampleSet(delta, xi));
    double worst = 0.0;
    for (Eigen::Index j = 0; j < 3; ++j) {
      const Eigen::VectorXd dc = delta.col(j).array() - delta.col(j).mean();
      const Eigen::VectorXd xc = xi.col(j).array() - xi.col(j).mean();
      double best_mu = 0.0, best = std::numeric_limits<double>::infinity();
      for (int g = -3000; g <= 3000; ++g) {
        const double m = g * 1e-3;
        const double v = (dc + m * xc).squaredNorm();
        if (v < best) best = v, best_mu = m;
      }
      worst = std::max(worst, std::abs(cf.mu[j] - best_mu) - 1e-3);
    }
    detail = "max |mu - grid minimizer| beyond grid spacing = " + fmt(worst);
    return worst <= 0.0;
  });
}

void harness_suite(Suite& suite) {
  const long n = check_draws(suite.options().level);
  const std::uint64_t seed = suite.options().seed;

  suite.run("harness", "kl_zero_at_target_mean", [](std::string& detail) {
    const ExperimentConfig g = gaussian_fixture(EstimatorKind::sds);
    const double kl =
        kl_metric(g.target.means().front(), g.problem(), KlMode::closed_form, 0, 0).value;
    detail = "kl = " + fmt(kl);
    return std::abs(kl) <= 1e-12;
  });

  suite.run("harness", "kl_monte_carlo_matches_closed_form", [&](std::string& detail) {
    const ExperimentConfig g = gaussian_fixture(EstimatorKind::sds);
    const Eigen::VectorXd theta = Eigen::VectorXd::LinSpaced(8, 0.5, -0.5);
    const double exact = kl_metric(theta, g.problem(), KlMode::closed_form, 0, 0).value;
    const KlEstimate mc = kl_metric(theta, g.problem(), KlMode::monte_carlo, n, derive_seed(seed, 16));
    detail = "closed = " + fmt(exact) + ", mc = " + fmt(mc.value) + " +- " + fmt(mc.standard_error);
    return std::abs(mc.value - exact) <= 3.0 * mc.standard_error;
  });

  suite.run("harness", "probe_unbiased_at_optimum", [&](std::string& detail) {
    bool ok = true;
    for (auto kind : {EstimatorKind::sds, EstimatorKind::vsd_analytic, EstimatorKind::ssd}) {
      ExperimentConfig g = gaussian_fixture(kind);
      g.probe_draws = n;
      const VarianceReport r = variance_probe(g, initial_state(g), g.target.means().front(), 0,
                                              derive_seed(seed, 17));
      const double bound = 3.0 * std::sqrt(r.total_variance / static_cast<double>(n));
      detail += std::string(detail.empty() ? "" : "; ") + std::string(to_string(kind)) + " " +
                fmt(r.mean_norm) + " <= " + fmt(bound);
      ok = ok && r.mean_norm <= bound;
    }
    return ok;
  });

  suite.run("harness", "run_is_deterministic", [](std::string& detail) {
    ExperimentConfig cfg = mixture_fixture(EstimatorKind::ssd);
    cfg.steps = 300;
    cfg.probe_draws = 50;
    cfg.kl_samples = 256;
    std::ostringstream a, b;
    write_trajectory_csv(a, run_distillation(cfg));
    write_trajectory_csv(b, run_distillation(cfg));
    detail = a.str() == b.str() ? "identical CSV" : "CSV differs";
    return a.str() == b.str();
  });

  suite.run("harness", "constant_baseline_ssd_equals_sds", [](std::string& detail) {
    ExperimentConfig a = gaussian_fixture(EstimatorKind::sds);
    ExperimentConfig b = gaussian_fixture(EstimatorKind::ssd);
    a.steps = b.steps = 200;
    a.probe_every = b.probe_every = 50;
    a.probe_draws = b.probe_draws = 50;
    b.lr_mu = 0.0;
    const Trajectory ta = run_distillation(a), tb = run_distillation(b);
    double worst = 0.0;
    for (std::size_t i = 0; i < ta.records.size(); ++i) {
      worst = std::max(worst, std::abs(ta.records[i].variance->total_variance -
                                       tb.records[i].variance->total_variance));
    }
    worst = std::max(worst, (ta.final_theta - tb.final_theta).cwiseAbs().maxCoeff());
    detail = "max difference = " + fmt(worst);
    return ta.records.size() == tb.records.size() && worst <= 1e-12;
  });
}

void cli_suite(Suite& suite) {
  suite.run("cli", "config_round_trip", [](std::string& detail) {
    int checked = 0;
    for (auto make : {&gaussian_fixture, &wide_gaussian_fixture, &mixture_fixture}) {
      for (auto kind : {EstimatorKind::sds, EstimatorKind::ssd, EstimatorKind::vsd_surrogate}) {
        const Json canonical = to_json(make(kind));
        if (to_json(parse_config(canonical)) != canonical) {
          detail = "round trip changed " + canonical.value("name", std::string("?"));
          return false;
        }
        ++checked;
      }
    }
    detail = std::to_string(checked) + " configs";
    return true;
  });

  suite.run("cli", "csv_header", [](std::string& detail) {
    std::ostringstream out;
    write_trajectory_csv(out, Trajectory{});
    detail = out.str().substr(0, out.str().find('\n'));
    return detail == "step,kl,var_total,var_max,mean_norm";
  });
}

}  // namespace

CheckReport run_checks(const CheckOptions& options,
                       const std::function<void(const InvariantResult&)>& on_result) {
  const auto start = std::chrono::steady_clock::now();
  Suite suite(options, on_result);
  targets_suite(suite);
  renderer_suite(suite);
  estimators_suite(suite);
  stein_suite(suite);
  harness_suite(suite);
  cli_suite(suite);
  CheckReport report = suite.take();
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace steinlab
