#include "steinlab/serialization.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "steinlab/errors.hpp"

namespace steinlab {
namespace {

std::string join(const std::string& path, std::string_view key) {
  return path + "/" + std::string(key);
}

std::string join(const std::string& path, std::size_t index) {
  return path + "/" + std::to_string(index);
}

const Json& require(const Json& obj, std::string_view key, const std::string& path) {
  if (!obj.is_object()) throw ConfigError(path.empty() ? "/" : path, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw ConfigError(join(path, key), "missing required field");
  return *it;
}

void reject_unknown(const Json& obj, const std::set<std::string>& known, const std::string& path) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!known.contains(it.key())) throw ConfigError(join(path, it.key()), "unknown field");
  }
}

double as_number(const Json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ConfigError(path, "expected a finite number");
  return v;
}

long as_integer(const Json& j, const std::string& path) {
  if (!j.is_number_integer()) throw ConfigError(path, "expected an integer");
  return j.get<long>();
}

std::string as_string(const Json& j, const std::string& path) {
  if (!j.is_string()) throw ConfigError(path, "expected a string");
  return j.get<std::string>();
}

bool as_bool(const Json& j, const std::string& path) {
  if (!j.is_boolean()) throw ConfigError(path, "expected true or false");
  return j.get<bool>();
}

Eigen::VectorXd as_vector(const Json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path, "expected an array of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    v[static_cast<Eigen::Index>(i)] = as_number(j[i], join(path, i));
  }
  return v;
}

/// Row-major nested arrays.
Eigen::MatrixXd as_matrix(const Json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) throw ConfigError(path, "expected a non-empty array of rows");
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  if (cols == 0) throw ConfigError(join(path, std::size_t{0}), "expected a non-empty row");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    const Eigen::VectorXd row = as_vector(j[r], join(path, r));
    if (static_cast<std::size_t>(row.size()) != cols) {
      throw ConfigError(join(path, r), "row length differs from the first row");
    }
    m.row(static_cast<Eigen::Index>(r)) = row.transpose();
  }
  return m;
}

Json matrix_to_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vector_to_json(m.row(r).transpose()));
  return rows;
}

/// Runs a domain constructor, turning its validation errors into ConfigError.
template <typename F>
auto construct(const std::string& path, F&& make) -> decltype(make()) {
  try {
    return make();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(path.empty() ? "/" : path, e.what());
  }
}

}  // namespace

Json vector_to_json(const Eigen::VectorXd& v) {
  Json arr = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

Json to_json(const GaussianMixture& gmm) {
  Json means = Json::array();
  Json covs = Json::array();
  for (std::size_t k = 0; k < gmm.size(); ++k) {
    means.push_back(vector_to_json(gmm.means()[k]));
    covs.push_back(vector_to_json(gmm.covariances()[k]));
  }
  return Json{{"weights", gmm.weights()}, {"means", means}, {"covariances", covs}};
}

GaussianMixture parse_gaussian_mixture(const Json& j, const std::string& path) {
  const Json& jw = require(j, "weights", path);
  const Json& jm = require(j, "means", path);
  const Json& jc = require(j, "covariances", path);
  reject_unknown(j, {"weights", "means", "covariances"}, path);
  const Eigen::VectorXd w = as_vector(jw, join(path, "weights"));
  if (!jm.is_array()) throw ConfigError(join(path, "means"), "expected an array of vectors");
  if (!jc.is_array()) throw ConfigError(join(path, "covariances"), "expected an array of vectors");
  std::vector<Eigen::VectorXd> means, covs;
  for (std::size_t k = 0; k < jm.size(); ++k) {
    means.push_back(as_vector(jm[k], join(join(path, "means"), k)));
  }
  for (std::size_t k = 0; k < jc.size(); ++k) {
    covs.push_back(as_vector(jc[k], join(join(path, "covariances"), k)));
  }
  return construct(path, [&] {
    return GaussianMixture(std::vector<double>(w.data(), w.data() + w.size()), means, covs);
  });
}

Json to_json(const Renderer& renderer) {
  if (renderer.kind() == RendererKind::identity) {
    return Json{{"kind", "identity"},
                {"dim", renderer.input_dim()},
                {"conditions", renderer.condition_count()}};
  }
  Json projections = Json::array();
  for (const auto& a : renderer.projections()) projections.push_back(matrix_to_json(a));
  return Json{{"kind", "linear"}, {"projections", projections}};
}

Renderer parse_renderer(const Json& j, const std::string& path, Eigen::Index default_dim) {
  const std::string kind = as_string(require(j, "kind", path), join(path, "kind"));
  if (kind == "identity") {
    reject_unknown(j, {"kind", "dim", "conditions"}, path);
    Eigen::Index dim = default_dim;
    if (j.contains("dim")) dim = as_integer(j["dim"], join(path, "dim"));
    long conditions = 1;
    if (j.contains("conditions")) conditions = as_integer(j["conditions"], join(path, "conditions"));
    if (dim <= 0) throw ConfigError(join(path, "dim"), "must be a positive integer");
    if (conditions < 1) throw ConfigError(join(path, "conditions"), "must be >= 1");
    return Renderer::identity(dim, static_cast<std::size_t>(conditions));
  }
  if (kind == "linear") {
    reject_unknown(j, {"kind", "projections"}, path);
    const Json& jp = require(j, "projections", path);
    if (!jp.is_array()) throw ConfigError(join(path, "projections"), "expected an array of matrices");
    std::vector<Eigen::MatrixXd> projections;
    for (std::size_t c = 0; c < jp.size(); ++c) {
      projections.push_back(as_matrix(jp[c], join(join(path, "projections"), c)));
    }
    return construct(join(path, "projections"), [&] { return Renderer::linear(projections); });
  }
  throw ConfigError(join(path, "kind"), "expected \"identity\" or \"linear\"");
}

Json to_json(const NoiseSchedule& schedule) {
  return Json{{"kind", "variance_preserving"},
              {"t_min", schedule.t_min()},
              {"t_max", schedule.t_max()},
              {"weight_kind", schedule.weight_kind() == WeightKind::unit ? "unit" : "sigma_squared"}};
}

NoiseSchedule parse_schedule(const Json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  reject_unknown(j, {"kind", "t_min", "t_max", "weight_kind"}, path);
  if (j.contains("kind") && as_string(j["kind"], join(path, "kind")) != "variance_preserving") {
    throw ConfigError(join(path, "kind"), "only \"variance_preserving\" is supported");
  }
  double t_min = NoiseSchedule::kDefaultTMin;
  double t_max = NoiseSchedule::kDefaultTMax;
  if (j.contains("t_min")) t_min = as_number(j["t_min"], join(path, "t_min"));
  if (j.contains("t_max")) t_max = as_number(j["t_max"], join(path, "t_max"));
  WeightKind weight = WeightKind::unit;
  if (j.contains("weight_kind")) {
    const std::string w = as_string(j["weight_kind"], join(path, "weight_kind"));
    if (w == "unit") {
      weight = WeightKind::unit;
    } else if (w == "sigma_squared") {
      weight = WeightKind::sigma_squared;
    } else {
      throw ConfigError(join(path, "weight_kind"), "expected \"unit\" or \"sigma_squared\"");
    }
  }
  return construct(path, [&] { return NoiseSchedule(t_min, t_max, weight); });
}

Json to_json(const BaselineFunction& phi) {
  switch (phi.kind()) {
    case BaselineKind::constant_neg_one:
      return Json{{"kind", "constant_neg_one"}};
    case BaselineKind::quadratic:
      return Json{{"kind", "quadratic"},
                  {"A", matrix_to_json(phi.matrix())},
                  {"center", vector_to_json(phi.center())},
                  {"linear", vector_to_json(phi.linear())}};
    case BaselineKind::feature_alignment:
      return Json{{"kind", "feature_alignment"},
                  {"F", matrix_to_json(phi.matrix())},
                  {"scale", phi.scale()}};
  }
  return {};
}

BaselineFunction parse_baseline(const Json& j, const std::string& path) {
  const std::string kind = as_string(require(j, "kind", path), join(path, "kind"));
  if (kind == "constant_neg_one") {
    reject_unknown(j, {"kind"}, path);
    return BaselineFunction::constant_neg_one();
  }
  if (kind == "quadratic") {
    reject_unknown(j, {"kind", "A", "center", "linear"}, path);
    Eigen::MatrixXd a = as_matrix(require(j, "A", path), join(path, "A"));
    Eigen::VectorXd center = as_vector(require(j, "center", path), join(path, "center"));
    Eigen::VectorXd linear;
    if (j.contains("linear")) linear = as_vector(j["linear"], join(path, "linear"));
    return construct(path, [&] { return BaselineFunction::quadratic(a, center, linear); });
  }
  if (kind == "feature_alignment") {
    reject_unknown(j, {"kind", "F", "scale"}, path);
    Eigen::MatrixXd f = as_matrix(require(j, "F", path), join(path, "F"));
    double scale = BaselineFunction::kDefaultAlignmentScale;
    if (j.contains("scale")) scale = as_number(j["scale"], join(path, "scale"));
    return construct(path, [&] { return BaselineFunction::feature_alignment(f, scale); });
  }
  throw ConfigError(join(path, "kind"),
                    "expected \"constant_neg_one\", \"quadratic\" or \"feature_alignment\"");
}

Json to_json(const ExperimentConfig& config) {
  Json j;
  j["name"] = config.name;
  j["target"] = to_json(config.target);
  j["renderer"] = to_json(config.renderer);
  j["schedule"] = to_json(config.schedule);
  j["estimator"] = std::string(to_string(config.estimator));
  j["baseline"] = config.baseline ? to_json(*config.baseline) : Json(nullptr);
  j["theta_init"] = vector_to_json(config.initial_theta());
  j["steps"] = config.steps;
  j["lr_theta"] = config.lr_theta;
  j["lr_mu"] = config.lr_mu;
  j["mu_update_every"] = config.mu_update_every;
  j["mu_batch"] = config.mu_batch;
  j["probe_every"] = config.probe_every;
  j["probe_draws"] = config.probe_draws;
  j["seed"] = config.seed;
  j["fold_alpha"] = config.fold_alpha;
  j["kl_samples"] = config.kl_samples;
  j["kl_threshold"] = config.kl_threshold ? Json(*config.kl_threshold) : Json(nullptr);
  j["surrogate"] = Json{{"bucket_count", config.surrogate.bucket_count},
                        {"fit_every", config.surrogate.fit_every},
                        {"fit_steps", config.surrogate.fit_steps},
                        {"batch", config.surrogate.batch},
                        {"lr", config.surrogate.lr}};
  return j;
}

ExperimentConfig parse_config(const Json& j) {
  if (!j.is_object()) throw ConfigError("/", "config must be a JSON object");
  reject_unknown(j,
                 {"name", "target", "renderer", "schedule", "estimator", "baseline", "theta_init",
                  "steps", "lr_theta", "lr_mu", "mu_update_every", "mu_batch", "probe_every",
                  "probe_draws", "seed", "fold_alpha", "kl_samples", "kl_threshold", "surrogate"},
                 "");
  GaussianMixture target = parse_gaussian_mixture(require(j, "target", ""), "/target");
  Renderer renderer = parse_renderer(require(j, "renderer", ""), "/renderer", target.dim());
  NoiseSchedule schedule = j.contains("schedule") ? parse_schedule(j["schedule"], "/schedule")
                                                  : NoiseSchedule();
  ExperimentConfig cfg(std::move(target), std::move(renderer), schedule);

  if (j.contains("name")) cfg.name = as_string(j["name"], "/name");
  const std::string est = as_string(require(j, "estimator", ""), "/estimator");
  const auto kind = parse_estimator_kind(est);
  if (!kind) {
    throw ConfigError("/estimator", "expected one of sds, vsd_analytic, vsd_surrogate, ssd");
  }
  cfg.estimator = *kind;
  if (j.contains("baseline") && !j["baseline"].is_null()) {
    cfg.baseline = parse_baseline(j["baseline"], "/baseline");
  }
  if (j.contains("theta_init")) cfg.theta_init = as_vector(j["theta_init"], "/theta_init");
  cfg.steps = as_integer(require(j, "steps", ""), "/steps");
  cfg.lr_theta = as_number(require(j, "lr_theta", ""), "/lr_theta");
  if (j.contains("lr_mu")) cfg.lr_mu = as_number(j["lr_mu"], "/lr_mu");
  if (j.contains("mu_update_every")) cfg.mu_update_every = as_integer(j["mu_update_every"], "/mu_update_every");
  if (j.contains("mu_batch")) cfg.mu_batch = as_integer(j["mu_batch"], "/mu_batch");
  if (j.contains("probe_every")) cfg.probe_every = as_integer(j["probe_every"], "/probe_every");
  if (j.contains("probe_draws")) cfg.probe_draws = as_integer(j["probe_draws"], "/probe_draws");
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) throw ConfigError("/seed", "expected a non-negative integer");
    cfg.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("fold_alpha")) cfg.fold_alpha = as_bool(j["fold_alpha"], "/fold_alpha");
  if (j.contains("kl_samples")) cfg.kl_samples = as_integer(j["kl_samples"], "/kl_samples");
  if (j.contains("kl_threshold") && !j["kl_threshold"].is_null()) {
    cfg.kl_threshold = as_number(j["kl_threshold"], "/kl_threshold");
  }
  if (j.contains("surrogate")) {
    const Json& s = j["surrogate"];
    if (!s.is_object()) throw ConfigError("/surrogate", "expected an object");
    reject_unknown(s, {"bucket_count", "fit_every", "fit_steps", "batch", "lr"}, "/surrogate");
    if (s.contains("bucket_count")) {
      const long b = as_integer(s["bucket_count"], "/surrogate/bucket_count");
      if (b < 1) throw ConfigError("/surrogate/bucket_count", "must be >= 1");
      cfg.surrogate.bucket_count = static_cast<std::size_t>(b);
    }
    if (s.contains("fit_every")) cfg.surrogate.fit_every = as_integer(s["fit_every"], "/surrogate/fit_every");
    if (s.contains("fit_steps")) cfg.surrogate.fit_steps = as_integer(s["fit_steps"], "/surrogate/fit_steps");
    if (s.contains("batch")) cfg.surrogate.batch = as_integer(s["batch"], "/surrogate/batch");
    if (s.contains("lr")) cfg.surrogate.lr = as_number(s["lr"], "/surrogate/lr");
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig parse_config_text(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    std::size_t line = 1, column = 1;
    const std::size_t limit = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    for (std::size_t i = 0; i < limit; ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    throw ConfigError("", "JSON syntax error at line " + std::to_string(line) + ", column " +
                              std::to_string(column) + ": " + e.what());
  }
  return parse_config(j);
}

ExperimentConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("", "cannot open config file " + file.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str());
}

}  // namespace steinlab
