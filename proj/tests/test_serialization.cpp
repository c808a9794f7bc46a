#include <gtest/gtest.h>

#include <string>

#include "steinlab/errors.hpp"
#include "steinlab/fixtures.hpp"
#include "steinlab/serialization.hpp"

using namespace steinlab;

namespace {

std::string field_of(const std::string& text) {
  try {
    parse_config_text(text);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "<no error>";
}

Json minimal() {
  return Json::parse(R"({
    "target": {"weights": [1.0], "means": [[0.0, 1.0]], "covariances": [[1.0, 1.0]]},
    "renderer": {"kind": "identity"},
    "estimator": "sds",
    "steps": 10,
    "lr_theta": 0.01
  })");
}

}  // namespace

TEST(ConfigRoundTrip, CanonicalFormIsFixedPoint) {
  for (auto make : {&gaussian_fixture, &wide_gaussian_fixture, &mixture_fixture}) {
    for (auto kind : {EstimatorKind::sds, EstimatorKind::vsd_analytic, EstimatorKind::vsd_surrogate,
                      EstimatorKind::ssd}) {
      const Json once = to_json(make(kind));
      const Json twice = to_json(parse_config(once));
      EXPECT_EQ(once, twice) << once["name"];
      EXPECT_EQ(once.dump(), twice.dump());
    }
  }
}

TEST(ConfigRoundTrip, QuadraticBaselineAndThreshold) {
  ExperimentConfig cfg = gaussian_fixture(EstimatorKind::ssd);
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(8, 8) * 0.5;
  a(0, 1) = a(1, 0) = 0.25;
  cfg.baseline = BaselineFunction::quadratic(a, Eigen::VectorXd::LinSpaced(8, 0, 1),
                                             Eigen::VectorXd::Constant(8, 0.1));
  cfg.kl_threshold = 0.125;
  cfg.fold_alpha = false;
  cfg.seed = 18446744073709551615ULL;
  const Json once = to_json(cfg);
  const ExperimentConfig back = parse_config(once);
  EXPECT_EQ(to_json(back), once);
  EXPECT_EQ(back.seed, cfg.seed);
  EXPECT_EQ(back.baseline->matrix(), a);
}

TEST(ConfigRoundTrip, DoublesSurviveExactly) {
  ExperimentConfig cfg = mixture_fixture(EstimatorKind::ssd);
  const ExperimentConfig back = parse_config_text(to_json(cfg).dump());
  EXPECT_EQ(back.renderer.projections()[1], cfg.renderer.projections()[1]);
  EXPECT_EQ(back.baseline->matrix(), cfg.baseline->matrix());
  EXPECT_EQ(back.theta_init, cfg.theta_init);
}

TEST(ParseConfig, DefaultsFillOptionalFields) {
  const ExperimentConfig cfg = parse_config(minimal());
  EXPECT_EQ(cfg.renderer.kind(), RendererKind::identity);
  EXPECT_EQ(cfg.renderer.input_dim(), 2);
  EXPECT_EQ(cfg.schedule.t_min(), NoiseSchedule::kDefaultTMin);
  EXPECT_EQ(cfg.probe_every, 100);
  EXPECT_FALSE(cfg.baseline.has_value());
}

TEST(ParseConfig, ReportsOffendingField) {
  Json j = minimal();
  j.erase("steps");
  EXPECT_EQ(field_of(j.dump()), "/steps");

  j = minimal();
  j["lr_theta"] = -1.0;
  EXPECT_EQ(field_of(j.dump()), "/lr_theta");

  j = minimal();
  j["target"]["covariances"][0][1] = "wide";
  EXPECT_EQ(field_of(j.dump()), "/target/covariances/0/1");

  j = minimal();
  j["estimator"] = "ssd";
  EXPECT_EQ(field_of(j.dump()), "/baseline");

  j = minimal();
  j["bogus"] = 1;
  EXPECT_EQ(field_of(j.dump()), "/bogus");

  j = minimal();
  j["renderer"] = {{"kind", "mesh"}};
  EXPECT_EQ(field_of(j.dump()), "/renderer/kind");

  j = minimal();
  j["schedule"] = {{"t_min", 0.5}, {"t_max", 0.2}};
  EXPECT_EQ(field_of(j.dump()).rfind("/schedule", 0), 0u);

  j = minimal();
  j["target"]["weights"] = {0.4};
  EXPECT_EQ(field_of(j.dump()).rfind("/target", 0), 0u);
}

TEST(ParseConfig, SyntaxErrorCarriesLineAndColumn) {
  try {
    parse_config_text("{\n  \"steps\": 10,\n  \"lr_theta\": ,\n}");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "");
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("column"), std::string::npos) << e.what();
  }
}

TEST(ParseConfig, MissingFileThrows) {
  EXPECT_THROW(load_config("/nonexistent/steinlab.json"), ConfigError);
}

TEST(ParseBaseline, FeatureAlignment) {
  const BaselineFunction phi = parse_baseline(
      Json::parse(R"({"kind": "feature_alignment", "F": [[1, 0, 2], [0, 1, -1]], "scale": 0.5})"));
  EXPECT_EQ(phi.kind(), BaselineKind::feature_alignment);
  EXPECT_EQ(phi.scale(), 0.5);
  EXPECT_EQ(phi.matrix().rows(), 2);
  EXPECT_EQ(phi.matrix()(0, 2), 2.0);
}

TEST(ParseRenderer, LinearRowMajor) {
  const Renderer r = parse_renderer(Json::parse(R"({"kind": "linear", "projections": [[[1, 2, 3], [4, 5, 6]]]})"));
  EXPECT_EQ(r.output_dim(), 2);
  EXPECT_EQ(r.input_dim(), 3);
  EXPECT_EQ(r.projections()[0](1, 0), 4.0);
}

TEST(VectorToJson, PlainArray) {
  EXPECT_EQ(vector_to_json(Eigen::Vector3d(1.5, -2.0, 0.0)), Json::parse("[1.5, -2.0, 0.0]"));
}
