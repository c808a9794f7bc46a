#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "steinlab/baseline.hpp"
#include "steinlab/harness.hpp"
#include "steinlab/renderer.hpp"
#include "steinlab/targets.hpp"

namespace steinlab {

using Json = nlohmann::json;

// Each parse_* function throws ConfigError carrying the JSON path (rooted at
// `path`) of the first offending entry.

Json to_json(const GaussianMixture& gmm);
GaussianMixture parse_gaussian_mixture(const Json& j, const std::string& path = "");

Json to_json(const Renderer& renderer);
/// `default_dim` fills in an identity renderer's "dim" when it is omitted.
Renderer parse_renderer(const Json& j, const std::string& path = "", Eigen::Index default_dim = 0);

Json to_json(const NoiseSchedule& schedule);
NoiseSchedule parse_schedule(const Json& j, const std::string& path = "");

Json to_json(const BaselineFunction& phi);
BaselineFunction parse_baseline(const Json& j, const std::string& path = "");

/// Canonical form: every field written, in a fixed order.
Json to_json(const ExperimentConfig& config);
ExperimentConfig parse_config(const Json& j);

/// Reads and validates a config file. JSON syntax errors are reported with
/// their line and column.
ExperimentConfig load_config(const std::filesystem::path& file);
ExperimentConfig parse_config_text(std::string_view text);

Json vector_to_json(const Eigen::VectorXd& v);

}  // namespace steinlab
