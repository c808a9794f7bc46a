#pragma once

#include <cstdint>

#include <Eigen/Core>

#include "steinlab/harness.hpp"

namespace steinlab {

/// Dense D_rows x D_cols matrix with N(0, 1) entries from a fixed seed.
Eigen::MatrixXd seeded_gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed);

// Every fixture fills in the fields all estimators need, so configs built for
// different estimators differ only in `estimator` and `name`.

/// Single Gaussian N(m, 0.25 I) in 8 dimensions with m evenly spaced on
/// [-1, 1], identity renderer, sigma_squared weighting. 5000 steps at lr 1e-2.
/// ssd uses the constant baseline with learned mu.
ExperimentConfig gaussian_fixture(EstimatorKind estimator);

/// N(m, I) with the same m, unit weighting and t restricted to [0.02, 0.5].
/// Here the epsilon term of SDS is a poor control variate and the
/// feature_alignment baseline used by ssd beats it.
ExperimentConfig wide_gaussian_fixture(EstimatorKind estimator);

/// Three-component mixture in D_x = 4 seen through three random linear
/// projections of a D_theta = 6 parameter vector, unit weighting, t restricted
/// to [0.02, 0.5]. 3000 steps at lr 3e-2; lr 1.0 diverges.
ExperimentConfig mixture_fixture(EstimatorKind estimator);

}  // namespace steinlab
