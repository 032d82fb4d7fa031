#pragma once

#include <cstdint>
#include <vector>

#include "cpcp/conformal.hpp"
#include "cpcp/core.hpp"
#include "cpcp/data.hpp"

namespace cpcp {

struct KmeansResult {
  std::vector<std::size_t> assignment;
  Matrix centers;
  Vec wcss_trace;  // within-cluster sum of squares per Lloyd iteration, non-increasing
};

/// Lloyd iterations from k-means++ style seeding; empty clusters are re-seeded
/// at the point farthest from its center. Deterministic given the stream.
KmeansResult kmeans(const Matrix& points, std::size_t K, RngStream& rng,
                    std::size_t max_iter = 100);

/// Cluster-size-weighted squared coverage deviation sum_g (n_g/n)(cov_g - tau)^2
/// for a fixed assignment.
double msce_from_assignment(const std::vector<std::size_t>& assignment, std::size_t K,
                            const std::vector<std::uint8_t>& covered, double tau);

/// K-means MSCE estimate: features are standardized, clustered into K groups,
/// then per-group empirical coverages are compared against tau.
double msce_clustered(const Matrix& features, const std::vector<std::uint8_t>& covered,
                      double tau, std::size_t K, RngStream rng);

/// Exact MSCE on a synthetic oracle: mean over test points of
/// (P(Y in box | x) - tau)^2. x_model feeds the predictor (possibly
/// standardized); x_original feeds the oracle.
double oracle_msce(const ConformalPredictor& predictor, const SyntheticOracle& oracle,
                   const Matrix& x_model, const Matrix& x_original);

/// Worst-slice coverage: random unit directions, (a, b) grid-searched over 41
/// empirical-quantile knots of the projections on a 25% search split subject
/// to slab mass >= mass_fraction; the minimizing slab is re-evaluated on the
/// held-out 75%. Falls back to the 75%-split marginal coverage when no slab
/// qualifies or the winning slab is unconstrained.
double wsc(const Matrix& features, const std::vector<std::uint8_t>& covered,
           double mass_fraction, std::size_t n_directions, RngStream rng);

/// (1/d) * sum_j log(upper_j - lower_j); -infinity for an empty box.
double log_volume_per_dim(const PredictionBox& box);

double marginal_coverage(const std::vector<std::uint8_t>& covered);

}  // namespace cpcp
