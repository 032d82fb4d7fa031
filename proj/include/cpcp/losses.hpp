#pragma once

#include "cpcp/core.hpp"

namespace cpcp {

/// Pinball (quantile) loss rho_tau(q, u) = max{tau*(u-q), (tau-1)*(u-q)}.
/// Nonnegative, zero iff u == q, convex in q.
double pinball(double tau, double q, double u);

/// Subgradient of the pinball loss in q. At the kink u == q the right limit
/// (1 - tau) is returned, i.e. the convention is -tau + 1{u <= q}.
double pinball_subgrad_q(double tau, double q, double u);

/// lambda * mean_i(w_i * rho_i) + (1 - lambda) * mean_i(rho_i).
/// With lambda = 0, or with all weights equal to 1, this is the plain mean
/// pinball loss. Throws on length mismatch.
double weighted_mixed_pinball_batch(double tau, const Vec& preds, const Vec& targets,
                                    const Vec& weights, double lambda);

/// Asymmetric-Laplace negative log-likelihood per sample, up to the constant
/// ln(tau*(1-tau)) which is dropped: ln(sigma) + rho_tau(q, s) / sigma.
/// Throws on sigma <= 0.
double ald_negloglik(double tau, double q, double sigma, double s);

}  // namespace cpcp
