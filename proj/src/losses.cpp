#include "cpcp/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cpcp {

double pinball(double tau, double q, double u) {
  const double d = u - q;
  return std::max(tau * d, (tau - 1.0) * d);
}

double pinball_subgrad_q(double tau, double q, double u) {
  return u <= q ? 1.0 - tau : -tau;
}

double weighted_mixed_pinball_batch(double tau, const Vec& preds, const Vec& targets,
                                    const Vec& weights, double lambda) {
  const std::size_t n = preds.size();
  if (targets.size() != n || weights.size() != n) {
    throw std::invalid_argument("weighted_mixed_pinball_batch: length mismatch (preds " +
                                std::to_string(n) + ", targets " +
                                std::to_string(targets.size()) + ", weights " +
                                std::to_string(weights.size()) + ")");
  }
  if (n == 0) return 0.0;
  double weighted = 0.0;
  double plain = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double rho = pinball(tau, preds[i], targets[i]);
    weighted += weights[i] * rho;
    plain += rho;
  }
  const double dn = static_cast<double>(n);
  return lambda * (weighted / dn) + (1.0 - lambda) * (plain / dn);
}

double ald_negloglik(double tau, double q, double sigma, double s) {
  if (!(sigma > 0.0)) {
    throw std::invalid_argument("ald_negloglik: sigma must be positive");
  }
  return std::log(sigma) + pinball(tau, q, s) / sigma;
}

}  // namespace cpcp
