#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cpcp/core.hpp"

namespace cpcp {

enum class BaseNoise { normal, laplace };

/// Location-scale generator Y_j = nu(x) + sigma(x) * xi_j with
/// nu(x) = loc_coef * x[loc_index] and sigma(x) = sigma0 + sigma1 * x[sigma_index],
/// features uniform on [0,1]^feature_dim, xi i.i.d. from the base law.
struct SyntheticSpec {
  std::size_t feature_dim = 5;
  std::size_t label_dim = 1;
  BaseNoise base = BaseNoise::normal;
  double loc_coef = 2.0;
  std::size_t loc_index = 1;
  double sigma0 = 0.5;
  double sigma1 = 2.0;
  std::size_t sigma_index = 0;
};

/// Named presets addressable from configs: "default" (heteroscedastic normal),
/// "homoscedastic", "laplace". Throws on unknown names.
SyntheticSpec synthetic_preset(const std::string& name);

/// Analytic handle over a SyntheticSpec: true quantiles, density weights, and
/// exact box coverage for the generated conditional law.
class SyntheticOracle {
 public:
  explicit SyntheticOracle(SyntheticSpec spec) : spec_(spec) {}

  double location(const Vec& x) const;
  double scale(const Vec& x) const;
  double base_cdf(double z) const;
  double base_pdf(double z) const;
  double base_quantile(double p) const;

  /// Conditional tau-quantile of Y_j given x: nu(x) + sigma(x) * F0^{-1}(tau).
  double true_quantile(const Vec& x, double tau) const;
  /// Conditional density of Y at its tau-quantile: f0(z_tau) / sigma(x).
  double true_density_weight(const Vec& x, double tau) const;
  /// tau-quantile of the l-inf residual score max_j |Y_j - nu(x)| for the
  /// oracle point predictor mu = nu: sigma(x) * F0^{-1}((1 + tau^(1/d)) / 2).
  double score_quantile(const Vec& x, double tau) const;
  /// Exact P(Y in product box | x); empty boxes have coverage zero.
  double box_coverage(const Vec& x, const Vec& lower, const Vec& upper) const;

  std::size_t label_dim() const { return spec_.label_dim; }
  const SyntheticSpec& spec() const { return spec_; }

 private:
  SyntheticSpec spec_;
};

struct Dataset {
  Matrix x;
  Matrix y;
  std::optional<SyntheticOracle> oracle;
};

Dataset generate_synthetic(const SyntheticSpec& spec, std::size_t n, RngStream& rng);

/// Comma-separated, UTF-8, '.' decimal, first row header. Rejects NaN/inf and
/// non-numeric cells with a row/column-indexed error.
Dataset load_csv(const std::string& path, const std::vector<std::string>& feature_cols,
                 const std::vector<std::string>& label_cols);
void write_csv(const std::string& path, const Dataset& data,
               const std::vector<std::string>& feature_cols,
               const std::vector<std::string>& label_cols);

/// Per-column affine transform fitted on a row subset; constant columns pass
/// through unchanged.
struct Standardizer {
  Vec mean;
  Vec std;

  static Standardizer fit(const Matrix& x, const std::vector<std::size_t>& rows);
  Matrix apply(const Matrix& x) const;
  Vec apply(const Vec& x) const;
  Matrix invert(const Matrix& x) const;
};

struct DataSplit {
  std::vector<std::size_t> train, cal, test;
};

/// Seeded permutation sliced to sizes floor(0.6n), floor(0.2n), remainder.
/// Throws for n < 10.
DataSplit split_622(std::size_t n, RngStream& rng);

}  // namespace cpcp
