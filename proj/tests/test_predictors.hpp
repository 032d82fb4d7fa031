// Test-only stub predictors and quantile functions.
#pragma once

#include <functional>
#include <string>

#include "cpcp/conformal.hpp"
#include "cpcp/nn.hpp"

namespace testpred {

inline cpcp::Regressor constant_regressor(std::size_t in_dim, const cpcp::Vec& value) {
  cpcp::Regressor r;
  r.net.layers.push_back(
      cpcp::DenseLayer{cpcp::Matrix(value.size(), in_dim, 0.0), cpcp::Vec(value.size(), 0.0)});
  r.y_mean = value;
  r.y_std.assign(value.size(), 1.0);
  return r;
}

// mu(x) = coef . x, one output.
inline cpcp::Regressor linear_regressor(const cpcp::Vec& coef) {
  cpcp::Regressor r;
  cpcp::DenseLayer l{cpcp::Matrix(1, coef.size(), 0.0), cpcp::Vec(1, 0.0)};
  for (std::size_t j = 0; j < coef.size(); ++j) l.w(0, j) = coef[j];
  r.net.layers.push_back(std::move(l));
  r.y_mean = {0.0};
  r.y_std = {1.0};
  return r;
}

class FnQuantile : public cpcp::ScalarQuantileFn {
 public:
  std::function<double(const cpcp::Vec&)> fn;

  explicit FnQuantile(std::function<double(const cpcp::Vec&)> f) : fn(std::move(f)) {}
  double quantile(const cpcp::Vec& x) const override { return fn(x); }
  std::string kind() const override { return "test-fn"; }
  void save(std::ostream&) const override {}
};

// Analytic predictor: centers at the true location, instance threshold equal
// to the exact conditional score quantile plus a forced shift (default zero).
// Must be fed *original* (unstandardized) features.
class OracleBoxPredictor : public cpcp::ConformalPredictor {
 public:
  const cpcp::SyntheticOracle* oracle;

  OracleBoxPredictor(const cpcp::SyntheticOracle* o, double tau, double gamma = 0.0)
      : cpcp::ConformalPredictor("oracle", tau, gamma, false), oracle(o) {}

  std::size_t label_dim() const override { return oracle->label_dim(); }

  cpcp::PredictionBox predict_box(const cpcp::Vec& x) const override {
    const double nu = oracle->location(x);
    const double t = oracle->score_quantile(x, tau_) + shift_;
    cpcp::PredictionBox box;
    box.lower.assign(oracle->label_dim(), nu - t);
    box.upper.assign(oracle->label_dim(), nu + t);
    return box;
  }

  bool covers(const cpcp::Vec& x, const cpcp::Vec& y) const override {
    const double nu = oracle->location(x);
    const double t = oracle->score_quantile(x, tau_) + shift_;
    double score = 0.0;
    for (double yj : y) score = std::max(score, std::fabs(yj - nu));
    return score <= t;
  }
};

// Constant-threshold predictor around a fixed center (for hand-computed MSCE
// scenarios).
class FixedBoxPredictor : public cpcp::ConformalPredictor {
 public:
  double center, half_width;
  std::size_t dims;

  FixedBoxPredictor(double tau, double c, double t, std::size_t d = 1)
      : cpcp::ConformalPredictor("fixed", tau, t, false), center(c), half_width(t), dims(d) {}

  std::size_t label_dim() const override { return dims; }
  cpcp::PredictionBox predict_box(const cpcp::Vec&) const override {
    cpcp::PredictionBox box;
    box.lower.assign(dims, center - half_width);
    box.upper.assign(dims, center + half_width);
    return box;
  }
  bool covers(const cpcp::Vec&, const cpcp::Vec& y) const override {
    double score = 0.0;
    for (double yj : y) score = std::max(score, std::fabs(yj - center));
    return score <= half_width;
  }
};

}  // namespace testpred
