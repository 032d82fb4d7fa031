#pragma once

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>

#include "cpcp/core.hpp"
#include "cpcp/data.hpp"
#include "cpcp/nn.hpp"

namespace cpcp {

/// l-infinity residual score max_j |y_j - mu_j|; the absolute residual for d=1.
double linf_score(const Vec& mu_hat_output, const Vec& y);

/// Conformal order-statistic rank k = ceil((n+1) * tau), 1-based. When the
/// rank exceeds n the threshold is infinite and the prediction set is the
/// whole label space.
struct RankResult {
  std::size_t k = 0;
  bool infinite = false;
};
RankResult conformal_rank(std::size_t n, double tau);

/// k-th order statistic (1-based), sort semantics for ties. Throws when k is
/// out of range.
double kth_smallest(Vec values, std::size_t k);

/// Empirical conformal quantile of a score sample: kth_smallest at
/// conformal_rank, or +infinity when the rank sentinel triggers.
double conformal_quantile(const Vec& scores, double tau, bool* infinite = nullptr);

/// Axis-aligned prediction set; lower > upper in any dimension marks an
/// explicitly empty box.
struct PredictionBox {
  Vec lower, upper;

  bool empty() const {
    for (std::size_t j = 0; j < lower.size(); ++j) {
      if (lower[j] > upper[j]) return true;
    }
    return false;
  }
};

/// A fitted conformal method: emits prediction boxes and the matching
/// membership rule (y is in the box iff its nonconformity score passes the
/// method's threshold rule).
class ConformalPredictor {
 public:
  ConformalPredictor(std::string method, double tau, double shift, bool infinite)
      : method_(std::move(method)), tau_(tau), shift_(shift), infinite_(infinite) {}
  virtual ~ConformalPredictor() = default;

  const std::string& method() const { return method_; }
  double tau() const { return tau_; }
  /// Global conformal shift: gamma for rectified methods, the score threshold
  /// itself for Split.
  double shift() const { return shift_; }
  bool infinite_threshold() const { return infinite_; }

  virtual std::size_t label_dim() const = 0;
  virtual PredictionBox predict_box(const Vec& x) const = 0;
  virtual bool covers(const Vec& x, const Vec& y) const = 0;

 protected:
  std::string method_;
  double tau_;
  double shift_;
  bool infinite_;
};

/// Scalar conditional-quantile model used by rectified predictors.
class ScalarQuantileFn {
 public:
  virtual ~ScalarQuantileFn() = default;
  virtual double quantile(const Vec& x) const = 0;
  virtual std::string kind() const = 0;
  virtual void save(std::ostream& os) const = 0;
};

class SingleQuantileFn : public ScalarQuantileFn {
 public:
  QuantileNet qn;

  explicit SingleQuantileFn(QuantileNet q) : qn(std::move(q)) {}
  double quantile(const Vec& x) const override { return qn.predict(x); }
  std::string kind() const override { return "single"; }
  void save(std::ostream& os) const override;
};

class ThreeHeadQuantileFn : public ScalarQuantileFn {
 public:
  ThreeHeadQuantileNet net;

  explicit ThreeHeadQuantileFn(ThreeHeadQuantileNet n) : net(std::move(n)) {}
  double quantile(const Vec& x) const override { return three_head_forward(net, x).q_main; }
  std::string kind() const override { return "three_head"; }
  void save(std::ostream& os) const override;
};

/// Split CP: constant threshold q_hat, box mu(x) +/- q_hat.
class SplitCpPredictor : public ConformalPredictor {
 public:
  Regressor mu;

  SplitCpPredictor(std::string method, double tau, Regressor mu_in, double qhat, bool infinite)
      : ConformalPredictor(std::move(method), tau, qhat, infinite), mu(std::move(mu_in)) {}

  std::size_t label_dim() const override { return mu.y_mean.size(); }
  PredictionBox predict_box(const Vec& x) const override;
  bool covers(const Vec& x, const Vec& y) const override;
};

/// Rectified CP: instance threshold t(x) = q_hat(x) + gamma, box mu(x) +/- t(x).
class RcpPredictor : public ConformalPredictor {
 public:
  Regressor mu;
  std::shared_ptr<const ScalarQuantileFn> qfn;

  RcpPredictor(std::string method, double tau, Regressor mu_in,
               std::shared_ptr<const ScalarQuantileFn> q, double gamma, bool infinite)
      : ConformalPredictor(std::move(method), tau, gamma, infinite),
        mu(std::move(mu_in)),
        qfn(std::move(q)) {}

  std::size_t label_dim() const override { return mu.y_mean.size(); }
  double threshold(const Vec& x) const;
  PredictionBox predict_box(const Vec& x) const override;
  bool covers(const Vec& x, const Vec& y) const override;
};

std::unique_ptr<ConformalPredictor> split_cp_fit(Regressor mu, const Vec& cal_scores,
                                                 double tau, std::string method = "split");

std::unique_ptr<ConformalPredictor> rcp_fit(Regressor mu,
                                            std::shared_ptr<const ScalarQuantileFn> qfn,
                                            const Matrix& cal3_x, const Vec& cal3_scores,
                                            double tau, std::string method = "rcp");

/// Disjoint 40/40/20 partition of calibration indices by seeded permutation
/// and contiguous slicing. Throws when any part would be empty.
struct CalibrationSplit {
  std::vector<std::size_t> part1, part2, part3;
};
CalibrationSplit split_calibration(std::size_t n, RngStream& rng);

/// Finite-difference density weights w_i = 2*delta / gap_i with the gap
/// floored at eps_den.
Vec weights_from_gaps(const Vec& gaps, double delta, double eps_den = 1e-8);
/// Weights from a trained net's (q_high - q_low) gaps in original score units.
Vec estimate_weights(const ThreeHeadQuantileNet& net, const Matrix& xs,
                     double eps_den = 1e-8);

/// Clip at M * mean(raw), then normalize to sum one. All-zero input falls back
/// to uniform weights.
Vec clip_normalize_weights(const Vec& raw, double clip_m);

struct CpcpConfig {
  double delta = 0.02;
  std::optional<double> clip_m;  // clipped variant when set
  double lambda = 1.0;           // weighted-vs-plain mixing ratio
  double eps_den = 1e-8;
  TrainConfig pretrain;
  TrainConfig finetune;
};

/// Full pipeline: score -> 40/40/20 split -> joint pretraining on part 1 ->
/// weight estimation on part 2 (clip/normalize when configured) -> main-head
/// fine-tuning with the mixed weighted objective -> rectified conformal shift
/// on part 3. A caller-provided partition replaces the internal seeded split
/// (used for paired method comparisons).
std::unique_ptr<ConformalPredictor> cpcp_fit(const Regressor& mu, const Matrix& cal_x,
                                             const Matrix& cal_y, double tau,
                                             const CpcpConfig& cfg, RngStream rng,
                                             std::string method = "cpcp",
                                             const CalibrationSplit* split = nullptr);

/// Same pipeline with the weighting removed: uniform weights, plain pinball
/// fine-tuning. Consumes randomness identically to cpcp_fit, so with lambda=0
/// the two are prediction-identical under equal seeds.
std::unique_ptr<ConformalPredictor> rcp_finetuned_fit(const Regressor& mu, const Matrix& cal_x,
                                                      const Matrix& cal_y, double tau,
                                                      const CpcpConfig& cfg, RngStream rng,
                                                      std::string method = "rcp-ft",
                                                      const CalibrationSplit* split = nullptr);

}  // namespace cpcp
