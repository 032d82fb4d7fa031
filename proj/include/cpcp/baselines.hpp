#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cpcp/conformal.hpp"
#include "cpcp/nn.hpp"

namespace cpcp {

/// Quantile-interval network with a shared backbone and 2d outputs: per-dim
/// lower quantile plus a softplus-positive gap, so lo_j(x) < hi_j(x) always.
struct CqrModel {
  MlpParams backbone;  // relu_output = true
  DenseLayer lo_head;  // d outputs
  DenseLayer gap_head;  // d outputs, softplus
  Vec y_mean, y_std;

  std::size_t label_dim() const { return y_mean.size(); }
  void interval(const Vec& x, Vec& lo, Vec& hi) const;
};

/// Maximum signed distance to the interval: max_j max(lo_j - y_j, y_j - hi_j).
/// Negative when y is strictly inside every dimension's interval.
double cqr_score_from_interval(const Vec& lo, const Vec& hi, const Vec& y);
double cqr_score(const CqrModel& model, const Vec& x, const Vec& y);

/// Trains the interval net with pinball losses at levels (1-tau)/2 and
/// (1+tau)/2 per dimension.
CqrModel cqr_train(const Matrix& train_x, const Matrix& train_y, double tau,
                   const TrainConfig& cfg, RngStream rng);

/// Joint quantile/scale model whose MLE objective is the scaled pinball loss
/// ln(sigma) + rho_tau(q, s)/sigma; sigma is softplus-parameterized with a
/// positive floor.
struct AldModel {
  MlpParams backbone;  // relu_output = true
  DenseLayer q_head;
  DenseLayer sigma_head;
  double sigma_floor = 1e-4;
  double score_mean = 0.0;
  double score_std = 1.0;

  double quantile(const Vec& x) const;
  Vec quantile_batch(const Matrix& x) const;
  /// sigma in original score units; strictly positive.
  double scale(const Vec& x) const;
};

enum class AldFitMode {
  ald,           // joint MLE over (q, sigma)
  frozen_scale,  // sigma forced to 1 inside the ALD objective; sigma head untrained
  pinball_only,  // plain pinball on the q path (reference trajectory)
};

AldModel ald_fit(const Matrix& x, const Vec& scores, double tau, const TrainConfig& cfg,
                 RngStream rng, AldFitMode mode = AldFitMode::ald);

/// One-batch loss and gradients of the ALD objective in standardized score
/// units (the training-loop building block; exposed for gradient checks).
struct AldGrads {
  MlpGrads backbone;
  DenseLayer q_head, sigma_head;
  double loss = 0.0;
};
AldGrads ald_grads(const AldModel& model, const Matrix& x, const Vec& s_std, double tau,
                   AldFitMode mode);

/// ALD-backed scalar quantile for rectified conformal variants; the scale head
/// is unused at prediction time.
class AldQuantileFn : public ScalarQuantileFn {
 public:
  AldModel model;

  explicit AldQuantileFn(AldModel m) : model(std::move(m)) {}
  double quantile(const Vec& x) const override { return model.quantile(x); }
  std::string kind() const override { return "ald"; }
  void save(std::ostream& os) const override;
};

/// Per-dimension interval producer shared by CQR and CQR-ALD predictors.
class IntervalModel {
 public:
  virtual ~IntervalModel() = default;
  virtual std::size_t label_dim() const = 0;
  virtual void interval(const Vec& x, Vec& lo, Vec& hi) const = 0;
  virtual std::string kind() const = 0;
  virtual void save(std::ostream& os) const = 0;
};

class GapIntervalModel : public IntervalModel {
 public:
  CqrModel model;

  explicit GapIntervalModel(CqrModel m) : model(std::move(m)) {}
  std::size_t label_dim() const override { return model.label_dim(); }
  void interval(const Vec& x, Vec& lo, Vec& hi) const override { model.interval(x, lo, hi); }
  std::string kind() const override { return "gap"; }
  void save(std::ostream& os) const override;
};

class AldIntervalModel : public IntervalModel {
 public:
  std::vector<AldModel> lo_models, hi_models;  // one per label dimension

  AldIntervalModel(std::vector<AldModel> lo, std::vector<AldModel> hi)
      : lo_models(std::move(lo)), hi_models(std::move(hi)) {}
  std::size_t label_dim() const override { return lo_models.size(); }
  void interval(const Vec& x, Vec& lo, Vec& hi) const override;
  std::string kind() const override { return "ald_pair"; }
  void save(std::ostream& os) const override;
};

/// Conformalized quantile-interval predictor: box [lo_j - t, hi_j + t].
class CqrPredictor : public ConformalPredictor {
 public:
  std::shared_ptr<const IntervalModel> model;

  CqrPredictor(std::string method, double tau, std::shared_ptr<const IntervalModel> m,
               double t, bool infinite)
      : ConformalPredictor(std::move(method), tau, t, infinite), model(std::move(m)) {}

  std::size_t label_dim() const override { return model->label_dim(); }
  PredictionBox predict_box(const Vec& x) const override;
  bool covers(const Vec& x, const Vec& y) const override;
};

/// Conformal shift for a fitted interval model over a calibration set.
double cqr_conformal_shift(const IntervalModel& model, const Matrix& cal_x, const Matrix& cal_y,
                           double tau, bool* infinite = nullptr);

std::unique_ptr<ConformalPredictor> cqr_fit(const Matrix& train_x, const Matrix& train_y,
                                            const Matrix& cal_x, const Matrix& cal_y,
                                            double tau, const TrainConfig& cfg, RngStream rng,
                                            std::string method = "cqr");

std::unique_ptr<ConformalPredictor> cqr_ald_fit(const Matrix& train_x, const Matrix& train_y,
                                                const Matrix& cal_x, const Matrix& cal_y,
                                                double tau, const TrainConfig& cfg,
                                                RngStream rng, std::string method = "cqr-ald");

/// Partition-learning model: softmax group assignment h plus per-group score
/// thresholds. Thresholds come from a held-out recalibration so each group is
/// locally a Split CP.
struct PlcpModel {
  MlpParams h_net;  // in -> hidden -> G logits
  Vec thresholds;   // per group, original score units
  Vec objective_trace;  // best-so-far co-training objective per epoch

  std::size_t groups() const { return thresholds.size(); }
  Vec probs(const Vec& x) const;
  std::size_t assign(const Vec& x) const;
  double threshold(const Vec& x) const;
};

/// Co-trains h and the group quantiles by joint gradient descent on half of
/// the calibration data, then hard-assigns the held-out half and sets each
/// group's threshold at its empirical conformal quantile. Groups whose rank
/// sentinel triggers fall back to the held-out global Split threshold.
PlcpModel plcp_fit(const Matrix& cal_x, const Vec& cal_scores, double tau, std::size_t G,
                   const TrainConfig& cfg, RngStream rng);

class PlcpPredictor : public ConformalPredictor {
 public:
  Regressor mu;
  PlcpModel model;

  PlcpPredictor(std::string method, double tau, Regressor mu_in, PlcpModel m)
      : ConformalPredictor(std::move(method), tau, 0.0, false),
        mu(std::move(mu_in)),
        model(std::move(m)) {}

  std::size_t label_dim() const override { return mu.y_mean.size(); }
  PredictionBox predict_box(const Vec& x) const override;
  bool covers(const Vec& x, const Vec& y) const override;
};

}  // namespace cpcp
