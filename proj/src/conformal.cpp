#include "cpcp/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace cpcp {

double linf_score(const Vec& mu_hat_output, const Vec& y) {
  if (mu_hat_output.size() != y.size()) {
    throw std::invalid_argument("linf_score: dimension mismatch");
  }
  double worst = 0.0;
  for (std::size_t j = 0; j < y.size(); ++j) {
    worst = std::max(worst, std::fabs(y[j] - mu_hat_output[j]));
  }
  return worst;
}

RankResult conformal_rank(std::size_t n, double tau) {
  RankResult r;
  const double raw = std::ceil(static_cast<double>(n + 1) * tau);
  r.k = static_cast<std::size_t>(raw);
  r.infinite = r.k > n;
  return r;
}

double kth_smallest(Vec values, std::size_t k) {
  if (k == 0 || k > values.size()) {
    throw std::out_of_range("kth_smallest: k=" + std::to_string(k) + " outside 1.." +
                            std::to_string(values.size()));
  }
  std::nth_element(values.begin(), values.begin() + (k - 1), values.end());
  return values[k - 1];
}

double conformal_quantile(const Vec& scores, double tau, bool* infinite) {
  if (scores.empty()) throw std::invalid_argument("conformal_quantile: empty scores");
  const RankResult r = conformal_rank(scores.size(), tau);
  if (infinite) *infinite = r.infinite;
  if (r.infinite) return std::numeric_limits<double>::infinity();
  return kth_smallest(scores, r.k);
}

PredictionBox SplitCpPredictor::predict_box(const Vec& x) const {
  const Vec center = mu.predict(x);
  PredictionBox box;
  box.lower.resize(center.size());
  box.upper.resize(center.size());
  for (std::size_t j = 0; j < center.size(); ++j) {
    box.lower[j] = center[j] - shift_;
    box.upper[j] = center[j] + shift_;
  }
  return box;
}

bool SplitCpPredictor::covers(const Vec& x, const Vec& y) const {
  if (infinite_) return true;
  return linf_score(mu.predict(x), y) <= shift_;
}

double RcpPredictor::threshold(const Vec& x) const { return qfn->quantile(x) + shift_; }

PredictionBox RcpPredictor::predict_box(const Vec& x) const {
  const Vec center = mu.predict(x);
  const double t = infinite_ ? std::numeric_limits<double>::infinity() : threshold(x);
  PredictionBox box;
  box.lower.resize(center.size());
  box.upper.resize(center.size());
  for (std::size_t j = 0; j < center.size(); ++j) {
    box.lower[j] = center[j] - t;
    box.upper[j] = center[j] + t;
  }
  return box;
}

bool RcpPredictor::covers(const Vec& x, const Vec& y) const {
  if (infinite_) return true;
  return linf_score(mu.predict(x), y) <= threshold(x);
}

std::unique_ptr<ConformalPredictor> split_cp_fit(Regressor mu, const Vec& cal_scores,
                                                 double tau, std::string method) {
  bool infinite = false;
  const double qhat = conformal_quantile(cal_scores, tau, &infinite);
  return std::make_unique<SplitCpPredictor>(std::move(method), tau, std::move(mu), qhat,
                                            infinite);
}

std::unique_ptr<ConformalPredictor> rcp_fit(Regressor mu,
                                            std::shared_ptr<const ScalarQuantileFn> qfn,
                                            const Matrix& cal3_x, const Vec& cal3_scores,
                                            double tau, std::string method) {
  if (cal3_x.rows == 0 || cal3_scores.size() != cal3_x.rows) {
    throw std::invalid_argument("rcp_fit: empty cal3 or size mismatch");
  }
  Vec residuals(cal3_scores.size());
  for (std::size_t i = 0; i < cal3_scores.size(); ++i) {
    residuals[i] = cal3_scores[i] - qfn->quantile(cal3_x.row_vec(i));
  }
  bool infinite = false;
  const double gamma = conformal_quantile(residuals, tau, &infinite);
  return std::make_unique<RcpPredictor>(std::move(method), tau, std::move(mu), std::move(qfn),
                                        gamma, infinite);
}

CalibrationSplit split_calibration(std::size_t n, RngStream& rng) {
  const std::size_t n1 = (4 * n) / 10;
  const std::size_t n2 = (4 * n) / 10;
  if (n1 == 0 || n2 == 0 || n1 + n2 >= n) {
    throw std::invalid_argument("split_calibration: n=" + std::to_string(n) +
                                " too small for a 40/40/20 split");
  }
  const std::vector<std::size_t> perm = rng.permutation(n);
  CalibrationSplit split;
  split.part1.assign(perm.begin(), perm.begin() + n1);
  split.part2.assign(perm.begin() + n1, perm.begin() + n1 + n2);
  split.part3.assign(perm.begin() + n1 + n2, perm.end());
  return split;
}

Vec weights_from_gaps(const Vec& gaps, double delta, double eps_den) {
  Vec w(gaps.size());
  for (std::size_t i = 0; i < gaps.size(); ++i) {
    w[i] = 2.0 * delta / std::max(gaps[i], eps_den);
  }
  return w;
}

Vec estimate_weights(const ThreeHeadQuantileNet& net, const Matrix& xs, double eps_den) {
  const Matrix q = three_head_forward_batch(net, xs);
  Vec gaps(xs.rows);
  for (std::size_t i = 0; i < xs.rows; ++i) gaps[i] = q(i, 2) - q(i, 0);
  return weights_from_gaps(gaps, net.delta, eps_den);
}

Vec clip_normalize_weights(const Vec& raw, double clip_m) {
  if (raw.empty()) throw std::invalid_argument("clip_normalize_weights: empty input");
  if (!(clip_m > 0.0)) throw std::invalid_argument("clip_normalize_weights: M must be > 0");
  double sum = 0.0;
  for (double v : raw) {
    if (v < 0.0) throw std::invalid_argument("clip_normalize_weights: negative weight");
    sum += v;
  }
  const std::size_t n = raw.size();
  Vec out(n);
  if (sum <= 0.0) {
    // Degenerate all-zero input: uniform weights.
    std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(n));
    return out;
  }
  const double cap = clip_m * (sum / static_cast<double>(n));
  double clipped_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::min(raw[i], cap);
    clipped_sum += out[i];
  }
  for (double& v : out) v /= clipped_sum;
  return out;
}

namespace {

Vec scores_against(const Regressor& mu, const Matrix& x, const Matrix& y) {
  const Matrix pred = mu.predict(x);
  Vec s(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) {
    s[i] = linf_score(pred.row_vec(i), y.row_vec(i));
  }
  return s;
}

Matrix take_rows(const Matrix& m, const std::vector<std::size_t>& idx) {
  Matrix out(idx.size(), m.cols);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy(m.row(idx[i]), m.row(idx[i]) + m.cols, out.row(i));
  }
  return out;
}

Vec take_vals(const Vec& v, const std::vector<std::size_t>& idx) {
  Vec out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = v[idx[i]];
  return out;
}

std::unique_ptr<ConformalPredictor> cpcp_pipeline(const Regressor& mu, const Matrix& cal_x,
                                                  const Matrix& cal_y, double tau,
                                                  const CpcpConfig& cfg, RngStream rng,
                                                  std::string method, bool weighted,
                                                  const CalibrationSplit* given_split) {
  if (cal_x.rows == 0 || cal_y.rows != cal_x.rows) {
    throw std::invalid_argument("cpcp_fit: empty calibration data or size mismatch");
  }
  const Vec scores = scores_against(mu, cal_x, cal_y);

  RngStream split_rng = rng.child(0);
  const CalibrationSplit split =
      given_split ? *given_split : split_calibration(cal_x.rows, split_rng);
  const Matrix x1 = take_rows(cal_x, split.part1);
  const Matrix x2 = take_rows(cal_x, split.part2);
  const Matrix x3 = take_rows(cal_x, split.part3);
  const Vec s1 = take_vals(scores, split.part1);
  const Vec s2 = take_vals(scores, split.part2);
  const Vec s3 = take_vals(scores, split.part3);

  RngStream init_rng = rng.child(1);
  ThreeHeadQuantileNet net =
      make_three_head_net(cal_x.cols, cfg.pretrain.hidden, cfg.delta, init_rng);
  train_quantile_joint(net, x1, s1, tau, cfg.pretrain, rng.child(2));

  Vec weights(x2.rows, 1.0);
  double lambda = cfg.lambda;
  if (weighted) {
    weights = estimate_weights(net, x2, cfg.eps_den);
    if (cfg.clip_m) weights = clip_normalize_weights(weights, *cfg.clip_m);
  } else {
    lambda = 0.0;
  }
  finetune_main_head(net, x2, s2, weights, tau, lambda, cfg.finetune, rng.child(3));

  auto qfn = std::make_shared<ThreeHeadQuantileFn>(std::move(net));
  return rcp_fit(mu, std::move(qfn), x3, s3, tau, std::move(method));
}

}  // namespace

std::unique_ptr<ConformalPredictor> cpcp_fit(const Regressor& mu, const Matrix& cal_x,
                                             const Matrix& cal_y, double tau,
                                             const CpcpConfig& cfg, RngStream rng,
                                             std::string method,
                                             const CalibrationSplit* split) {
  return cpcp_pipeline(mu, cal_x, cal_y, tau, cfg, rng, std::move(method), true, split);
}

std::unique_ptr<ConformalPredictor> rcp_finetuned_fit(const Regressor& mu, const Matrix& cal_x,
                                                      const Matrix& cal_y, double tau,
                                                      const CpcpConfig& cfg, RngStream rng,
                                                      std::string method,
                                                      const CalibrationSplit* split) {
  return cpcp_pipeline(mu, cal_x, cal_y, tau, cfg, rng, std::move(method), false, split);
}

void SingleQuantileFn::save(std::ostream& os) const {
  write_mlp(os, qn.net);
  os.write(reinterpret_cast<const char*>(&qn.score_mean), sizeof(double));
  os.write(reinterpret_cast<const char*>(&qn.score_std), sizeof(double));
}

void ThreeHeadQuantileFn::save(std::ostream& os) const {
  write_mlp(os, net.backbone);
  write_dense(os, net.head_main);
  write_dense(os, net.head_low_gap);
  write_dense(os, net.head_high_gap);
  os.write(reinterpret_cast<const char*>(&net.delta), sizeof(double));
  os.write(reinterpret_cast<const char*>(&net.score_mean), sizeof(double));
  os.write(reinterpret_cast<const char*>(&net.score_std), sizeof(double));
}

}  // namespace cpcp
