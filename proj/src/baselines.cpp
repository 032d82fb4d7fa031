#include "cpcp/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "cpcp/losses.hpp"

namespace cpcp {

namespace {

Matrix gather_rows(const Matrix& x, const std::vector<std::size_t>& order, std::size_t lo,
                   std::size_t hi) {
  Matrix out(hi - lo, x.cols);
  for (std::size_t i = lo; i < hi; ++i) {
    std::memcpy(out.row(i - lo), x.row(order[i]), x.cols * sizeof(double));
  }
  return out;
}

Vec gather_vals(const Vec& v, const std::vector<std::size_t>& order, std::size_t lo,
                std::size_t hi) {
  Vec out(hi - lo);
  for (std::size_t i = lo; i < hi; ++i) out[i - lo] = v[order[i]];
  return out;
}

}  // namespace

void CqrModel::interval(const Vec& x, Vec& lo, Vec& hi) const {
  const Vec feats = mlp_forward(backbone, x);
  Matrix fb(1, feats.size());
  fb.data = feats;
  const Matrix lo_raw = dense_forward(lo_head, fb);
  const Matrix gap_raw = dense_forward(gap_head, fb);
  const std::size_t d = label_dim();
  lo.resize(d);
  hi.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    const double l = lo_raw(0, j);
    const double h = l + softplus(gap_raw(0, j));
    lo[j] = y_mean[j] + y_std[j] * l;
    hi[j] = y_mean[j] + y_std[j] * h;
  }
}

double cqr_score_from_interval(const Vec& lo, const Vec& hi, const Vec& y) {
  if (lo.size() != y.size() || hi.size() != y.size()) {
    throw std::invalid_argument("cqr_score: dimension mismatch");
  }
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < y.size(); ++j) {
    worst = std::max(worst, std::max(lo[j] - y[j], y[j] - hi[j]));
  }
  return worst;
}

double cqr_score(const CqrModel& model, const Vec& x, const Vec& y) {
  Vec lo, hi;
  model.interval(x, lo, hi);
  return cqr_score_from_interval(lo, hi, y);
}

CqrModel cqr_train(const Matrix& train_x, const Matrix& train_y, double tau,
                   const TrainConfig& cfg, RngStream rng) {
  if (train_x.rows == 0 || train_y.rows != train_x.rows) {
    throw std::invalid_argument("cqr_train: empty data or size mismatch");
  }
  const double alpha = 1.0 - tau;
  const double lo_level = alpha / 2.0;
  const double hi_level = 1.0 - alpha / 2.0;

  const std::size_t n = train_x.rows;
  const std::size_t d = train_y.cols;

  CqrModel model;
  model.y_mean.assign(d, 0.0);
  model.y_std.assign(d, 1.0);
  for (std::size_t j = 0; j < d; ++j) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += train_y(i, j);
    model.y_mean[j] = sum / static_cast<double>(n);
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dv = train_y(i, j) - model.y_mean[j];
      sq += dv * dv;
    }
    const double sd = std::sqrt(sq / static_cast<double>(n));
    model.y_std[j] = sd > 1e-12 ? sd : 1.0;
  }
  Matrix yt(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      yt(i, j) = (train_y(i, j) - model.y_mean[j]) / model.y_std[j];
    }
  }

  if (cfg.hidden.empty()) throw std::invalid_argument("cqr_train: need >= 1 hidden layer");
  std::vector<std::size_t> front(cfg.hidden.begin(), cfg.hidden.end() - 1);
  model.backbone = make_mlp(train_x.cols, front, cfg.hidden.back(), rng, /*relu_output=*/true);
  const std::size_t feat = cfg.hidden.back();
  model.lo_head = make_dense(d, feat, rng);
  model.gap_head = make_dense(d, feat, rng);

  MlpAdam opt_backbone(model.backbone, cfg.adam);
  AdamState opt_heads(2 * d * (feat + 1), cfg.adam);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(start + cfg.batch_size, n);
      const std::size_t nb = end - start;
      const double inv_nb = 1.0 / static_cast<double>(nb);
      const Matrix xb = gather_rows(train_x, order, start, end);
      const Matrix yb = gather_rows(yt, order, start, end);

      ForwardCache cache = mlp_forward_cached(model.backbone, xb);
      const Matrix& feats = cache.output;
      const Matrix lo_raw = dense_forward(model.lo_head, feats);
      const Matrix gap_raw = dense_forward(model.gap_head, feats);

      Matrix up_lo(nb, d), up_gap(nb, d);
      for (std::size_t i = 0; i < nb; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          const double lo = lo_raw(i, j);
          const double hi = lo + softplus(gap_raw(i, j));
          const double g_lo = pinball_subgrad_q(lo_level, lo, yb(i, j));
          const double g_hi = pinball_subgrad_q(hi_level, hi, yb(i, j));
          up_lo(i, j) = (g_lo + g_hi) * inv_nb;
          up_gap(i, j) = g_hi * sigmoid(gap_raw(i, j)) * inv_nb;
        }
      }

      DenseLayer g_lo_head{Matrix(d, feat, 0.0), Vec(d, 0.0)};
      DenseLayer g_gap_head{Matrix(d, feat, 0.0), Vec(d, 0.0)};
      Matrix d_lo, d_gap;
      dense_backward(model.lo_head, feats, up_lo, g_lo_head, &d_lo);
      dense_backward(model.gap_head, feats, up_gap, g_gap_head, &d_gap);
      Matrix d_feats(nb, feat);
      for (std::size_t i = 0; i < d_feats.data.size(); ++i) {
        d_feats.data[i] = d_lo.data[i] + d_gap.data[i];
      }
      MlpGrads bb_grads = mlp_backward(model.backbone, cache, d_feats);
      opt_backbone.step(model.backbone, bb_grads);

      opt_heads.begin_step();
      std::size_t off = 0;
      opt_heads.update(off, model.lo_head.w.data.data(), g_lo_head.w.data.data(), d * feat);
      off += d * feat;
      opt_heads.update(off, model.lo_head.b.data(), g_lo_head.b.data(), d);
      off += d;
      opt_heads.update(off, model.gap_head.w.data.data(), g_gap_head.w.data.data(), d * feat);
      off += d * feat;
      opt_heads.update(off, model.gap_head.b.data(), g_gap_head.b.data(), d);
    }
  }
  return model;
}

double AldModel::quantile(const Vec& x) const {
  const Vec feats = mlp_forward(backbone, x);
  Matrix fb(1, feats.size());
  fb.data = feats;
  const double q = dense_forward(q_head, fb)(0, 0);
  return score_mean + score_std * q;
}

Vec AldModel::quantile_batch(const Matrix& x) const {
  const Matrix feats = mlp_forward(backbone, x);
  const Matrix q = dense_forward(q_head, feats);
  Vec out(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) out[i] = score_mean + score_std * q(i, 0);
  return out;
}

double AldModel::scale(const Vec& x) const {
  const Vec feats = mlp_forward(backbone, x);
  Matrix fb(1, feats.size());
  fb.data = feats;
  const double raw = dense_forward(sigma_head, fb)(0, 0);
  return score_std * (sigma_floor + softplus(raw));
}

AldGrads ald_grads(const AldModel& model, const Matrix& x, const Vec& s_std, double tau,
                   AldFitMode mode) {
  if (x.rows != s_std.size() || x.rows == 0) {
    throw std::invalid_argument("ald_grads: empty batch or size mismatch");
  }
  const std::size_t nb = x.rows;
  const double inv_nb = 1.0 / static_cast<double>(nb);
  const std::size_t feat = model.backbone.out_dim();

  ForwardCache cache = mlp_forward_cached(model.backbone, x);
  const Matrix& feats = cache.output;
  const Matrix q_raw = dense_forward(model.q_head, feats);
  const Matrix sg_raw = dense_forward(model.sigma_head, feats);

  AldGrads out;
  Matrix up_q(nb, 1), up_sigma(nb, 1);
  for (std::size_t i = 0; i < nb; ++i) {
    const double q = q_raw(i, 0);
    const double rho = pinball(tau, q, s_std[i]);
    const double g_q = pinball_subgrad_q(tau, q, s_std[i]);
    switch (mode) {
      case AldFitMode::ald: {
        const double raw = sg_raw(i, 0);
        const double sigma = model.sigma_floor + softplus(raw);
        out.loss += (std::log(sigma) + rho / sigma) * inv_nb;
        up_q(i, 0) = (g_q / sigma) * inv_nb;
        up_sigma(i, 0) = ((1.0 / sigma - rho / (sigma * sigma)) * sigmoid(raw)) * inv_nb;
        break;
      }
      case AldFitMode::frozen_scale: {
        // sigma forced to one: ln(1) + rho / 1.
        out.loss += rho * inv_nb;
        up_q(i, 0) = (g_q / 1.0) * inv_nb;
        up_sigma(i, 0) = 0.0;
        break;
      }
      case AldFitMode::pinball_only: {
        out.loss += rho * inv_nb;
        up_q(i, 0) = g_q * inv_nb;
        up_sigma(i, 0) = 0.0;
        break;
      }
    }
  }

  out.q_head = DenseLayer{Matrix(1, feat, 0.0), Vec(1, 0.0)};
  out.sigma_head = DenseLayer{Matrix(1, feat, 0.0), Vec(1, 0.0)};
  Matrix d_q, d_sigma;
  dense_backward(model.q_head, feats, up_q, out.q_head, &d_q);
  dense_backward(model.sigma_head, feats, up_sigma, out.sigma_head, &d_sigma);
  Matrix d_feats(nb, feat);
  for (std::size_t i = 0; i < d_feats.data.size(); ++i) {
    d_feats.data[i] = d_q.data[i] + d_sigma.data[i];
  }
  out.backbone = mlp_backward(model.backbone, cache, d_feats);
  return out;
}

AldModel ald_fit(const Matrix& x, const Vec& scores, double tau, const TrainConfig& cfg,
                 RngStream rng, AldFitMode mode) {
  if (x.rows == 0 || scores.size() != x.rows) {
    throw std::invalid_argument("ald_fit: empty data or size mismatch");
  }
  const std::size_t n = x.rows;

  AldModel model;
  {
    double sum = 0.0;
    for (double v : scores) sum += v;
    model.score_mean = sum / static_cast<double>(n);
    double sq = 0.0;
    for (double v : scores) sq += (v - model.score_mean) * (v - model.score_mean);
    const double sd = std::sqrt(sq / static_cast<double>(n));
    model.score_std = sd > 1e-12 ? sd : 1.0;
  }
  Vec s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = (scores[i] - model.score_mean) / model.score_std;

  if (cfg.hidden.empty()) throw std::invalid_argument("ald_fit: need >= 1 hidden layer");
  std::vector<std::size_t> front(cfg.hidden.begin(), cfg.hidden.end() - 1);
  model.backbone = make_mlp(x.cols, front, cfg.hidden.back(), rng, /*relu_output=*/true);
  const std::size_t feat = cfg.hidden.back();
  model.q_head = make_dense(1, feat, rng);
  model.sigma_head = make_dense(1, feat, rng);

  MlpAdam opt_backbone(model.backbone, cfg.adam);
  AdamState opt_heads(2 * (feat + 1), cfg.adam);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(start + cfg.batch_size, n);
      const Matrix xb = gather_rows(x, order, start, end);
      const Vec sb = gather_vals(s, order, start, end);

      const AldGrads g = ald_grads(model, xb, sb, tau, mode);
      opt_backbone.step(model.backbone, g.backbone);

      opt_heads.begin_step();
      opt_heads.update(0, model.q_head.w.data.data(), g.q_head.w.data.data(), feat);
      opt_heads.update(feat, model.q_head.b.data(), g.q_head.b.data(), 1);
      opt_heads.update(feat + 1, model.sigma_head.w.data.data(), g.sigma_head.w.data.data(),
                       feat);
      opt_heads.update(2 * feat + 1, model.sigma_head.b.data(), g.sigma_head.b.data(), 1);
    }
  }
  return model;
}

void AldIntervalModel::interval(const Vec& x, Vec& lo, Vec& hi) const {
  const std::size_t d = lo_models.size();
  lo.resize(d);
  hi.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    lo[j] = lo_models[j].quantile(x);
    hi[j] = hi_models[j].quantile(x);
  }
}

PredictionBox CqrPredictor::predict_box(const Vec& x) const {
  Vec lo, hi;
  model->interval(x, lo, hi);
  const double t = infinite_ ? std::numeric_limits<double>::infinity() : shift_;
  PredictionBox box;
  box.lower.resize(lo.size());
  box.upper.resize(hi.size());
  for (std::size_t j = 0; j < lo.size(); ++j) {
    box.lower[j] = lo[j] - t;
    box.upper[j] = hi[j] + t;
  }
  return box;
}

bool CqrPredictor::covers(const Vec& x, const Vec& y) const {
  if (infinite_) return true;
  Vec lo, hi;
  model->interval(x, lo, hi);
  return cqr_score_from_interval(lo, hi, y) <= shift_;
}

double cqr_conformal_shift(const IntervalModel& model, const Matrix& cal_x, const Matrix& cal_y,
                           double tau, bool* infinite) {
  if (cal_x.rows == 0) throw std::invalid_argument("cqr_conformal_shift: empty calibration");
  Vec scores(cal_x.rows);
  Vec lo, hi;
  for (std::size_t i = 0; i < cal_x.rows; ++i) {
    model.interval(cal_x.row_vec(i), lo, hi);
    scores[i] = cqr_score_from_interval(lo, hi, cal_y.row_vec(i));
  }
  return conformal_quantile(scores, tau, infinite);
}

std::unique_ptr<ConformalPredictor> cqr_fit(const Matrix& train_x, const Matrix& train_y,
                                            const Matrix& cal_x, const Matrix& cal_y,
                                            double tau, const TrainConfig& cfg, RngStream rng,
                                            std::string method) {
  CqrModel m = cqr_train(train_x, train_y, tau, cfg, rng);
  auto interval = std::make_shared<GapIntervalModel>(std::move(m));
  bool infinite = false;
  const double t = cqr_conformal_shift(*interval, cal_x, cal_y, tau, &infinite);
  return std::make_unique<CqrPredictor>(std::move(method), tau, std::move(interval), t,
                                        infinite);
}

std::unique_ptr<ConformalPredictor> cqr_ald_fit(const Matrix& train_x, const Matrix& train_y,
                                                const Matrix& cal_x, const Matrix& cal_y,
                                                double tau, const TrainConfig& cfg,
                                                RngStream rng, std::string method) {
  const double alpha = 1.0 - tau;
  const std::size_t d = train_y.cols;
  std::vector<AldModel> lo_models, hi_models;
  lo_models.reserve(d);
  hi_models.reserve(d);
  for (std::size_t j = 0; j < d; ++j) {
    Vec yj(train_y.rows);
    for (std::size_t i = 0; i < train_y.rows; ++i) yj[i] = train_y(i, j);
    lo_models.push_back(ald_fit(train_x, yj, alpha / 2.0, cfg, rng.child(2 * j)));
    hi_models.push_back(ald_fit(train_x, yj, 1.0 - alpha / 2.0, cfg, rng.child(2 * j + 1)));
  }
  auto interval =
      std::make_shared<AldIntervalModel>(std::move(lo_models), std::move(hi_models));
  bool infinite = false;
  const double t = cqr_conformal_shift(*interval, cal_x, cal_y, tau, &infinite);
  return std::make_unique<CqrPredictor>(std::move(method), tau, std::move(interval), t,
                                        infinite);
}

Vec PlcpModel::probs(const Vec& x) const {
  const Vec logits = mlp_forward(h_net, x);
  Vec p(logits.size());
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

std::size_t PlcpModel::assign(const Vec& x) const {
  const Vec logits = mlp_forward(h_net, x);
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return best;
}

double PlcpModel::threshold(const Vec& x) const { return thresholds[assign(x)]; }

PlcpModel plcp_fit(const Matrix& cal_x, const Vec& cal_scores, double tau, std::size_t G,
                   const TrainConfig& cfg, RngStream rng) {
  if (G < 1) throw std::invalid_argument("plcp_fit: G must be >= 1");
  const std::size_t n = cal_x.rows;
  if (n < 4 || cal_scores.size() != n) {
    throw std::invalid_argument("plcp_fit: too little data or size mismatch");
  }

  // 50/50 split: first half co-trains (h, q), second half recalibrates.
  RngStream split_rng = rng.child(0);
  const std::vector<std::size_t> perm = split_rng.permutation(n);
  const std::size_t n_fit = n / 2;
  std::vector<std::size_t> fit_idx(perm.begin(), perm.begin() + n_fit);
  std::vector<std::size_t> holdout_idx(perm.begin() + n_fit, perm.end());

  Matrix xf = gather_rows(cal_x, fit_idx, 0, fit_idx.size());
  Vec sf = gather_vals(cal_scores, fit_idx, 0, fit_idx.size());

  // Standardized scores for the gradient phase only; recalibration uses raw
  // order statistics.
  double s_mean = 0.0, s_std = 1.0;
  {
    double sum = 0.0;
    for (double v : sf) sum += v;
    s_mean = sum / static_cast<double>(sf.size());
    double sq = 0.0;
    for (double v : sf) sq += (v - s_mean) * (v - s_mean);
    s_std = std::sqrt(sq / static_cast<double>(sf.size()));
    if (!(s_std > 1e-12)) s_std = 1.0;
  }
  Vec st(sf.size());
  for (std::size_t i = 0; i < sf.size(); ++i) st[i] = (sf[i] - s_mean) / s_std;

  PlcpModel model;
  RngStream init_rng = rng.child(1);
  model.h_net = make_mlp(cal_x.cols, cfg.hidden, G, init_rng);

  // Spread the group quantiles across the score range to break symmetry.
  Vec q(G);
  {
    Vec sorted = st;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < G; ++i) {
      const double level = (static_cast<double>(i) + 0.5) / static_cast<double>(G);
      const std::size_t pos =
          std::min(sorted.size() - 1,
                   static_cast<std::size_t>(level * static_cast<double>(sorted.size())));
      q[i] = sorted[pos];
    }
  }

  MlpAdam opt_h(model.h_net, cfg.adam);
  AdamState opt_q(G, cfg.adam);

  auto objective = [&](const MlpParams& h_net, const Vec& qv) {
    const Matrix logits = mlp_forward(h_net, xf);
    double total = 0.0;
    for (std::size_t i = 0; i < xf.rows; ++i) {
      const double* li = logits.row(i);
      double mx = li[0];
      for (std::size_t g = 1; g < G; ++g) mx = std::max(mx, li[g]);
      double z = 0.0;
      for (std::size_t g = 0; g < G; ++g) z += std::exp(li[g] - mx);
      double acc = 0.0;
      for (std::size_t g = 0; g < G; ++g) {
        acc += std::exp(li[g] - mx) / z * pinball(tau, qv[g], st[i]);
      }
      total += acc;
    }
    return total / static_cast<double>(xf.rows);
  };

  MlpParams best_h = model.h_net;
  Vec best_q = q;
  double best_obj = objective(model.h_net, q);
  model.objective_trace.clear();

  RngStream shuffle_rng = rng.child(2);
  std::vector<std::size_t> order(xf.rows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < xf.rows; start += cfg.batch_size) {
      const std::size_t end = std::min(start + cfg.batch_size, xf.rows);
      const std::size_t nb = end - start;
      const double inv_nb = 1.0 / static_cast<double>(nb);
      const Matrix xb = gather_rows(xf, order, start, end);
      const Vec sb = gather_vals(st, order, start, end);

      ForwardCache cache = mlp_forward_cached(model.h_net, xb);
      const Matrix& logits = cache.output;

      Matrix up_logits(nb, G);
      Vec g_q(G, 0.0);
      for (std::size_t i = 0; i < nb; ++i) {
        const double* li = logits.row(i);
        double mx = li[0];
        for (std::size_t g = 1; g < G; ++g) mx = std::max(mx, li[g]);
        double z = 0.0;
        for (std::size_t g = 0; g < G; ++g) z += std::exp(li[g] - mx);
        double mean_rho = 0.0;
        for (std::size_t g = 0; g < G; ++g) {
          const double p = std::exp(li[g] - mx) / z;
          mean_rho += p * pinball(tau, q[g], sb[i]);
        }
        for (std::size_t g = 0; g < G; ++g) {
          const double p = std::exp(li[g] - mx) / z;
          up_logits(i, g) = p * (pinball(tau, q[g], sb[i]) - mean_rho) * inv_nb;
          g_q[g] += p * pinball_subgrad_q(tau, q[g], sb[i]) * inv_nb;
        }
      }

      MlpGrads h_grads = mlp_backward(model.h_net, cache, up_logits);
      opt_h.step(model.h_net, h_grads);
      opt_q.begin_step();
      opt_q.update(0, q.data(), g_q.data(), G);
    }
    const double obj = objective(model.h_net, q);
    if (obj < best_obj) {
      best_obj = obj;
      best_h = model.h_net;
      best_q = q;
    }
    model.objective_trace.push_back(best_obj);
  }
  model.h_net = std::move(best_h);

  // Recalibration: hard-assign the held-out half, per-group empirical
  // conformal quantiles with the global Split threshold as sentinel fallback.
  Vec holdout_scores = gather_vals(cal_scores, holdout_idx, 0, holdout_idx.size());
  bool global_inf = false;
  const double global_threshold = conformal_quantile(holdout_scores, tau, &global_inf);

  std::vector<Vec> group_scores(G);
  for (std::size_t i = 0; i < holdout_idx.size(); ++i) {
    const std::size_t g = model.assign(cal_x.row_vec(holdout_idx[i]));
    group_scores[g].push_back(holdout_scores[i]);
  }
  model.thresholds.assign(G, global_threshold);
  for (std::size_t g = 0; g < G; ++g) {
    if (group_scores[g].empty()) continue;
    const RankResult r = conformal_rank(group_scores[g].size(), tau);
    if (!r.infinite) model.thresholds[g] = kth_smallest(group_scores[g], r.k);
  }
  return model;
}

PredictionBox PlcpPredictor::predict_box(const Vec& x) const {
  const Vec center = mu.predict(x);
  const double t = model.threshold(x);
  PredictionBox box;
  box.lower.resize(center.size());
  box.upper.resize(center.size());
  for (std::size_t j = 0; j < center.size(); ++j) {
    box.lower[j] = center[j] - t;
    box.upper[j] = center[j] + t;
  }
  return box;
}

bool PlcpPredictor::covers(const Vec& x, const Vec& y) const {
  const double t = model.threshold(x);
  if (std::isinf(t)) return true;
  return linf_score(mu.predict(x), y) <= t;
}

void AldQuantileFn::save(std::ostream& os) const {
  write_mlp(os, model.backbone);
  write_dense(os, model.q_head);
  write_dense(os, model.sigma_head);
  os.write(reinterpret_cast<const char*>(&model.sigma_floor), sizeof(double));
  os.write(reinterpret_cast<const char*>(&model.score_mean), sizeof(double));
  os.write(reinterpret_cast<const char*>(&model.score_std), sizeof(double));
}

void GapIntervalModel::save(std::ostream& os) const {
  write_mlp(os, model.backbone);
  write_dense(os, model.lo_head);
  write_dense(os, model.gap_head);
  const std::uint64_t d = model.y_mean.size();
  os.write(reinterpret_cast<const char*>(&d), sizeof(d));
  os.write(reinterpret_cast<const char*>(model.y_mean.data()),
           static_cast<std::streamsize>(8 * d));
  os.write(reinterpret_cast<const char*>(model.y_std.data()),
           static_cast<std::streamsize>(8 * d));
}

void AldIntervalModel::save(std::ostream& os) const {
  const std::uint64_t d = lo_models.size();
  os.write(reinterpret_cast<const char*>(&d), sizeof(d));
  auto save_ald = [&os](const AldModel& m) {
    write_mlp(os, m.backbone);
    write_dense(os, m.q_head);
    write_dense(os, m.sigma_head);
    os.write(reinterpret_cast<const char*>(&m.sigma_floor), sizeof(double));
    os.write(reinterpret_cast<const char*>(&m.score_mean), sizeof(double));
    os.write(reinterpret_cast<const char*>(&m.score_std), sizeof(double));
  };
  for (const auto& m : lo_models) save_ald(m);
  for (const auto& m : hi_models) save_ald(m);
}

}  // namespace cpcp
