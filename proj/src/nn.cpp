#include "cpcp/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "cpcp/losses.hpp"

namespace cpcp {

double softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

std::size_t MlpParams::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.w.data.size() + l.b.size();
  return n;
}

DenseLayer make_dense(std::size_t out, std::size_t in, RngStream& rng) {
  DenseLayer l;
  l.w = Matrix(out, in);
  l.b.assign(out, 0.0);
  const double a = 1.0 / std::sqrt(static_cast<double>(in));
  for (auto& w : l.w.data) w = (2.0 * rng.next_uniform() - 1.0) * a;
  for (auto& b : l.b) b = (2.0 * rng.next_uniform() - 1.0) * a;
  return l;
}

MlpParams make_mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out,
                   RngStream& rng, bool relu_output) {
  MlpParams p;
  p.relu_output = relu_output;
  std::size_t prev = in;
  for (std::size_t h : hidden) {
    p.layers.push_back(make_dense(h, prev, rng));
    prev = h;
  }
  p.layers.push_back(make_dense(out, prev, rng));
  return p;
}

MlpGrads make_zero_grads(const MlpParams& p) {
  MlpGrads g;
  g.layers.reserve(p.layers.size());
  for (const auto& l : p.layers) {
    DenseLayer z;
    z.w = Matrix(l.w.rows, l.w.cols, 0.0);
    z.b.assign(l.b.size(), 0.0);
    g.layers.push_back(std::move(z));
  }
  return g;
}

Matrix dense_forward(const DenseLayer& l, const Matrix& x) {
  if (x.cols != l.w.cols) {
    throw std::invalid_argument("dense_forward: input dim " + std::to_string(x.cols) +
                                " != layer in dim " + std::to_string(l.w.cols));
  }
  Matrix out(x.rows, l.w.rows);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double* xi = x.row(i);
    double* oi = out.row(i);
    for (std::size_t j = 0; j < l.w.rows; ++j) {
      const double* wj = l.w.row(j);
      double acc = l.b[j];
      for (std::size_t k = 0; k < l.w.cols; ++k) acc += wj[k] * xi[k];
      oi[j] = acc;
    }
  }
  return out;
}

void dense_backward(const DenseLayer& l, const Matrix& x, const Matrix& upstream,
                    DenseLayer& grad, Matrix* dx) {
  // dW = upstream^T * x, db = colsum(upstream), dx = upstream * W
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double* xi = x.row(i);
    const double* ui = upstream.row(i);
    for (std::size_t j = 0; j < l.w.rows; ++j) {
      const double uij = ui[j];
      if (uij == 0.0) continue;
      double* gw = grad.w.row(j);
      for (std::size_t k = 0; k < l.w.cols; ++k) gw[k] += uij * xi[k];
      grad.b[j] += uij;
    }
  }
  if (dx) {
    *dx = Matrix(x.rows, l.w.cols, 0.0);
    for (std::size_t i = 0; i < x.rows; ++i) {
      const double* ui = upstream.row(i);
      double* di = dx->row(i);
      for (std::size_t j = 0; j < l.w.rows; ++j) {
        const double uij = ui[j];
        if (uij == 0.0) continue;
        const double* wj = l.w.row(j);
        for (std::size_t k = 0; k < l.w.cols; ++k) di[k] += uij * wj[k];
      }
    }
  }
}

namespace {

void relu_inplace(Matrix& m) {
  for (auto& v : m.data) v = v > 0.0 ? v : 0.0;
}

// Zeroes upstream entries where the activation was clipped.
void relu_mask(const Matrix& post, Matrix& upstream) {
  for (std::size_t i = 0; i < post.data.size(); ++i) {
    if (post.data[i] <= 0.0) upstream.data[i] = 0.0;
  }
}

}  // namespace

ForwardCache mlp_forward_cached(const MlpParams& p, const Matrix& x) {
  ForwardCache cache;
  cache.inputs.reserve(p.layers.size());
  Matrix cur = x;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    cache.inputs.push_back(cur);
    cur = dense_forward(p.layers[l], cur);
    const bool is_last = (l + 1 == p.layers.size());
    if (!is_last || p.relu_output) relu_inplace(cur);
  }
  cache.output = std::move(cur);
  return cache;
}

Matrix mlp_forward(const MlpParams& p, const Matrix& x) {
  Matrix cur = x;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    cur = dense_forward(p.layers[l], cur);
    const bool is_last = (l + 1 == p.layers.size());
    if (!is_last || p.relu_output) relu_inplace(cur);
  }
  return cur;
}

Vec mlp_forward(const MlpParams& p, const Vec& x) {
  Matrix xb(1, x.size());
  xb.data = x;
  return mlp_forward(p, xb).data;
}

MlpGrads mlp_backward(const MlpParams& p, const ForwardCache& cache, const Matrix& upstream,
                      Matrix* dx) {
  MlpGrads grads = make_zero_grads(p);
  Matrix d = upstream;
  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const bool is_last = (li + 1 == p.layers.size());
    if (!is_last) {
      relu_mask(cache.inputs[li + 1], d);
    } else if (p.relu_output) {
      relu_mask(cache.output, d);
    }
    Matrix dprev;
    const bool need_dx = li > 0 || dx != nullptr;
    dense_backward(p.layers[li], cache.inputs[li], d, grads.layers[li],
                   need_dx ? &dprev : nullptr);
    d = std::move(dprev);
  }
  if (dx) *dx = std::move(d);
  return grads;
}

MlpGrads mlp_backward(const MlpParams& p, const Vec& x, const Vec& upstream) {
  Matrix xb(1, x.size());
  xb.data = x;
  Matrix ub(1, upstream.size());
  ub.data = upstream;
  ForwardCache cache = mlp_forward_cached(p, xb);
  return mlp_backward(p, cache, ub);
}

ScalarHeadGrads mse_grads(const MlpParams& p, const Matrix& x, const Vec& y) {
  if (x.rows != y.size() || p.out_dim() != 1) {
    throw std::invalid_argument("mse_grads: need scalar output and matching sizes");
  }
  ForwardCache cache = mlp_forward_cached(p, x);
  const double inv_n = 1.0 / static_cast<double>(x.rows);
  Matrix upstream(x.rows, 1);
  double loss = 0.0;
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double diff = cache.output(i, 0) - y[i];
    loss += diff * diff * inv_n;
    upstream(i, 0) = 2.0 * diff * inv_n;
  }
  ScalarHeadGrads out;
  out.net = mlp_backward(p, cache, upstream);
  out.loss = loss;
  return out;
}

ScalarHeadGrads pinball_grads(const MlpParams& p, const Matrix& x, const Vec& y, double tau) {
  const Vec ones(x.rows, 1.0);
  return weighted_pinball_grads(p, x, y, ones, tau, 0.0);
}

ScalarHeadGrads weighted_pinball_grads(const MlpParams& p, const Matrix& x, const Vec& y,
                                       const Vec& weights, double tau, double lambda) {
  if (x.rows != y.size() || weights.size() != y.size() || p.out_dim() != 1) {
    throw std::invalid_argument("weighted_pinball_grads: size mismatch or non-scalar output");
  }
  ForwardCache cache = mlp_forward_cached(p, x);
  const double inv_n = 1.0 / static_cast<double>(x.rows);
  Matrix upstream(x.rows, 1);
  double loss = 0.0;
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double q = cache.output(i, 0);
    const double coeff = lambda * weights[i] + (1.0 - lambda);
    loss += coeff * pinball(tau, q, y[i]) * inv_n;
    upstream(i, 0) = coeff * pinball_subgrad_q(tau, q, y[i]) * inv_n;
  }
  ScalarHeadGrads out;
  out.net = mlp_backward(p, cache, upstream);
  out.loss = loss;
  return out;
}

AdamState::AdamState(std::size_t n_params, AdamConfig cfg)
    : cfg_(cfg), m_(n_params, 0.0), v_(n_params, 0.0) {}

void AdamState::update(std::size_t offset, double* p, const double* g, std::size_t n) {
  if (offset + n > m_.size()) {
    throw std::invalid_argument("AdamState::update: block out of range");
  }
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < n; ++i) {
    double& m = m_[offset + i];
    double& v = v_[offset + i];
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g[i];
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g[i] * g[i];
    const double mhat = m / bc1;
    const double vhat = v / bc2;
    p[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
  }
}

MlpAdam::MlpAdam(const MlpParams& p, AdamConfig cfg) : state_(p.param_count(), cfg) {}

void MlpAdam::step(MlpParams& p, const MlpGrads& g) {
  state_.begin_step();
  std::size_t offset = 0;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& layer = p.layers[l];
    const auto& grad = g.layers[l];
    state_.update(offset, layer.w.data.data(), grad.w.data.data(), layer.w.data.size());
    offset += layer.w.data.size();
    state_.update(offset, layer.b.data(), grad.b.data(), layer.b.size());
    offset += layer.b.size();
  }
}

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

void require_finite(const Matrix& m, const char* what) {
  for (double v : m.data) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument(std::string(what) + ": non-finite entry");
    }
  }
}

struct ScoreStats {
  double mean = 0.0;
  double std = 1.0;
};

ScoreStats score_stats(const Vec& s) {
  ScoreStats st;
  const double n = static_cast<double>(s.size());
  double sum = 0.0;
  for (double v : s) sum += v;
  st.mean = sum / n;
  double sq = 0.0;
  for (double v : s) sq += (v - st.mean) * (v - st.mean);
  st.std = std::sqrt(sq / n);
  if (!(st.std > 1e-12)) st.std = 1.0;
  return st;
}

}  // namespace

Vec Regressor::predict(const Vec& x) const {
  Vec out = mlp_forward(net, x);
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = y_mean[j] + y_std[j] * out[j];
  return out;
}

Matrix Regressor::predict(const Matrix& x) const {
  Matrix out = mlp_forward(net, x);
  for (std::size_t i = 0; i < out.rows; ++i) {
    double* r = out.row(i);
    for (std::size_t j = 0; j < out.cols; ++j) r[j] = y_mean[j] + y_std[j] * r[j];
  }
  return out;
}

Regressor train_regressor_mse(const Matrix& x, const Matrix& y, const TrainConfig& cfg,
                              RngStream rng) {
  if (x.rows == 0 || y.rows != x.rows) {
    throw std::invalid_argument("train_regressor_mse: empty data or row count mismatch");
  }
  require_finite(x, "train_regressor_mse x");
  require_finite(y, "train_regressor_mse y");

  const std::size_t n = x.rows;
  const std::size_t d = y.cols;

  Regressor reg;
  reg.y_mean.assign(d, 0.0);
  reg.y_std.assign(d, 1.0);
  for (std::size_t j = 0; j < d; ++j) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += y(i, j);
    reg.y_mean[j] = sum / static_cast<double>(n);
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dv = y(i, j) - reg.y_mean[j];
      sq += dv * dv;
    }
    const double sd = std::sqrt(sq / static_cast<double>(n));
    reg.y_std[j] = sd > 1e-12 ? sd : 1.0;
  }

  Matrix yt(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) yt(i, j) = (y(i, j) - reg.y_mean[j]) / reg.y_std[j];
  }

  reg.net = make_mlp(x.cols, cfg.hidden, d, rng);
  MlpAdam opt(reg.net, cfg.adam);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(start + cfg.batch_size, n);
      const Matrix xb = gather_rows(x, order, start, end);
      const Matrix yb = gather_rows(yt, order, start, end);
      ForwardCache cache = mlp_forward_cached(reg.net, xb);
      const double nb = static_cast<double>(end - start);
      Matrix upstream(xb.rows, d);
      for (std::size_t i = 0; i < xb.rows; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          upstream(i, j) = 2.0 * (cache.output(i, j) - yb(i, j)) / nb;
        }
      }
      MlpGrads grads = mlp_backward(reg.net, cache, upstream);
      opt.step(reg.net, grads);
    }
  }
  return reg;
}

ThreeHeadQuantileNet make_three_head_net(std::size_t in_dim,
                                         const std::vector<std::size_t>& hidden, double delta,
                                         RngStream& rng) {
  if (hidden.empty()) {
    throw std::invalid_argument("make_three_head_net: backbone needs >= 1 hidden layer");
  }
  ThreeHeadQuantileNet net;
  net.delta = delta;
  std::vector<std::size_t> front(hidden.begin(), hidden.end() - 1);
  net.backbone = make_mlp(in_dim, front, hidden.back(), rng, /*relu_output=*/true);
  const std::size_t feat = hidden.back();
  net.head_main = make_dense(1, feat, rng);
  // Gap heads start at zero so the initial gaps are a constant softplus(bias);
  // joint training warm-starts the biases at the empirical quantile gaps.
  net.head_low_gap = DenseLayer{Matrix(1, feat, 0.0), Vec(1, 0.0)};
  net.head_high_gap = DenseLayer{Matrix(1, feat, 0.0), Vec(1, 0.0)};
  return net;
}

namespace {

// Standardized-unit head outputs for a batch of features.
struct ThreeHeadRaw {
  Vec q_main, raw_low, raw_high;
};

ThreeHeadRaw three_head_heads(const ThreeHeadQuantileNet& net, const Matrix& feats) {
  ThreeHeadRaw out;
  const Matrix qm = dense_forward(net.head_main, feats);
  const Matrix rl = dense_forward(net.head_low_gap, feats);
  const Matrix rh = dense_forward(net.head_high_gap, feats);
  out.q_main = qm.data;
  out.raw_low = rl.data;
  out.raw_high = rh.data;
  return out;
}

}  // namespace

ThreeHeadOut three_head_forward(const ThreeHeadQuantileNet& net, const Vec& x) {
  Matrix xb(1, x.size());
  xb.data = x;
  const Matrix rows = three_head_forward_batch(net, xb);
  return {rows(0, 0), rows(0, 1), rows(0, 2)};
}

Matrix three_head_forward_batch(const ThreeHeadQuantileNet& net, const Matrix& x) {
  const Matrix feats = mlp_forward(net.backbone, x);
  const ThreeHeadRaw heads = three_head_heads(net, feats);
  Matrix out(x.rows, 3);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double qm = heads.q_main[i];
    const double lo = qm - softplus(heads.raw_low[i]);
    const double hi = qm + softplus(heads.raw_high[i]);
    out(i, 0) = net.score_mean + net.score_std * lo;
    out(i, 1) = net.score_mean + net.score_std * qm;
    out(i, 2) = net.score_mean + net.score_std * hi;
  }
  return out;
}

void train_quantile_joint(ThreeHeadQuantileNet& net, const Matrix& x, const Vec& scores,
                          double tau, const TrainConfig& cfg, RngStream rng) {
  if (x.rows == 0 || scores.size() != x.rows) {
    throw std::invalid_argument("train_quantile_joint: empty data or size mismatch");
  }
  const double delta = net.delta;
  if (!(delta > 0.0) || delta >= std::min(tau, 1.0 - tau)) {
    throw std::invalid_argument("train_quantile_joint: delta outside (0, min(tau, 1-tau))");
  }

  const ScoreStats st = score_stats(scores);
  net.score_mean = st.mean;
  net.score_std = st.std;
  const std::size_t n = x.rows;
  Vec s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = (scores[i] - st.mean) / st.std;
  if (cfg.epochs == 0) return;

  // Warm-start the head biases at the empirical quantiles of the standardized
  // scores: the heads then only have to learn the per-input modulation. The
  // softplus-ln2 default would otherwise cost thousands of steps of bias
  // descent before the gap estimates carry any signal.
  {
    Vec sorted = s;
    std::sort(sorted.begin(), sorted.end());
    auto emp_quantile = [&](double level) {
      const double pos = level * static_cast<double>(n - 1);
      const std::size_t idx = static_cast<std::size_t>(pos);
      return sorted[std::min(idx, n - 1)];
    };
    const double q_mid = emp_quantile(tau);
    const double gap_lo = std::max(q_mid - emp_quantile(tau - delta), 1e-3);
    const double gap_hi = std::max(emp_quantile(tau + delta) - q_mid, 1e-3);
    auto inv_softplus = [](double g) { return std::log(std::expm1(g)); };
    net.head_main.b[0] = q_mid;
    net.head_low_gap.b[0] = inv_softplus(gap_lo);
    net.head_high_gap.b[0] = inv_softplus(gap_hi);
  }

  const std::size_t feat = net.backbone.out_dim();
  MlpAdam opt_backbone(net.backbone, cfg.adam);
  // One shared step counter across the heads keeps bias correction in sync.
  AdamState opt_heads(3 * (feat + 1), cfg.adam);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(start + cfg.batch_size, n);
      const Matrix xb = gather_rows(x, order, start, end);
      const Vec sb = gather_vals(s, order, start, end);
      const std::size_t nb = end - start;
      const double inv_nb = 1.0 / static_cast<double>(nb);

      ForwardCache cache = mlp_forward_cached(net.backbone, xb);
      const Matrix& feats = cache.output;
      const ThreeHeadRaw heads = three_head_heads(net, feats);

      Matrix up_main(nb, 1), up_low(nb, 1), up_high(nb, 1);
      for (std::size_t i = 0; i < nb; ++i) {
        const double qm = heads.q_main[i];
        const double ql = qm - softplus(heads.raw_low[i]);
        const double qh = qm + softplus(heads.raw_high[i]);
        const double gm = pinball_subgrad_q(tau, qm, sb[i]);
        const double gl = pinball_subgrad_q(tau - delta, ql, sb[i]);
        const double gh = pinball_subgrad_q(tau + delta, qh, sb[i]);
        up_main(i, 0) = (gm + gl + gh) * inv_nb;
        up_low(i, 0) = -gl * sigmoid(heads.raw_low[i]) * inv_nb;
        up_high(i, 0) = gh * sigmoid(heads.raw_high[i]) * inv_nb;
      }

      DenseLayer g_main{Matrix(1, feat, 0.0), Vec(1, 0.0)};
      DenseLayer g_low{Matrix(1, feat, 0.0), Vec(1, 0.0)};
      DenseLayer g_high{Matrix(1, feat, 0.0), Vec(1, 0.0)};
      Matrix d_main, d_low, d_high;
      dense_backward(net.head_main, feats, up_main, g_main, &d_main);
      dense_backward(net.head_low_gap, feats, up_low, g_low, &d_low);
      dense_backward(net.head_high_gap, feats, up_high, g_high, &d_high);

      Matrix d_feats(nb, feat);
      for (std::size_t i = 0; i < d_feats.data.size(); ++i) {
        d_feats.data[i] = d_main.data[i] + d_low.data[i] + d_high.data[i];
      }
      MlpGrads bb_grads = mlp_backward(net.backbone, cache, d_feats);
      opt_backbone.step(net.backbone, bb_grads);

      opt_heads.begin_step();
      opt_heads.update(0, net.head_main.w.data.data(), g_main.w.data.data(), feat);
      opt_heads.update(feat, net.head_main.b.data(), g_main.b.data(), 1);
      opt_heads.update(feat + 1, net.head_low_gap.w.data.data(), g_low.w.data.data(), feat);
      opt_heads.update(2 * feat + 1, net.head_low_gap.b.data(), g_low.b.data(), 1);
      opt_heads.update(2 * feat + 2, net.head_high_gap.w.data.data(), g_high.w.data.data(),
                       feat);
      opt_heads.update(3 * feat + 2, net.head_high_gap.b.data(), g_high.b.data(), 1);
    }
  }
}

void finetune_main_head(ThreeHeadQuantileNet& net, const Matrix& x, const Vec& scores,
                        const Vec& weights, double tau, double lambda, const TrainConfig& cfg,
                        RngStream rng) {
  const std::size_t n = x.rows;
  if (n == 0 || scores.size() != n) {
    throw std::invalid_argument("finetune_main_head: empty data or size mismatch");
  }
  if (weights.size() != n) {
    throw std::invalid_argument("finetune_main_head: weight count " +
                                std::to_string(weights.size()) + " != sample count " +
                                std::to_string(n));
  }

  // Normalize to mean one so scaling the raw weights never changes the
  // trajectory; all-equal weights reduce to the plain pinball objective.
  Vec w(n, 1.0);
  double wsum = 0.0;
  for (double v : weights) wsum += v;
  if (wsum > 0.0) {
    const double wmean = wsum / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) w[i] = weights[i] / wmean;
  }

  Vec s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = (scores[i] - net.score_mean) / net.score_std;

  // Backbone frozen: cache its features once. The head fit is convex in its
  // parameters, so each epoch takes one full-batch subgradient step on the
  // exact mixed objective over all of the fine-tuning data.
  const Matrix feats = mlp_forward(net.backbone, x);
  const std::size_t feat = net.backbone.out_dim();
  AdamState opt(feat + 1, cfg.adam);
  const double inv_n = 1.0 / static_cast<double>(n);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const Matrix qm = dense_forward(net.head_main, feats);
    Matrix upstream(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
      const double g = pinball_subgrad_q(tau, qm(i, 0), s[i]);
      upstream(i, 0) = (lambda * w[i] + (1.0 - lambda)) * g * inv_n;
    }
    DenseLayer grad{Matrix(1, feat, 0.0), Vec(1, 0.0)};
    dense_backward(net.head_main, feats, upstream, grad, nullptr);
    opt.begin_step();
    opt.update(0, net.head_main.w.data.data(), grad.w.data.data(), feat);
    opt.update(feat, net.head_main.b.data(), grad.b.data(), 1);
  }
  (void)rng;  // stream layout kept stable; full-batch epochs draw nothing
}

double QuantileNet::predict(const Vec& x) const {
  return score_mean + score_std * mlp_forward(net, x)[0];
}

Vec QuantileNet::predict_batch(const Matrix& x) const {
  Matrix out = mlp_forward(net, x);
  Vec q(out.rows);
  for (std::size_t i = 0; i < out.rows; ++i) q[i] = score_mean + score_std * out(i, 0);
  return q;
}

QuantileNet train_quantile_single(const Matrix& x, const Vec& scores, double tau,
                                  const TrainConfig& cfg, RngStream rng) {
  if (x.rows == 0 || scores.size() != x.rows) {
    throw std::invalid_argument("train_quantile_single: empty data or size mismatch");
  }
  QuantileNet qn;
  const ScoreStats st = score_stats(scores);
  qn.score_mean = st.mean;
  qn.score_std = st.std;
  const std::size_t n = x.rows;
  Vec s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = (scores[i] - st.mean) / st.std;

  qn.net = make_mlp(x.cols, cfg.hidden, 1, rng);
  MlpAdam opt(qn.net, cfg.adam);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(start + cfg.batch_size, n);
      const Matrix xb = gather_rows(x, order, start, end);
      const Vec sb = gather_vals(s, order, start, end);
      ScalarHeadGrads g = pinball_grads(qn.net, xb, sb, tau);
      opt.step(qn.net, g.net);
    }
  }
  return qn;
}

namespace {

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated u64");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

void write_doubles(std::ostream& os, const Vec& v) {
  static_assert(sizeof(double) == 8);
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(8 * v.size()));
}

void read_doubles(std::istream& is, Vec& v) {
  is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(8 * v.size()));
  if (!is) throw std::runtime_error("checkpoint: truncated f64 block");
}

}  // namespace

void write_dense(std::ostream& os, const DenseLayer& l) {
  write_u64(os, l.w.rows);
  write_u64(os, l.w.cols);
  write_doubles(os, l.w.data);
  write_doubles(os, l.b);
}

DenseLayer read_dense(std::istream& is) {
  DenseLayer l;
  const std::uint64_t rows = read_u64(is);
  const std::uint64_t cols = read_u64(is);
  l.w = Matrix(rows, cols);
  l.b.assign(rows, 0.0);
  read_doubles(is, l.w.data);
  read_doubles(is, l.b);
  return l;
}

void write_mlp(std::ostream& os, const MlpParams& p) {
  os.write("MLP0", 4);
  write_u64(os, p.layers.size());
  write_u64(os, p.relu_output ? 1 : 0);
  for (const auto& l : p.layers) write_dense(os, l);
}

MlpParams read_mlp(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::strncmp(magic, "MLP0", 4) != 0) {
    throw std::runtime_error("checkpoint: bad MLP magic");
  }
  MlpParams p;
  const std::uint64_t nl = read_u64(is);
  p.relu_output = read_u64(is) != 0;
  p.layers.reserve(nl);
  for (std::uint64_t i = 0; i < nl; ++i) p.layers.push_back(read_dense(is));
  return p;
}

}  // namespace cpcp
