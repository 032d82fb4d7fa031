#pragma once

#include <cstddef>
#include <iosfwd>
#include <vector>

#include "cpcp/core.hpp"

namespace cpcp {

/// Overflow-safe softplus log(1 + exp(z)).
double softplus(double z);
double sigmoid(double z);

struct DenseLayer {
  Matrix w;  // out x in
  Vec b;     // out
};

/// Fully-connected network: ReLU after every hidden layer, identity output.
/// Feature extractors set relu_output so the last layer is ReLU-activated too.
struct MlpParams {
  std::vector<DenseLayer> layers;
  bool relu_output = false;

  std::size_t in_dim() const { return layers.front().w.cols; }
  std::size_t out_dim() const { return layers.back().w.rows; }
  std::size_t param_count() const;
};

struct MlpGrads {
  std::vector<DenseLayer> layers;
};

/// Symmetric uniform fan-in initialization: U(-1/sqrt(in), 1/sqrt(in)) for
/// weights (row-major draw order) and biases.
DenseLayer make_dense(std::size_t out, std::size_t in, RngStream& rng);
MlpParams make_mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out,
                   RngStream& rng, bool relu_output = false);
MlpGrads make_zero_grads(const MlpParams& p);

Matrix dense_forward(const DenseLayer& l, const Matrix& x);
/// Accumulates parameter gradients into grad; writes dL/dx into dx when given.
void dense_backward(const DenseLayer& l, const Matrix& x, const Matrix& upstream,
                    DenseLayer& grad, Matrix* dx);

struct ForwardCache {
  std::vector<Matrix> inputs;  // inputs[l] is the input to layer l; inputs[0] = x
  Matrix output;               // final activation
};

Matrix mlp_forward(const MlpParams& p, const Matrix& x);
Vec mlp_forward(const MlpParams& p, const Vec& x);
ForwardCache mlp_forward_cached(const MlpParams& p, const Matrix& x);

/// Backprop of a batch upstream gradient dL/d(output); mean-reductions are the
/// caller's responsibility (fold them into upstream).
MlpGrads mlp_backward(const MlpParams& p, const ForwardCache& cache, const Matrix& upstream,
                      Matrix* dx = nullptr);
MlpGrads mlp_backward(const MlpParams& p, const Vec& x, const Vec& upstream);

/// Batch loss value plus parameter gradients for a scalar-output net.
struct ScalarHeadGrads {
  MlpGrads net;
  double loss = 0.0;
};

/// Mean squared error head: loss = mean_i (f(x_i) - y_i)^2.
ScalarHeadGrads mse_grads(const MlpParams& p, const Matrix& x, const Vec& y);
/// Plain pinball head: loss = mean_i rho_tau(f(x_i), y_i).
ScalarHeadGrads pinball_grads(const MlpParams& p, const Matrix& x, const Vec& y, double tau);
/// Mixed weighted pinball head:
/// loss = lambda * mean_i(w_i rho_i) + (1 - lambda) * mean_i(rho_i).
ScalarHeadGrads weighted_pinball_grads(const MlpParams& p, const Matrix& x, const Vec& y,
                                       const Vec& weights, double tau, double lambda);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment optimizer state over a flat parameter vector; callers
/// address tensors by offset. begin_step() advances the shared step count used
/// for bias correction.
class AdamState {
 public:
  explicit AdamState(std::size_t n_params, AdamConfig cfg = {});
  void begin_step() { ++t_; }
  void update(std::size_t offset, double* p, const double* g, std::size_t n);
  std::size_t step_count() const { return t_; }

 private:
  AdamConfig cfg_;
  Vec m_, v_;
  std::size_t t_ = 0;
};

/// Adam over a whole MLP parameter set.
class MlpAdam {
 public:
  MlpAdam(const MlpParams& p, AdamConfig cfg = {});
  void step(MlpParams& p, const MlpGrads& g);
  std::size_t step_count() const { return state_.step_count(); }

 private:
  AdamState state_;
};

inline void optimizer_step(MlpAdam& state, MlpParams& params, const MlpGrads& grads) {
  state.step(params, grads);
}

struct TrainConfig {
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t epochs = 100;
  std::size_t batch_size = 256;
  AdamConfig adam{};
};

/// Point regressor with per-column label standardization folded in; predicts
/// in original label units.
struct Regressor {
  MlpParams net;
  Vec y_mean, y_std;

  Vec predict(const Vec& x) const;
  Matrix predict(const Matrix& x) const;
};

/// Mean-squared-error training of the point predictor. Deterministic given the
/// stream; epochs = 0 returns the freshly initialized parameters.
Regressor train_regressor_mse(const Matrix& x, const Matrix& y, const TrainConfig& cfg,
                              RngStream rng);

/// Shared backbone with a main quantile head and two softplus-positive gap
/// heads, so q_low(x) < q_main(x) < q_high(x) for every input. Scores are
/// modeled in standardized units (score_mean/score_std) and de-standardized at
/// prediction.
struct ThreeHeadQuantileNet {
  MlpParams backbone;  // relu_output = true
  DenseLayer head_main;
  DenseLayer head_low_gap;
  DenseLayer head_high_gap;
  double delta = 0.02;
  double score_mean = 0.0;
  double score_std = 1.0;
};

struct ThreeHeadOut {
  double q_low, q_main, q_high;
};

ThreeHeadQuantileNet make_three_head_net(std::size_t in_dim,
                                         const std::vector<std::size_t>& hidden, double delta,
                                         RngStream& rng);

ThreeHeadOut three_head_forward(const ThreeHeadQuantileNet& net, const Vec& x);
/// Rows of (q_low, q_main, q_high), original score units.
Matrix three_head_forward_batch(const ThreeHeadQuantileNet& net, const Matrix& x);

/// Joint pretraining: minimizes the unweighted sum of the three pinball losses
/// at levels tau-delta, tau, tau+delta. Standardization statistics are fitted
/// here and stored on the net. Throws on invalid delta or empty data.
void train_quantile_joint(ThreeHeadQuantileNet& net, const Matrix& x, const Vec& scores,
                          double tau, const TrainConfig& cfg, RngStream rng);

/// Fine-tunes head_main only; every other parameter is left bit-identical.
/// Weights are normalized to mean one, then the objective is
/// lambda * mean(w * rho) + (1 - lambda) * mean(rho) in standardized units.
void finetune_main_head(ThreeHeadQuantileNet& net, const Matrix& x, const Vec& scores,
                        const Vec& weights, double tau, double lambda, const TrainConfig& cfg,
                        RngStream rng);

/// Single-level quantile regressor trained with the plain pinball loss.
struct QuantileNet {
  MlpParams net;
  double score_mean = 0.0;
  double score_std = 1.0;

  double predict(const Vec& x) const;
  Vec predict_batch(const Matrix& x) const;
};

QuantileNet train_quantile_single(const Matrix& x, const Vec& scores, double tau,
                                  const TrainConfig& cfg, RngStream rng);

/// Flat binary layout: magic, dims as little-endian u64, row-major f64.
void write_mlp(std::ostream& os, const MlpParams& p);
MlpParams read_mlp(std::istream& is);
void write_dense(std::ostream& os, const DenseLayer& l);
DenseLayer read_dense(std::istream& is);

}  // namespace cpcp
