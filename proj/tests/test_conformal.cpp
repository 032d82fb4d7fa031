#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <functional>

#include "cpcp/conformal.hpp"
#include "cpcp/data.hpp"
#include "doctest.h"
#include "oracle_helpers.hpp"
#include "test_predictors.hpp"

using namespace cpcp;

TEST_CASE("linf score") {
  CHECK(linf_score({1.0, 2.0}, {1.0, 2.0}) == 0.0);
  CHECK(linf_score({0.0, 0.0}, {1.0, -3.0}) == 3.0);
  CHECK(linf_score({2.0}, {0.5}) == 1.5);
  CHECK_THROWS_AS(linf_score({1.0}, {1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("conformal rank and the infinite sentinel") {
  CHECK(conformal_rank(9, 0.9).k == 9);
  CHECK_FALSE(conformal_rank(9, 0.9).infinite);
  CHECK(conformal_rank(99, 0.9).k == 90);
  CHECK(conformal_rank(5, 0.9).infinite);
}

TEST_CASE("kth smallest") {
  CHECK(kth_smallest({3.0, 1.0, 2.0}, 2) == 2.0);
  CHECK(kth_smallest({5.0, -1.0, 7.0, 3.0}, 4) == 7.0);
  CHECK_THROWS_AS(kth_smallest({1.0}, 0), std::out_of_range);
  CHECK_THROWS_AS(kth_smallest({1.0}, 2), std::out_of_range);
}

TEST_CASE("rank plus selection reproduce full-sort quantiles on fuzzed arrays") {
  RngStream rng(1, 0);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.next_below(60);
    Vec vals(n);
    for (auto& v : vals) v = rng.next_normal();
    const double tau = 0.02 + 0.96 * rng.next_uniform();
    const RankResult r = conformal_rank(n, tau);
    Vec sorted = vals;
    std::sort(sorted.begin(), sorted.end());
    if (r.infinite) {
      CHECK(r.k > n);
    } else {
      CHECK(kth_smallest(vals, r.k) == sorted[r.k - 1]);
    }
  }
}

TEST_CASE("split threshold examples") {
  Vec s10(10);
  for (int i = 0; i < 10; ++i) s10[i] = i + 1.0;
  CHECK(conformal_quantile(s10, 0.9) == 10.0);
  Vec s99(99);
  for (int i = 0; i < 99; ++i) s99[i] = i + 1.0;
  CHECK(conformal_quantile(s99, 0.9) == 90.0);
  const Vec constant(25, 3.25);
  CHECK(conformal_quantile(constant, 0.9) == 3.25);
}

TEST_CASE("split predictor box and sentinel behavior") {
  const Regressor mu = testpred::constant_regressor(1, {2.0});
  auto pred = split_cp_fit(mu, Vec{0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5}, 0.9);
  const PredictionBox box = pred->predict_box({0.0});
  CHECK(box.lower[0] == doctest::Approx(1.5));
  CHECK(box.upper[0] == doctest::Approx(2.5));
  CHECK(pred->covers({0.0}, {2.4}));
  CHECK_FALSE(pred->covers({0.0}, {2.6}));

  // ceil(6 * 0.9) = 6 > 5: infinite threshold, everything is covered.
  auto inf_pred = split_cp_fit(mu, Vec{1.0, 2.0, 3.0, 4.0, 5.0}, 0.9);
  CHECK(inf_pred->infinite_threshold());
  CHECK(inf_pred->covers({0.0}, {1e12}));
  CHECK(std::isinf(inf_pred->predict_box({0.0}).upper[0]));
}

TEST_CASE("split threshold is monotone in tau") {
  RngStream rng(2, 0);
  Vec scores(73);
  for (auto& v : scores) v = rng.next_normal();
  double prev = -1e300;
  for (double tau = 0.05; tau < 0.95; tau += 0.05) {
    bool inf = false;
    const double q = conformal_quantile(scores, tau, &inf);
    if (inf) continue;
    CHECK(q >= prev);
    prev = q;
  }
}

TEST_CASE("weights from gaps") {
  CHECK(weights_from_gaps({0.08}, 0.02)[0] == doctest::Approx(0.5));
  CHECK(weights_from_gaps({0.04}, 0.02)[0] == doctest::Approx(1.0));
  // The floor caps degenerate gaps.
  CHECK(weights_from_gaps({0.0}, 0.02, 1e-8)[0] == doctest::Approx(2.0 * 0.02 / 1e-8));
}

TEST_CASE("clip and normalize weights") {
  const Vec flat = clip_normalize_weights({1.0, 1.0, 1.0, 1.0}, 5.0);
  for (double v : flat) CHECK(v == doctest::Approx(0.25));

  const Vec clipped = clip_normalize_weights({10.0, 1.0, 1.0}, 2.0);
  CHECK(clipped[0] == doctest::Approx(0.8));
  CHECK(clipped[1] == doctest::Approx(0.1));
  CHECK(clipped[2] == doctest::Approx(0.1));

  const Vec mild = clip_normalize_weights({3.0, 1.0}, 5.0);
  CHECK(mild[0] == doctest::Approx(0.75));
  CHECK(mild[1] == doctest::Approx(0.25));

  const Vec zeros = clip_normalize_weights({0.0, 0.0}, 5.0);
  CHECK(zeros[0] == doctest::Approx(0.5));
  CHECK_THROWS_AS(clip_normalize_weights({-1.0, 2.0}, 5.0), std::invalid_argument);
  CHECK_THROWS_AS(clip_normalize_weights({1.0}, 0.0), std::invalid_argument);
}

TEST_CASE("clip and normalize properties on fuzzed inputs") {
  RngStream rng(3, 0);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.next_below(40);
    Vec raw(n);
    for (auto& v : raw) v = rng.next_uniform() * (rng.next_uniform() < 0.1 ? 100.0 : 1.0);
    const double m = 0.5 + 5.0 * rng.next_uniform();
    const Vec out = clip_normalize_weights(raw, m);
    double sum = 0.0;
    double raw_mean = 0.0;
    for (double v : raw) raw_mean += v / static_cast<double>(n);
    double clipped_sum = 0.0;
    for (double v : raw) clipped_sum += std::min(v, m * raw_mean);
    for (std::size_t i = 0; i < n; ++i) {
      sum += out[i];
      if (clipped_sum > 0.0) {
        // Cap respected pre-normalization.
        CHECK(out[i] * clipped_sum <= m * raw_mean * (1.0 + 1e-12));
      }
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("rcp with a zero quantile function reduces to split") {
  const Regressor mu = testpred::constant_regressor(2, {0.0});
  RngStream rng(4, 0);
  const std::size_t m = 49;
  Matrix cal_x(m, 2);
  Vec scores(m);
  for (std::size_t i = 0; i < m; ++i) {
    cal_x(i, 0) = rng.next_uniform();
    cal_x(i, 1) = rng.next_uniform();
    scores[i] = std::fabs(rng.next_normal());
  }
  auto zero_q = std::make_shared<testpred::FnQuantile>([](const Vec&) { return 0.0; });
  auto rcp = rcp_fit(mu, zero_q, cal_x, scores, 0.9);
  const double split_q = conformal_quantile(scores, 0.9);
  CHECK(rcp->shift() == split_q);
  const auto split = split_cp_fit(mu, scores, 0.9);
  for (int i = 0; i < 20; ++i) {
    const Vec x = {rng.next_uniform(), rng.next_uniform()};
    CHECK(rcp->predict_box(x).upper[0] == split->predict_box(x).upper[0]);
  }
}

TEST_CASE("rcp shift is equivariant to score translation") {
  const Regressor mu = testpred::constant_regressor(1, {0.0});
  RngStream rng(5, 0);
  const std::size_t m = 77;
  Matrix cal_x(m, 1);
  Vec scores(m);
  for (std::size_t i = 0; i < m; ++i) {
    cal_x(i, 0) = rng.next_uniform();
    scores[i] = rng.next_normal();
  }
  auto zero_q = std::make_shared<testpred::FnQuantile>([](const Vec&) { return 0.0; });
  const double gamma = rcp_fit(mu, zero_q, cal_x, scores, 0.9)->shift();
  Vec shifted = scores;
  for (auto& v : shifted) v += 2.5;
  const double gamma_shifted = rcp_fit(mu, zero_q, cal_x, shifted, 0.9)->shift();
  CHECK(gamma_shifted == doctest::Approx(gamma + 2.5).epsilon(1e-12));
}

TEST_CASE("rcp with the analytic score quantile has a near-zero shift") {
  const SyntheticSpec spec = synthetic_preset("default");
  RngStream rng(6, 0);
  const std::size_t m = 2000;
  Dataset ds = generate_synthetic(spec, m, rng);
  const SyntheticOracle& oracle = *ds.oracle;

  // Oracle point predictor mu = nu and oracle score quantile.
  Vec coef(spec.feature_dim, 0.0);
  coef[spec.loc_index] = spec.loc_coef;
  const Regressor mu = testpred::linear_regressor(coef);

  Vec scores(m);
  double fbar = 0.0;
  const double tau = 0.9;
  const double z_plus = normal_quantile(0.5 * (1.0 + tau));
  for (std::size_t i = 0; i < m; ++i) {
    const Vec x = ds.x.row_vec(i);
    scores[i] = linf_score(mu.predict(x), ds.y.row_vec(i));
    // Density of the |residual| score at its tau-quantile: 2 f0(z+) / sigma.
    fbar += 2.0 * normal_pdf(z_plus) / oracle.scale(x) / static_cast<double>(m);
  }
  auto oracle_q = std::make_shared<testpred::FnQuantile>(
      [&oracle, tau](const Vec& x) { return oracle.score_quantile(x, tau); });
  auto pred = rcp_fit(mu, oracle_q, ds.x, scores, tau);
  const double sd_orderstat =
      std::sqrt(tau * (1.0 - tau) / static_cast<double>(m)) / fbar;
  CHECK(std::fabs(pred->shift()) < 3.0 * sd_orderstat);
}

TEST_CASE("gamma is invariant to permuting calibration rows") {
  const Regressor mu = testpred::constant_regressor(1, {0.0});
  RngStream rng(7, 0);
  const std::size_t m = 61;
  Matrix cal_x(m, 1);
  Vec scores(m);
  for (std::size_t i = 0; i < m; ++i) {
    cal_x(i, 0) = rng.next_uniform();
    scores[i] = rng.next_normal();
  }
  auto qfn = std::make_shared<testpred::FnQuantile>([](const Vec& x) { return 0.3 * x[0]; });
  const double gamma = rcp_fit(mu, qfn, cal_x, scores, 0.9)->shift();

  const auto perm = rng.permutation(m);
  Matrix px(m, 1);
  Vec ps(m);
  for (std::size_t i = 0; i < m; ++i) {
    px(i, 0) = cal_x(perm[i], 0);
    ps[i] = scores[perm[i]];
  }
  CHECK(rcp_fit(mu, qfn, px, ps, 0.9)->shift() == gamma);
}

TEST_CASE("split calibration partition sizes and disjointness") {
  RngStream rng(8, 0);
  const CalibrationSplit s = split_calibration(100, rng);
  CHECK(s.part1.size() == 40);
  CHECK(s.part2.size() == 40);
  CHECK(s.part3.size() == 20);
  std::vector<bool> seen(100, false);
  for (const auto* part : {&s.part1, &s.part2, &s.part3}) {
    for (std::size_t i : *part) {
      CHECK(!seen[i]);
      seen[i] = true;
    }
  }
  CHECK_THROWS_AS(split_calibration(2, rng), std::invalid_argument);
}

TEST_CASE("marginal validity of split over 500 monte-carlo repetitions") {
  // Homoscedastic scores |N(0,1)|, mu = 0: exchangeability is exact.
  const double tau = 0.9;
  const std::size_t m = 99, n_test = 100;
  const Regressor mu = testpred::constant_regressor(1, {0.0});
  test_oracle::StreamingMoments cov_moments;
  for (int rep = 0; rep < 500; ++rep) {
    RngStream rng(100 + rep, 0);
    Vec scores(m);
    for (auto& v : scores) v = std::fabs(rng.next_normal());
    const auto pred = split_cp_fit(mu, scores, tau);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n_test; ++i) {
      const double y = rng.next_normal();
      if (pred->covers({0.5}, {y})) ++hits;
    }
    cov_moments.add(static_cast<double>(hits) / static_cast<double>(n_test));
  }
  const double mc_std = cov_moments.sample_std() / std::sqrt(500.0);
  CHECK(cov_moments.mean >= tau - 3.0 * mc_std);
  CHECK(cov_moments.mean <= tau + 1.0 / (m + 1.0) + 3.0 * mc_std);
}

namespace {

struct CpcpFixture {
  Matrix cal_x;
  Matrix cal_y;
  Regressor mu;
  CpcpConfig cfg;

  CpcpFixture() {
    const SyntheticSpec spec = synthetic_preset("default");
    RngStream rng(9, 0);
    Dataset ds = generate_synthetic(spec, 400, rng);
    cal_x = ds.x;
    cal_y = ds.y;
    Vec coef(spec.feature_dim, 0.0);
    coef[spec.loc_index] = spec.loc_coef;
    mu = testpred::linear_regressor(coef);
    cfg.pretrain.hidden = {8};
    cfg.pretrain.epochs = 20;
    cfg.finetune.epochs = 10;
  }
};

}  // namespace

TEST_CASE("cpcp with lambda zero equals the plain fine-tuned rcp path bitwise") {
  CpcpFixture fix;
  fix.cfg.lambda = 0.0;
  fix.cfg.clip_m.reset();
  const auto a = cpcp_fit(fix.mu, fix.cal_x, fix.cal_y, 0.9, fix.cfg, RngStream(9, 1), "a");
  const auto b =
      rcp_finetuned_fit(fix.mu, fix.cal_x, fix.cal_y, 0.9, fix.cfg, RngStream(9, 1), "b");
  CHECK(a->shift() == b->shift());
  RngStream rng(9, 2);
  for (int i = 0; i < 100; ++i) {
    Vec x(5);
    for (auto& v : x) v = rng.next_uniform();
    const PredictionBox ba = a->predict_box(x);
    const PredictionBox bb = b->predict_box(x);
    CHECK(ba.lower[0] == bb.lower[0]);
    CHECK(ba.upper[0] == bb.upper[0]);
  }
}

TEST_CASE("cpcp with weighting differs from the unweighted path") {
  CpcpFixture fix;
  fix.cfg.lambda = 1.0;
  const auto weighted =
      cpcp_fit(fix.mu, fix.cal_x, fix.cal_y, 0.9, fix.cfg, RngStream(9, 1), "w");
  const auto plain =
      rcp_finetuned_fit(fix.mu, fix.cal_x, fix.cal_y, 0.9, fix.cfg, RngStream(9, 1), "p");
  bool any_diff = false;
  RngStream rng(9, 3);
  for (int i = 0; i < 50 && !any_diff; ++i) {
    Vec x(5);
    for (auto& v : x) v = rng.next_uniform();
    if (weighted->predict_box(x).upper[0] != plain->predict_box(x).upper[0]) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("cpcp estimates weights near the oracle on a constant-scale stream") {
  // sigma(x) = 2 everywhere: target weight f0(z_0.9)/2 = 0.087749.
  RngStream rng(10, 0);
  const std::size_t n = 1500;
  Matrix x(n, 2);
  Vec s(n);
  for (std::size_t i = 0; i < n; ++i) {
    x(i, 0) = rng.next_uniform();
    x(i, 1) = rng.next_uniform();
    s[i] = 2.0 * rng.next_normal();  // nu = 0, sigma = 2, signed location-scale score
  }
  RngStream init(10, 1);
  ThreeHeadQuantileNet net = make_three_head_net(2, {16}, 0.02, init);
  TrainConfig cfg;
  cfg.hidden = {16};
  cfg.epochs = 200;
  cfg.batch_size = 128;
  train_quantile_joint(net, x, s, 0.9, cfg, RngStream(10, 2));

  Matrix test_x(300, 2);
  RngStream trng(10, 3);
  for (auto& v : test_x.data) v = trng.next_uniform();
  Vec w = estimate_weights(net, test_x);
  std::sort(w.begin(), w.end());
  const double median = w[w.size() / 2];
  const double target = 0.1754983319324868 / 2.0;
  CHECK(median > 0.5 * target);
  CHECK(median < 1.5 * target);
}

TEST_CASE("membership is consistent between the box and the score rule") {
  CpcpFixture fix;
  const auto pred = cpcp_fit(fix.mu, fix.cal_x, fix.cal_y, 0.9, fix.cfg, RngStream(11, 0));
  RngStream rng(11, 1);
  for (int i = 0; i < 10000; ++i) {
    Vec x(5);
    for (auto& v : x) v = rng.next_uniform();
    const Vec y = {4.0 * rng.next_normal()};
    const PredictionBox box = pred->predict_box(x);
    const bool in_box = !box.empty() && y[0] >= box.lower[0] && y[0] <= box.upper[0];
    CHECK(in_box == pred->covers(x, y));
  }
}

TEST_CASE("negative instance threshold produces an explicitly empty box") {
  const Regressor mu = testpred::constant_regressor(1, {0.0});
  // A steeply decreasing quantile function: far outside the calibration range
  // the instance threshold q(x) + gamma goes negative.
  auto qfn = std::make_shared<testpred::FnQuantile>([](const Vec& x) { return -10.0 * x[0]; });
  RngStream rng(12, 0);
  Matrix cal_x(30, 1);
  Vec scores(30);
  for (std::size_t i = 0; i < 30; ++i) {
    cal_x(i, 0) = rng.next_uniform();
    scores[i] = std::fabs(rng.next_normal());
  }
  auto pred = rcp_fit(mu, qfn, cal_x, scores, 0.9);
  const PredictionBox box = pred->predict_box({5.0});  // q(x) = -50, t < 0
  CHECK(box.empty());
  CHECK_FALSE(pred->covers({5.0}, {0.0}));
}
