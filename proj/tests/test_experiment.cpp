#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cpcp/baselines.hpp"
#include "cpcp/experiment.hpp"
#include "doctest.h"
#include "oracle_helpers.hpp"
#include "test_predictors.hpp"

using namespace cpcp;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.dataset.preset = "default";
  cfg.dataset.name = "synthetic-default";
  cfg.dataset.n = 3000;
  cfg.methods = {"split"};
  cfg.reps = 1;
  cfg.master_seed = 7;
  cfg.metrics.msce_k = {10};
  cfg.metrics.wsc_directions = 25;
  cfg.training.mu_hidden = {8};
  cfg.training.quantile_hidden = {8};
  cfg.training.plcp_hidden = {4};
  cfg.training.mu_epochs = 25;
  cfg.training.pretrain_epochs = 15;
  cfg.training.finetune_epochs = 8;
  cfg.training.cqr_epochs = 15;
  cfg.training.ald_epochs = 15;
  cfg.training.plcp_epochs = 10;
  cfg.training.batch_size = 128;
  return cfg;
}

std::string csv_bytes(const std::vector<ResultRow>& rows) {
  std::ostringstream os;
  emit_results_csv(rows, os);
  return os.str();
}

}  // namespace

TEST_CASE("config parsing round trip") {
  const std::string text = R"(
# benchmark configuration
[experiment]
dataset = synthetic:homoscedastic
n = 2000
methods = split, rcp ,cpcp-clip-mix
tau = 0.85
delta = 0.03
clip_m = 4.0
lambda = 0.25
reps = 3
seed = 99

[metrics]
msce_k = 10,50
wsc_mass_fraction = 0.2
wsc_directions = 123
oracle = false

[training]
mu_hidden = 32,16
quantile_hidden = 24
batch_size = 64
lr = 0.002
mu_epochs = 7

[output]
path = out.csv
format = json
wall_time = true
)";
  std::istringstream is(text);
  const ExperimentConfig cfg = parse_config(is);
  CHECK(cfg.dataset.preset == "homoscedastic");
  CHECK(cfg.dataset.n == 2000);
  CHECK(cfg.methods == std::vector<std::string>{"split", "rcp", "cpcp-clip-mix"});
  CHECK(cfg.tau == 0.85);
  CHECK(cfg.delta == 0.03);
  CHECK(cfg.clip_m == 4.0);
  CHECK(cfg.lambda == 0.25);
  CHECK(cfg.reps == 3);
  CHECK(cfg.master_seed == 99);
  CHECK(cfg.metrics.msce_k == std::vector<std::size_t>{10, 50});
  CHECK(cfg.metrics.wsc_mass_fraction == 0.2);
  CHECK(cfg.metrics.wsc_directions == 123);
  CHECK_FALSE(cfg.metrics.oracle);
  CHECK(cfg.training.mu_hidden == std::vector<std::size_t>{32, 16});
  CHECK(cfg.training.quantile_hidden == std::vector<std::size_t>{24});
  CHECK(cfg.training.batch_size == 64);
  CHECK(cfg.training.lr == 0.002);
  CHECK(cfg.training.mu_epochs == 7);
  CHECK(cfg.out_path == "out.csv");
  CHECK(cfg.format == "json");
  CHECK(cfg.emit_wall_time);
  cfg.validate();
}

TEST_CASE("config rejects unknown keys and invalid values") {
  {
    std::istringstream is("[experiment]\nnot_a_key = 1\n");
    CHECK_THROWS_WITH_AS(parse_config(is), doctest::Contains("unknown key"),
                         std::invalid_argument);
  }
  {
    ExperimentConfig cfg = tiny_config();
    cfg.methods = {"no-such-method"};
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("unknown method"),
                         std::invalid_argument);
  }
  {
    ExperimentConfig cfg = tiny_config();
    cfg.tau = 1.2;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  {
    ExperimentConfig cfg = tiny_config();
    cfg.delta = 0.2;  // >= min(tau, 1-tau)
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  {
    ExperimentConfig cfg = tiny_config();
    cfg.metrics.msce_k = {17};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
}

TEST_CASE("single repetition split run produces one healthy row") {
  const ExperimentConfig cfg = tiny_config();
  const auto rows = run_experiment(cfg);
  REQUIRE(rows.size() == 1);
  const ResultRow& r = rows[0];
  CHECK(r.status == "ok");
  CHECK(r.dataset == "synthetic-default");
  CHECK(r.method == "split");
  REQUIRE(r.marginal_coverage.has_value());
  CHECK(*r.marginal_coverage > 0.85);
  CHECK(*r.marginal_coverage < 0.95);
  CHECK(r.msce_k10.has_value());
  CHECK_FALSE(r.msce_k50.has_value());
  CHECK(r.oracle_msce.has_value());
  CHECK(r.wsc.has_value());
  CHECK(r.log_volume_per_dim.has_value());
  CHECK_FALSE(r.wall_time_seconds.has_value());
}

TEST_CASE("identical configs produce byte-identical outputs") {
  const ExperimentConfig cfg = tiny_config();
  const std::string a = csv_bytes(run_experiment(cfg));
  const std::string b = csv_bytes(run_experiment(cfg));
  CHECK(a == b);
}

TEST_CASE("adding a method never perturbs another method's rows") {
  ExperimentConfig cfg = tiny_config();
  cfg.dataset.n = 600;
  cfg.metrics.wsc_directions = 0;
  const auto solo = run_experiment(cfg);
  cfg.methods = {"split", "rcp"};
  const auto both = run_experiment(cfg);
  REQUIRE(solo.size() == 1);
  REQUIRE(both.size() == 2);
  const ResultRow* split_row = nullptr;
  for (const auto& r : both) {
    if (r.method == "split") split_row = &r;
  }
  REQUIRE(split_row != nullptr);
  CHECK(csv_bytes({solo[0]}) == csv_bytes({*split_row}));
}

TEST_CASE("a failing method cell is isolated in its status field") {
  ExperimentConfig cfg = tiny_config();
  cfg.dataset.n = 10;  // cal has 2 rows: the 40/40/20 split cannot be formed
  cfg.metrics.msce_k = {};
  cfg.metrics.wsc_directions = 0;
  cfg.metrics.oracle = false;
  cfg.training.mu_epochs = 1;
  cfg.methods = {"split", "cpcp"};
  const auto rows = run_experiment(cfg);
  REQUIRE(rows.size() == 2);
  const ResultRow* split_row = nullptr;
  const ResultRow* cpcp_row = nullptr;
  for (const auto& r : rows) {
    if (r.method == "split") split_row = &r;
    if (r.method == "cpcp") cpcp_row = &r;
  }
  REQUIRE(split_row != nullptr);
  REQUIRE(cpcp_row != nullptr);
  CHECK(split_row->status == "ok");
  CHECK(cpcp_row->status.rfind("error:", 0) == 0);
  CHECK_FALSE(cpcp_row->marginal_coverage.has_value());
}

TEST_CASE("summary statistics") {
  std::vector<ResultRow> rows;
  for (double v : {0.1, 0.3}) {
    ResultRow r;
    r.dataset = "d";
    r.method = "m";
    r.seed = rows.size();
    r.marginal_coverage = v;
    rows.push_back(r);
  }
  const auto summary = summarize(rows);
  REQUIRE(summary.size() == 1);
  CHECK(summary[0].marginal_coverage.mean == doctest::Approx(0.2));
  CHECK(summary[0].marginal_coverage.stddev == doctest::Approx(std::sqrt(0.02)));

  // Single row: std 0.
  const auto single = summarize({rows[0]});
  CHECK(single[0].marginal_coverage.stddev == 0.0);

  // Permuting rows leaves the summary unchanged.
  std::vector<ResultRow> flipped = {rows[1], rows[0]};
  const auto summary2 = summarize(flipped);
  CHECK(summary2[0].marginal_coverage.mean == summary[0].marginal_coverage.mean);
  CHECK(summary2[0].marginal_coverage.stddev == summary[0].marginal_coverage.stddev);

  CHECK_THROWS_AS(summarize({}), std::invalid_argument);
}

TEST_CASE("summary matches a streaming moments oracle") {
  RngStream rng(1, 0);
  std::vector<ResultRow> rows;
  test_oracle::StreamingMoments moments;
  for (int i = 0; i < 57; ++i) {
    ResultRow r;
    r.dataset = "d";
    r.method = "m";
    r.seed = i;
    const double v = rng.next_normal();
    r.wsc = v;
    moments.add(v);
    rows.push_back(r);
  }
  const auto summary = summarize(rows);
  CHECK(summary[0].wsc.mean == doctest::Approx(moments.mean).epsilon(1e-12));
  CHECK(summary[0].wsc.stddev == doctest::Approx(moments.sample_std()).epsilon(1e-12));
}

TEST_CASE("csv emission and exact round trip") {
  std::vector<ResultRow> rows;
  ResultRow r;
  r.dataset = "synthetic-default";
  r.method = "cpcp-clip-mix";
  r.seed = 13;
  r.marginal_coverage = 0.9012345678901234;
  r.msce_k10 = 1.2345678901234567e-4;
  r.oracle_msce = 3.3e-300;
  r.wsc = 0.8;
  r.log_volume_per_dim = -1.5;
  rows.push_back(r);

  const std::string bytes = csv_bytes(rows);
  std::istringstream is(bytes);
  const auto parsed = parse_results_csv(is);
  REQUIRE(parsed.size() == 1);
  CHECK(parsed[0].dataset == r.dataset);
  CHECK(parsed[0].method == r.method);
  CHECK(parsed[0].seed == r.seed);
  CHECK(*parsed[0].marginal_coverage == *r.marginal_coverage);
  CHECK(*parsed[0].msce_k10 == *r.msce_k10);
  CHECK_FALSE(parsed[0].msce_k50.has_value());
  CHECK(*parsed[0].oracle_msce == *r.oracle_msce);
  CHECK(*parsed[0].wsc == *r.wsc);
  CHECK(*parsed[0].log_volume_per_dim == *r.log_volume_per_dim);
  CHECK_FALSE(parsed[0].wall_time_seconds.has_value());
  CHECK(parsed[0].status == "ok");

  // Deterministic bytes.
  CHECK(csv_bytes(rows) == bytes);

  // Header-only output for an empty row set.
  const std::string empty = csv_bytes({});
  CHECK(empty.find("dataset,method,seed") == 0);
  CHECK(std::count(empty.begin(), empty.end(), '\n') == 1);
}

TEST_CASE("json emission is well formed for normal values") {
  std::vector<ResultRow> rows;
  ResultRow r;
  r.dataset = "d";
  r.method = "split";
  r.seed = 0;
  r.marginal_coverage = 0.9;
  rows.push_back(r);
  std::ostringstream os;
  emit_results_json(rows, os);
  const std::string s = os.str();
  CHECK(s.find("\"method\": \"split\"") != std::string::npos);
  CHECK(s.find("\"msce_k10\": null") != std::string::npos);
  CHECK(s.front() == '[');
}

TEST_CASE("predictor checkpoints round trip through disk") {
  const std::string path = "/tmp/cpcp_test_ckpt.bin";
  const SyntheticSpec spec = synthetic_preset("default");
  RngStream rng(2, 0);
  const Dataset ds = generate_synthetic(spec, 400, rng);
  Vec coef(spec.feature_dim, 0.0);
  coef[spec.loc_index] = spec.loc_coef;
  const Regressor mu = testpred::linear_regressor(coef);

  Standardizer ft;
  ft.mean.assign(5, 0.25);
  ft.std.assign(5, 2.0);

  CpcpConfig cc;
  cc.pretrain.hidden = {6};
  cc.pretrain.epochs = 5;
  cc.finetune.epochs = 3;
  cc.clip_m = 5.0;
  cc.lambda = 0.5;
  const auto pred = cpcp_fit(mu, ds.x, ds.y, 0.9, cc, RngStream(2, 1), "cpcp-clip-mix");

  save_predictor(*pred, ft, path);
  const PredictorCheckpoint loaded = load_predictor(path);
  CHECK(loaded.predictor->method() == "cpcp-clip-mix");
  CHECK(loaded.predictor->tau() == 0.9);
  CHECK(loaded.predictor->shift() == pred->shift());
  CHECK(loaded.feature_transform.mean == ft.mean);
  RngStream fuzz(2, 2);
  for (int i = 0; i < 50; ++i) {
    Vec x(5);
    for (auto& v : x) v = fuzz.next_uniform();
    const PredictionBox a = pred->predict_box(x);
    const PredictionBox b = loaded.predictor->predict_box(x);
    CHECK(a.lower[0] == b.lower[0]);
    CHECK(a.upper[0] == b.upper[0]);
  }
  std::remove(path.c_str());
}

TEST_CASE("every registered method fits and covers on a small run") {
  ExperimentConfig cfg = tiny_config();
  cfg.dataset.n = 800;
  cfg.methods = registered_methods();
  cfg.metrics.msce_k = {};
  cfg.metrics.wsc_directions = 0;
  cfg.metrics.oracle = true;
  const auto rows = run_experiment(cfg);
  REQUIRE(rows.size() == registered_methods().size());
  for (const auto& r : rows) {
    INFO("method ", r.method, " status ", r.status);
    CHECK(r.status == "ok");
    REQUIRE(r.marginal_coverage.has_value());
    CHECK(*r.marginal_coverage > 0.8);
    CHECK(r.oracle_msce.has_value());
  }
}
