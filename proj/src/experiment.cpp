#include "cpcp/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "cpcp/baselines.hpp"
#include "cpcp/metrics.hpp"

namespace cpcp {

const std::vector<std::string>& registered_methods() {
  static const std::vector<std::string> methods = {
      "split",   "rcp",      "rcp-ald",  "cqr",      "cqr-ald",      "plcp-20",
      "plcp-50", "cpcp",     "cpcp-clip", "cpcp-mix", "cpcp-clip-mix"};
  return methods;
}

namespace {

bool is_registered(const std::string& name) {
  const auto& m = registered_methods();
  return std::find(m.begin(), m.end(), name) != m.end();
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != ' ' && c != '\t') {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::vector<std::size_t> parse_size_list(const std::string& s, const std::string& key) {
  std::vector<std::size_t> out;
  for (const auto& tok : split_list(s)) {
    try {
      out.push_back(static_cast<std::size_t>(std::stoull(tok)));
    } catch (const std::exception&) {
      throw std::invalid_argument("config: bad integer '" + tok + "' for " + key);
    }
  }
  return out;
}

double parse_double(const std::string& s, const std::string& key) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad number '" + s + "' for " + key);
  }
}

std::size_t parse_size(const std::string& s, const std::string& key) {
  try {
    return static_cast<std::size_t>(std::stoull(s));
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad integer '" + s + "' for " + key);
  }
}

bool parse_bool(const std::string& s, const std::string& key) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw std::invalid_argument("config: bad boolean '" + s + "' for " + key);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void ExperimentConfig::validate() const {
  if (reps < 1) throw std::invalid_argument("config: reps must be >= 1");
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("config: tau outside (0,1)");
  if (!(delta > 0.0 && delta < std::min(tau, 1.0 - tau))) {
    throw std::invalid_argument("config: delta outside (0, min(tau, 1-tau))");
  }
  if (!(clip_m > 0.0)) throw std::invalid_argument("config: clip_m must be positive");
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument("config: lambda outside [0,1]");
  }
  if (methods.empty()) throw std::invalid_argument("config: no methods selected");
  for (const auto& m : methods) {
    if (!is_registered(m)) throw std::invalid_argument("config: unknown method '" + m + "'");
  }
  for (std::size_t k : metrics.msce_k) {
    if (k != 10 && k != 50) {
      throw std::invalid_argument("config: msce_k supports the values 10 and 50");
    }
  }
  if (format != "csv" && format != "json") {
    throw std::invalid_argument("config: format must be csv or json");
  }
  if (dataset.is_synthetic()) {
    synthetic_preset(dataset.preset);  // throws on unknown names
    if (dataset.n < 10) throw std::invalid_argument("config: synthetic n must be >= 10");
  } else if (dataset.feature_cols.empty() || dataset.label_cols.empty()) {
    throw std::invalid_argument("config: csv datasets need feature_cols and label_cols");
  }
}

ExperimentConfig parse_config(std::istream& is) {
  ExperimentConfig cfg;
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key = value");
    }
    const std::string key = section + "." + trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));

    if (key == "experiment.dataset") {
      if (val.rfind("synthetic:", 0) == 0) {
        cfg.dataset.preset = val.substr(10);
        cfg.dataset.csv_path.clear();
        cfg.dataset.name = "synthetic-" + cfg.dataset.preset;
      } else if (val.rfind("csv:", 0) == 0) {
        cfg.dataset.csv_path = val.substr(4);
        cfg.dataset.preset.clear();
        cfg.dataset.name = std::filesystem::path(cfg.dataset.csv_path).stem().string();
      } else {
        throw std::invalid_argument("config: dataset must be synthetic:<preset> or csv:<path>");
      }
    } else if (key == "experiment.dataset_name") {
      cfg.dataset.name = val;
    } else if (key == "experiment.n") {
      cfg.dataset.n = parse_size(val, key);
    } else if (key == "experiment.feature_cols") {
      cfg.dataset.feature_cols = split_list(val);
    } else if (key == "experiment.label_cols") {
      cfg.dataset.label_cols = split_list(val);
    } else if (key == "experiment.methods") {
      cfg.methods = split_list(val);
    } else if (key == "experiment.tau") {
      cfg.tau = parse_double(val, key);
    } else if (key == "experiment.delta") {
      cfg.delta = parse_double(val, key);
    } else if (key == "experiment.clip_m") {
      cfg.clip_m = parse_double(val, key);
    } else if (key == "experiment.lambda") {
      cfg.lambda = parse_double(val, key);
    } else if (key == "experiment.reps") {
      cfg.reps = parse_size(val, key);
    } else if (key == "experiment.seed") {
      cfg.master_seed = parse_size(val, key);
    } else if (key == "metrics.msce_k") {
      cfg.metrics.msce_k = parse_size_list(val, key);
    } else if (key == "metrics.wsc_mass_fraction") {
      cfg.metrics.wsc_mass_fraction = parse_double(val, key);
    } else if (key == "metrics.wsc_directions") {
      cfg.metrics.wsc_directions = parse_size(val, key);
    } else if (key == "metrics.oracle") {
      cfg.metrics.oracle = parse_bool(val, key);
    } else if (key == "training.mu_hidden") {
      cfg.training.mu_hidden = parse_size_list(val, key);
    } else if (key == "training.quantile_hidden") {
      cfg.training.quantile_hidden = parse_size_list(val, key);
    } else if (key == "training.plcp_hidden") {
      cfg.training.plcp_hidden = parse_size_list(val, key);
    } else if (key == "training.mu_epochs") {
      cfg.training.mu_epochs = parse_size(val, key);
    } else if (key == "training.pretrain_epochs") {
      cfg.training.pretrain_epochs = parse_size(val, key);
    } else if (key == "training.finetune_epochs") {
      cfg.training.finetune_epochs = parse_size(val, key);
    } else if (key == "training.cqr_epochs") {
      cfg.training.cqr_epochs = parse_size(val, key);
    } else if (key == "training.ald_epochs") {
      cfg.training.ald_epochs = parse_size(val, key);
    } else if (key == "training.plcp_epochs") {
      cfg.training.plcp_epochs = parse_size(val, key);
    } else if (key == "training.batch_size") {
      cfg.training.batch_size = parse_size(val, key);
    } else if (key == "training.lr") {
      cfg.training.lr = parse_double(val, key);
    } else if (key == "output.path") {
      cfg.out_path = val;
    } else if (key == "output.format") {
      cfg.format = val;
    } else if (key == "output.wall_time") {
      cfg.emit_wall_time = parse_bool(val, key);
    } else if (key == "output.model_dir") {
      cfg.model_dir = val;
    } else {
      throw std::invalid_argument("config: unknown key '" + key + "'");
    }
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  return parse_config(in);
}

namespace {

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

struct RepContext {
  const ExperimentConfig* cfg = nullptr;
  double tau = 0.9;
  Matrix x_train, y_train;
  Matrix x_cal, y_cal;
  Vec cal_scores;
  Matrix x_test, y_test;
  Matrix x_test_orig;  // unstandardized, for the synthetic oracle
  Regressor mu;
  // 40/40/20 partition shared across methods; missing when the calibration
  // set is too small (methods that need it fail individually).
  std::optional<CalibrationSplit> cal_parts;
  std::string cal_parts_error;
  // pre-sliced calibration parts (indices are relative to the cal block)
  Matrix x_cal1, x_cal2, x_cal12, x_cal3;
  Vec s_cal1, s_cal2, s_cal12, s_cal3;
  Matrix y_cal2;
  // Shared quantile pretraining (like mu): rcp and the cpcp family fine-tune
  // from the same jointly pretrained net, so within a repetition they differ
  // only by their fine-tuning objectives.
  std::optional<ThreeHeadQuantileNet> pretrained;
  std::string pretrained_error;

  const CalibrationSplit& require_parts() const {
    if (!cal_parts) throw std::invalid_argument(cal_parts_error);
    return *cal_parts;
  }
  const ThreeHeadQuantileNet& require_pretrained() const {
    if (!pretrained) throw std::invalid_argument(pretrained_error);
    return *pretrained;
  }
};

TrainConfig make_tc(const TrainingParams& t, const std::vector<std::size_t>& hidden,
                    std::size_t epochs) {
  TrainConfig tc;
  tc.hidden = hidden;
  tc.epochs = epochs;
  tc.batch_size = t.batch_size;
  tc.adam.lr = t.lr;
  return tc;
}

std::unique_ptr<ConformalPredictor> fit_method(const std::string& name, const RepContext& ctx,
                                               RngStream mstream) {
  const ExperimentConfig& cfg = *ctx.cfg;
  const TrainingParams& t = cfg.training;
  const double tau = ctx.tau;

  if (name == "split") {
    return split_cp_fit(ctx.mu, ctx.cal_scores, tau, name);
  }
  if (name == "rcp") {
    // Standard quantile regression on cal parts 1+2, conformalized on part 3.
    ctx.require_parts();
    QuantileNet qn = train_quantile_single(ctx.x_cal12, ctx.s_cal12, tau,
                                           make_tc(t, t.quantile_hidden, t.pretrain_epochs),
                                           mstream.child(1));
    return rcp_fit(ctx.mu, std::make_shared<SingleQuantileFn>(std::move(qn)), ctx.x_cal3,
                   ctx.s_cal3, tau, name);
  }
  if (name.rfind("cpcp", 0) == 0) {
    // The cpcp variants share the pretrained three-head net and differ only
    // in their fine-tuning objectives.
    ctx.require_parts();
    ThreeHeadQuantileNet net = ctx.require_pretrained();
    const bool clip = name == "cpcp-clip" || name == "cpcp-clip-mix";
    const bool mix = name == "cpcp-mix" || name == "cpcp-clip-mix";
    Vec weights = estimate_weights(net, ctx.x_cal2);
    if (clip) weights = clip_normalize_weights(weights, cfg.clip_m);
    const double lambda = mix ? cfg.lambda : 1.0;
    finetune_main_head(net, ctx.x_cal2, ctx.s_cal2, weights, tau, lambda,
                       make_tc(t, t.quantile_hidden, t.finetune_epochs), mstream.child(1));
    return rcp_fit(ctx.mu, std::make_shared<ThreeHeadQuantileFn>(std::move(net)), ctx.x_cal3,
                   ctx.s_cal3, tau, name);
  }
  if (name == "rcp-ald") {
    ctx.require_parts();
    AldModel m = ald_fit(ctx.x_cal12, ctx.s_cal12, tau,
                         make_tc(t, t.quantile_hidden, t.ald_epochs), mstream.child(1));
    return rcp_fit(ctx.mu, std::make_shared<AldQuantileFn>(std::move(m)), ctx.x_cal3,
                   ctx.s_cal3, tau, name);
  }
  if (name == "cqr") {
    return cqr_fit(ctx.x_train, ctx.y_train, ctx.x_cal, ctx.y_cal, tau,
                   make_tc(t, t.quantile_hidden, t.cqr_epochs), mstream.child(1), name);
  }
  if (name == "cqr-ald") {
    return cqr_ald_fit(ctx.x_train, ctx.y_train, ctx.x_cal, ctx.y_cal, tau,
                       make_tc(t, t.quantile_hidden, t.ald_epochs), mstream.child(1), name);
  }
  if (name == "plcp-20" || name == "plcp-50") {
    const std::size_t groups = name == "plcp-20" ? 20 : 50;
    PlcpModel pm = plcp_fit(ctx.x_cal, ctx.cal_scores, tau, groups,
                            make_tc(t, t.plcp_hidden, t.plcp_epochs), mstream.child(1));
    return std::make_unique<PlcpPredictor>(name, tau, ctx.mu, std::move(pm));
  }
  throw std::invalid_argument("unknown method '" + name + "'");
}

std::string rep_tag(const std::string& prefix, const std::string& dataset, std::size_t rep) {
  return prefix + ":" + dataset + ":" + std::to_string(rep);
}

}  // namespace

std::vector<ResultRow> run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();

  // CSV data is loaded once; synthetic data is regenerated per repetition.
  std::optional<Dataset> csv_data;
  if (!cfg.dataset.is_synthetic()) {
    csv_data = load_csv(cfg.dataset.csv_path, cfg.dataset.feature_cols,
                        cfg.dataset.label_cols);
  }
  const SyntheticSpec synth_spec =
      cfg.dataset.is_synthetic() ? synthetic_preset(cfg.dataset.preset) : SyntheticSpec{};

  std::vector<ResultRow> rows;
  for (std::size_t rep = 0; rep < cfg.reps; ++rep) {
    RngStream data_rng(cfg.master_seed,
                       stable_hash64(rep_tag("data", cfg.dataset.name, rep)));

    Dataset data;
    if (cfg.dataset.is_synthetic()) {
      RngStream gen = data_rng.child(0);
      data = generate_synthetic(synth_spec, cfg.dataset.n, gen);
    } else {
      data = *csv_data;
    }

    RngStream split_rng = data_rng.child(1);
    const DataSplit split = split_622(data.x.rows, split_rng);

    const Standardizer ft = Standardizer::fit(data.x, split.train);
    const Matrix x_std = ft.apply(data.x);

    RepContext ctx;
    ctx.cfg = &cfg;
    ctx.tau = cfg.tau;
    ctx.x_train = take_rows(x_std, split.train);
    ctx.y_train = take_rows(data.y, split.train);
    ctx.x_cal = take_rows(x_std, split.cal);
    ctx.y_cal = take_rows(data.y, split.cal);
    ctx.x_test = take_rows(x_std, split.test);
    ctx.y_test = take_rows(data.y, split.test);
    ctx.x_test_orig = take_rows(data.x, split.test);

    ctx.mu = train_regressor_mse(ctx.x_train, ctx.y_train,
                                 make_tc(cfg.training, cfg.training.mu_hidden,
                                         cfg.training.mu_epochs),
                                 data_rng.child(2));

    const Matrix cal_pred = ctx.mu.predict(ctx.x_cal);
    ctx.cal_scores.resize(ctx.x_cal.rows);
    for (std::size_t i = 0; i < ctx.x_cal.rows; ++i) {
      ctx.cal_scores[i] = linf_score(cal_pred.row_vec(i), ctx.y_cal.row_vec(i));
    }

    try {
      RngStream calsplit_rng = data_rng.child(3);
      ctx.cal_parts = split_calibration(ctx.x_cal.rows, calsplit_rng);
      std::vector<std::size_t> cal12 = ctx.cal_parts->part1;
      cal12.insert(cal12.end(), ctx.cal_parts->part2.begin(), ctx.cal_parts->part2.end());
      ctx.x_cal1 = take_rows(ctx.x_cal, ctx.cal_parts->part1);
      ctx.s_cal1 = take_vals(ctx.cal_scores, ctx.cal_parts->part1);
      ctx.x_cal2 = take_rows(ctx.x_cal, ctx.cal_parts->part2);
      ctx.s_cal2 = take_vals(ctx.cal_scores, ctx.cal_parts->part2);
      ctx.y_cal2 = take_rows(ctx.y_cal, ctx.cal_parts->part2);
      ctx.x_cal12 = take_rows(ctx.x_cal, cal12);
      ctx.s_cal12 = take_vals(ctx.cal_scores, cal12);
      ctx.x_cal3 = take_rows(ctx.x_cal, ctx.cal_parts->part3);
      ctx.s_cal3 = take_vals(ctx.cal_scores, ctx.cal_parts->part3);
    } catch (const std::exception& e) {
      ctx.cal_parts.reset();
      ctx.cal_parts_error = e.what();
    }

    // Shared three-head pretraining on cal part 1 (consumed by rcp and the
    // cpcp family); the stream is data-derived so the net is independent of
    // the method list.
    bool needs_pretrained = false;
    for (const auto& m : cfg.methods) {
      if (m.rfind("cpcp", 0) == 0) needs_pretrained = true;
    }
    if (needs_pretrained) {
      try {
        if (!ctx.cal_parts) throw std::invalid_argument(ctx.cal_parts_error);
        RngStream qrng(cfg.master_seed,
                       stable_hash64(rep_tag("qpretrain", cfg.dataset.name, rep)));
        RngStream init_rng = qrng.child(0);
        ThreeHeadQuantileNet net = make_three_head_net(
            ctx.x_cal.cols, cfg.training.quantile_hidden, cfg.delta, init_rng);
        train_quantile_joint(net, ctx.x_cal1, ctx.s_cal1, cfg.tau,
                             make_tc(cfg.training, cfg.training.quantile_hidden,
                                     cfg.training.pretrain_epochs),
                             qrng.child(1));
        ctx.pretrained = std::move(net);
      } catch (const std::exception& e) {
        ctx.pretrained.reset();
        ctx.pretrained_error = e.what();
      }
    }

    for (const auto& method : cfg.methods) {
      ResultRow row;
      row.dataset = cfg.dataset.name;
      row.method = method;
      row.seed = rep;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        RngStream mstream(cfg.master_seed,
                          stable_hash64(rep_tag("method:" + method, cfg.dataset.name, rep)));
        const std::unique_ptr<ConformalPredictor> pred = fit_method(method, ctx, mstream);

        std::vector<std::uint8_t> covered(ctx.x_test.rows);
        for (std::size_t i = 0; i < ctx.x_test.rows; ++i) {
          covered[i] = pred->covers(ctx.x_test.row_vec(i), ctx.y_test.row_vec(i)) ? 1 : 0;
        }
        row.marginal_coverage = marginal_coverage(covered);

        for (std::size_t k : cfg.metrics.msce_k) {
          // Metric streams are shared across methods: paired clusterings.
          RngStream mrng(cfg.master_seed,
                         stable_hash64(rep_tag("metric:msce" + std::to_string(k),
                                               cfg.dataset.name, rep)));
          const double v = msce_clustered(ctx.x_test, covered, cfg.tau, k, mrng);
          if (k == 10) row.msce_k10 = v;
          if (k == 50) row.msce_k50 = v;
        }
        if (cfg.metrics.wsc_directions > 0) {
          RngStream wrng(cfg.master_seed,
                         stable_hash64(rep_tag("metric:wsc", cfg.dataset.name, rep)));
          row.wsc = wsc(ctx.x_test, covered, cfg.metrics.wsc_mass_fraction,
                        cfg.metrics.wsc_directions, wrng);
        }
        if (cfg.metrics.oracle && data.oracle) {
          row.oracle_msce = oracle_msce(*pred, *data.oracle, ctx.x_test, ctx.x_test_orig);
        }
        {
          double total = 0.0;
          std::size_t count = 0;
          for (std::size_t i = 0; i < ctx.x_test.rows; ++i) {
            const double lv = log_volume_per_dim(pred->predict_box(ctx.x_test.row_vec(i)));
            if (std::isinf(lv) && lv < 0.0) continue;  // empty boxes are excluded
            total += lv;
            ++count;
          }
          if (count > 0) row.log_volume_per_dim = total / static_cast<double>(count);
        }

        if (!cfg.model_dir.empty()) {
          std::filesystem::create_directories(cfg.model_dir);
          const std::string path = cfg.model_dir + "/" + cfg.dataset.name + "_" + method +
                                   "_rep" + std::to_string(rep) + ".ckpt";
          save_predictor(*pred, ft, path);
        }
      } catch (const std::exception& e) {
        row.status = std::string("error: ") + e.what();
        std::replace(row.status.begin(), row.status.end(), ',', ';');
        std::replace(row.status.begin(), row.status.end(), '\n', ' ');
      }
      if (cfg.emit_wall_time) {
        const auto t1 = std::chrono::steady_clock::now();
        row.wall_time_seconds = std::chrono::duration<double>(t1 - t0).count();
      }
      rows.push_back(std::move(row));
    }
  }

  std::sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
    if (a.dataset != b.dataset) return a.dataset < b.dataset;
    if (a.method != b.method) return a.method < b.method;
    return a.seed < b.seed;
  });
  return rows;
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v) {
  return v ? fmt_double(*v) : std::string();
}

constexpr const char* kCsvHeader =
    "dataset,method,seed,marginal_coverage,msce_k10,msce_k50,oracle_msce,wsc,"
    "log_volume_per_dim,wall_time_seconds,status";

}  // namespace

void emit_results_csv(const std::vector<ResultRow>& rows, std::ostream& os) {
  os << kCsvHeader << "\n";
  for (const auto& r : rows) {
    os << r.dataset << ',' << r.method << ',' << r.seed << ',' << fmt_opt(r.marginal_coverage)
       << ',' << fmt_opt(r.msce_k10) << ',' << fmt_opt(r.msce_k50) << ','
       << fmt_opt(r.oracle_msce) << ',' << fmt_opt(r.wsc) << ','
       << fmt_opt(r.log_volume_per_dim) << ',' << fmt_opt(r.wall_time_seconds) << ','
       << r.status << "\n";
  }
}

namespace {

void emit_json_value(std::ostream& os, const std::optional<double>& v) {
  if (!v) {
    os << "null";
  } else if (std::isfinite(*v)) {
    os << fmt_double(*v);
  } else {
    os << '"' << fmt_double(*v) << '"';  // JSON has no literal for infinities
  }
}

}  // namespace

void emit_results_json(const std::vector<ResultRow>& rows, std::ostream& os) {
  os << "[\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    os << "  {\"dataset\": \"" << r.dataset << "\", \"method\": \"" << r.method
       << "\", \"seed\": " << r.seed << ", \"marginal_coverage\": ";
    emit_json_value(os, r.marginal_coverage);
    os << ", \"msce_k10\": ";
    emit_json_value(os, r.msce_k10);
    os << ", \"msce_k50\": ";
    emit_json_value(os, r.msce_k50);
    os << ", \"oracle_msce\": ";
    emit_json_value(os, r.oracle_msce);
    os << ", \"wsc\": ";
    emit_json_value(os, r.wsc);
    os << ", \"log_volume_per_dim\": ";
    emit_json_value(os, r.log_volume_per_dim);
    os << ", \"wall_time_seconds\": ";
    emit_json_value(os, r.wall_time_seconds);
    os << ", \"status\": \"" << r.status << "\"}";
    if (i + 1 < rows.size()) os << ',';
    os << "\n";
  }
  os << "]\n";
}

void emit_results(const std::vector<ResultRow>& rows, const std::string& path,
                  const std::string& format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("emit_results: cannot open " + path);
  if (format == "json") {
    emit_results_json(rows, out);
  } else {
    emit_results_csv(rows, out);
  }
  if (!out) throw std::runtime_error("emit_results: write failure on " + path);
}

std::vector<ResultRow> parse_results_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("results csv: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCsvHeader) throw std::runtime_error("results csv: unexpected header");

  std::vector<ResultRow> rows;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
      if (c == ',') {
        cells.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    cells.push_back(cur);
    if (cells.size() != 11) throw std::runtime_error("results csv: bad cell count");
    ResultRow r;
    r.dataset = cells[0];
    r.method = cells[1];
    r.seed = std::stoull(cells[2]);
    auto opt = [](const std::string& s) -> std::optional<double> {
      if (s.empty()) return std::nullopt;
      return std::stod(s);
    };
    r.marginal_coverage = opt(cells[3]);
    r.msce_k10 = opt(cells[4]);
    r.msce_k50 = opt(cells[5]);
    r.oracle_msce = opt(cells[6]);
    r.wsc = opt(cells[7]);
    r.log_volume_per_dim = opt(cells[8]);
    r.wall_time_seconds = opt(cells[9]);
    r.status = cells[10];
    rows.push_back(std::move(r));
  }
  return rows;
}

namespace {

struct Accumulator {
  double sum = 0.0, sumsq = 0.0;
  std::size_t n = 0;

  void add(const std::optional<double>& v) {
    if (!v || !std::isfinite(*v)) return;
    sum += *v;
    sumsq += *v * *v;
    ++n;
  }
  SummaryCell cell() const {
    SummaryCell c;
    c.count = n;
    if (n == 0) return c;
    c.mean = sum / static_cast<double>(n);
    if (n > 1) {
      const double var =
          (sumsq - sum * sum / static_cast<double>(n)) / static_cast<double>(n - 1);
      c.stddev = std::sqrt(std::max(0.0, var));
    }
    return c;
  }
};

}  // namespace

std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows) {
  if (rows.empty()) throw std::invalid_argument("summarize: no rows");
  std::map<std::pair<std::string, std::string>, std::vector<const ResultRow*>> groups;
  for (const auto& r : rows) groups[{r.dataset, r.method}].push_back(&r);

  std::vector<SummaryRow> out;
  for (const auto& [key, members] : groups) {
    SummaryRow s;
    s.dataset = key.first;
    s.method = key.second;
    Accumulator cov, k10, k50, omsce, w, vol, wall;
    for (const ResultRow* r : members) {
      ++s.rows;
      if (r->status != "ok") {
        ++s.errors;
        continue;
      }
      cov.add(r->marginal_coverage);
      k10.add(r->msce_k10);
      k50.add(r->msce_k50);
      omsce.add(r->oracle_msce);
      w.add(r->wsc);
      vol.add(r->log_volume_per_dim);
      wall.add(r->wall_time_seconds);
    }
    s.marginal_coverage = cov.cell();
    s.msce_k10 = k10.cell();
    s.msce_k50 = k50.cell();
    s.oracle_msce = omsce.cell();
    s.wsc = w.cell();
    s.log_volume_per_dim = vol.cell();
    s.wall_time_seconds = wall.cell();
    out.push_back(std::move(s));
  }
  return out;
}

std::string format_summary(const std::vector<SummaryRow>& summary) {
  auto cell = [](const SummaryCell& c) -> std::string {
    if (c.count == 0) return "-";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4g +/- %.2g", c.mean, c.stddev);
    return buf;
  };
  std::ostringstream os;
  os << "dataset | method | n | coverage | msce_k10 | msce_k50 | oracle_msce | wsc | "
        "log_vol\n";
  for (const auto& s : summary) {
    os << s.dataset << " | " << s.method << " | " << (s.rows - s.errors);
    if (s.errors > 0) os << " (" << s.errors << " failed)";
    os << " | " << cell(s.marginal_coverage) << " | " << cell(s.msce_k10) << " | "
       << cell(s.msce_k50) << " | " << cell(s.oracle_msce) << " | " << cell(s.wsc) << " | "
       << cell(s.log_volume_per_dim) << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Predictor checkpoints

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

void write_string(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  const std::uint64_t n = read_u64(is);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw std::runtime_error("checkpoint: truncated string");
  return s;
}

void write_f64(std::ostream& os, double v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(double));
}

double read_f64(std::istream& is) {
  double v = 0.0;
  is.read(reinterpret_cast<char*>(&v), sizeof(double));
  if (!is) throw std::runtime_error("checkpoint: truncated f64");
  return v;
}

void write_vec(std::ostream& os, const Vec& v) {
  write_u64(os, v.size());
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(8 * v.size()));
}

Vec read_vec(std::istream& is) {
  const std::uint64_t n = read_u64(is);
  Vec v(n);
  is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(8 * n));
  if (!is) throw std::runtime_error("checkpoint: truncated vector");
  return v;
}

void write_regressor(std::ostream& os, const Regressor& r) {
  write_mlp(os, r.net);
  write_vec(os, r.y_mean);
  write_vec(os, r.y_std);
}

Regressor read_regressor(std::istream& is) {
  Regressor r;
  r.net = read_mlp(is);
  r.y_mean = read_vec(is);
  r.y_std = read_vec(is);
  return r;
}

AldModel read_ald(std::istream& is) {
  AldModel m;
  m.backbone = read_mlp(is);
  m.q_head = read_dense(is);
  m.sigma_head = read_dense(is);
  m.sigma_floor = read_f64(is);
  m.score_mean = read_f64(is);
  m.score_std = read_f64(is);
  return m;
}

std::shared_ptr<const ScalarQuantileFn> read_quantile_fn(std::istream& is) {
  const std::string kind = read_string(is);
  if (kind == "single") {
    QuantileNet qn;
    qn.net = read_mlp(is);
    qn.score_mean = read_f64(is);
    qn.score_std = read_f64(is);
    return std::make_shared<SingleQuantileFn>(std::move(qn));
  }
  if (kind == "three_head") {
    ThreeHeadQuantileNet net;
    net.backbone = read_mlp(is);
    net.head_main = read_dense(is);
    net.head_low_gap = read_dense(is);
    net.head_high_gap = read_dense(is);
    net.delta = read_f64(is);
    net.score_mean = read_f64(is);
    net.score_std = read_f64(is);
    return std::make_shared<ThreeHeadQuantileFn>(std::move(net));
  }
  if (kind == "ald") {
    return std::make_shared<AldQuantileFn>(read_ald(is));
  }
  throw std::runtime_error("checkpoint: unknown quantile model kind '" + kind + "'");
}

std::shared_ptr<const IntervalModel> read_interval_model(std::istream& is) {
  const std::string kind = read_string(is);
  if (kind == "gap") {
    CqrModel m;
    m.backbone = read_mlp(is);
    m.lo_head = read_dense(is);
    m.gap_head = read_dense(is);
    const std::uint64_t d = read_u64(is);
    m.y_mean.assign(d, 0.0);
    m.y_std.assign(d, 0.0);
    is.read(reinterpret_cast<char*>(m.y_mean.data()), static_cast<std::streamsize>(8 * d));
    is.read(reinterpret_cast<char*>(m.y_std.data()), static_cast<std::streamsize>(8 * d));
    if (!is) throw std::runtime_error("checkpoint: truncated cqr payload");
    return std::make_shared<GapIntervalModel>(std::move(m));
  }
  if (kind == "ald_pair") {
    const std::uint64_t d = read_u64(is);
    std::vector<AldModel> lo, hi;
    for (std::uint64_t j = 0; j < d; ++j) lo.push_back(read_ald(is));
    for (std::uint64_t j = 0; j < d; ++j) hi.push_back(read_ald(is));
    return std::make_shared<AldIntervalModel>(std::move(lo), std::move(hi));
  }
  throw std::runtime_error("checkpoint: unknown interval model kind '" + kind + "'");
}

constexpr char kCkptMagic[8] = {'C', 'P', 'C', 'P', 'C', 'K', 'P', '1'};

}  // namespace

void save_predictor(const ConformalPredictor& pred, const Standardizer& feature_transform,
                    const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_predictor: cannot open " + path);
  os.write(kCkptMagic, 8);
  write_vec(os, feature_transform.mean);
  write_vec(os, feature_transform.std);

  std::string kind;
  if (dynamic_cast<const SplitCpPredictor*>(&pred)) kind = "split";
  else if (dynamic_cast<const RcpPredictor*>(&pred)) kind = "rcp";
  else if (dynamic_cast<const CqrPredictor*>(&pred)) kind = "cqr";
  else if (dynamic_cast<const PlcpPredictor*>(&pred)) kind = "plcp";
  else throw std::runtime_error("save_predictor: unsupported predictor type");

  write_string(os, kind);
  write_string(os, pred.method());
  write_f64(os, pred.tau());
  write_f64(os, pred.shift());
  write_u64(os, pred.infinite_threshold() ? 1 : 0);

  if (kind == "split") {
    const auto& p = static_cast<const SplitCpPredictor&>(pred);
    write_regressor(os, p.mu);
  } else if (kind == "rcp") {
    const auto& p = static_cast<const RcpPredictor&>(pred);
    write_regressor(os, p.mu);
    write_string(os, p.qfn->kind());
    p.qfn->save(os);
  } else if (kind == "cqr") {
    const auto& p = static_cast<const CqrPredictor&>(pred);
    write_string(os, p.model->kind());
    p.model->save(os);
  } else {
    const auto& p = static_cast<const PlcpPredictor&>(pred);
    write_regressor(os, p.mu);
    write_mlp(os, p.model.h_net);
    write_vec(os, p.model.thresholds);
  }
  if (!os) throw std::runtime_error("save_predictor: write failure on " + path);
}

PredictorCheckpoint load_predictor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_predictor: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCkptMagic, 8) != 0) {
    throw std::runtime_error("load_predictor: bad magic in " + path);
  }
  PredictorCheckpoint ckpt;
  ckpt.feature_transform.mean = read_vec(is);
  ckpt.feature_transform.std = read_vec(is);

  const std::string kind = read_string(is);
  const std::string method = read_string(is);
  const double tau = read_f64(is);
  const double shift = read_f64(is);
  const bool infinite = read_u64(is) != 0;

  if (kind == "split") {
    Regressor mu = read_regressor(is);
    ckpt.predictor =
        std::make_unique<SplitCpPredictor>(method, tau, std::move(mu), shift, infinite);
  } else if (kind == "rcp") {
    Regressor mu = read_regressor(is);
    auto qfn = read_quantile_fn(is);
    ckpt.predictor = std::make_unique<RcpPredictor>(method, tau, std::move(mu), std::move(qfn),
                                                    shift, infinite);
  } else if (kind == "cqr") {
    auto interval = read_interval_model(is);
    ckpt.predictor =
        std::make_unique<CqrPredictor>(method, tau, std::move(interval), shift, infinite);
  } else if (kind == "plcp") {
    Regressor mu = read_regressor(is);
    PlcpModel pm;
    pm.h_net = read_mlp(is);
    pm.thresholds = read_vec(is);
    ckpt.predictor =
        std::make_unique<PlcpPredictor>(method, tau, std::move(mu), std::move(pm));
  } else {
    throw std::runtime_error("load_predictor: unknown predictor kind '" + kind + "'");
  }
  return ckpt;
}

}  // namespace cpcp
