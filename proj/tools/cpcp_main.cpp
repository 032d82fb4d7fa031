#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cpcp/experiment.hpp"

namespace {

int cmd_run(const std::string& config_path, const std::string& out_override,
            const std::string& format_override, long long seed_override,
            long long reps_override, const std::string& methods_override,
            const std::string& model_dir_override, bool quiet) {
  cpcp::ExperimentConfig cfg = cpcp::load_config(config_path);
  if (!out_override.empty()) cfg.out_path = out_override;
  if (!format_override.empty()) cfg.format = format_override;
  if (seed_override >= 0) cfg.master_seed = static_cast<std::uint64_t>(seed_override);
  if (reps_override >= 0) cfg.reps = static_cast<std::size_t>(reps_override);
  if (!methods_override.empty()) {
    cfg.methods.clear();
    std::stringstream ss(methods_override);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (!tok.empty()) cfg.methods.push_back(tok);
    }
  }
  if (!model_dir_override.empty()) cfg.model_dir = model_dir_override;
  cfg.validate();

  const std::vector<cpcp::ResultRow> rows = cpcp::run_experiment(cfg);
  cpcp::emit_results(rows, cfg.out_path, cfg.format);
  if (!quiet) {
    std::cout << "wrote " << rows.size() << " rows to " << cfg.out_path << "\n\n"
              << cpcp::format_summary(cpcp::summarize(rows));
  }
  return 0;
}

int cmd_summarize(const std::string& in_path) {
  std::ifstream in(in_path);
  if (!in) throw std::runtime_error("cannot open " + in_path);
  const auto rows = cpcp::parse_results_csv(in);
  std::cout << cpcp::format_summary(cpcp::summarize(rows));
  return 0;
}

int cmd_predict(const std::string& model_path, const std::string& x_csv) {
  const cpcp::PredictorCheckpoint ckpt = cpcp::load_predictor(model_path);
  cpcp::Vec x;
  std::stringstream ss(x_csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) x.push_back(std::stod(tok));
  }
  if (x.size() != ckpt.feature_transform.mean.size()) {
    throw std::runtime_error("expected " + std::to_string(ckpt.feature_transform.mean.size()) +
                             " features, got " + std::to_string(x.size()));
  }
  const cpcp::Vec xs = ckpt.feature_transform.apply(x);
  const cpcp::PredictionBox box = ckpt.predictor->predict_box(xs);
  std::cout << "method: " << ckpt.predictor->method() << "  tau: " << ckpt.predictor->tau()
            << "\n";
  for (std::size_t j = 0; j < box.lower.size(); ++j) {
    std::printf("dim %zu: [%.17g, %.17g]\n", j, box.lower[j], box.upper[j]);
  }
  if (box.empty()) std::cout << "(empty prediction set)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conformal prediction benchmark with density-weighted pinball fine-tuning"};
  app.require_subcommand(1);

  std::string config_path, out_override, format_override, methods_override, model_dir;
  long long seed_override = -1, reps_override = -1;
  bool quiet = false;
  auto* run = app.add_subcommand("run", "Run a config-driven Monte-Carlo benchmark");
  run->add_option("--config", config_path, "Experiment config file")->required();
  run->add_option("--out", out_override, "Output path (overrides config)");
  run->add_option("--format", format_override, "csv or json (overrides config)");
  run->add_option("--seed", seed_override, "Master seed (overrides config)");
  run->add_option("--reps", reps_override, "Repetitions (overrides config)");
  run->add_option("--methods", methods_override, "Comma-separated methods (overrides config)");
  run->add_option("--save-models", model_dir, "Directory for predictor checkpoints");
  run->add_flag("--quiet", quiet, "Suppress the summary printout");

  std::string in_path;
  auto* summ = app.add_subcommand("summarize", "Aggregate a results CSV to mean +/- std");
  summ->add_option("--in", in_path, "Results CSV path")->required();

  std::string model_path, x_csv;
  auto* pred = app.add_subcommand("predict", "Print the prediction box for one input");
  pred->add_option("--model", model_path, "Predictor checkpoint")->required();
  pred->add_option("--x", x_csv, "Comma-separated raw feature values")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      return cmd_run(config_path, out_override, format_override, seed_override, reps_override,
                     methods_override, model_dir, quiet);
    }
    if (summ->parsed()) return cmd_summarize(in_path);
    if (pred->parsed()) return cmd_predict(model_path, x_csv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
