// Command line front end for the data assimilation laboratory: nature runs,
// training-pair generation, flow-matching training, cyclic DA benchmarks,
// sweeps and ablations. All pipelines are reproducible from (config, seed);
// every command writes a manifest next to its outputs.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "pnpda/harness.hpp"
#include "pnpda/io.hpp"

namespace fs = std::filesystem;
using namespace pnpda;

namespace {

struct CommonOpts {
  std::string config_path;
  std::optional<std::uint64_t> seed;

  ExperimentConfig load() const {
    ExperimentConfig cfg = load_config(config_path);
    if (seed) cfg.seed = *seed;
    return cfg;
  }
};

std::vector<double> parse_values(const std::vector<std::string>& items) {
  std::vector<double> out;
  for (const auto& s : items) out.push_back(std::stod(s));
  return out;
}

NatureRun nature_for(const ExperimentConfig& cfg, const std::string& nature_dir) {
  if (!nature_dir.empty()) {
    NatureRun nr{load_trajectory(nature_dir + "/truth.bin"),
                 load_observations(nature_dir + "/observations.bin")};
    return nr;
  }
  return generate_nature_run(cfg);
}

int cmd_generate(const CommonOpts& common, const std::string& out_dir) {
  ExperimentConfig cfg = common.load();
  fs::create_directories(out_dir);
  NatureRun nr = generate_nature_run(cfg);

  const std::string truth_path = out_dir + "/truth.bin";
  const std::string obs_path = out_dir + "/observations.bin";
  save_trajectory(truth_path, nr.truth, {cfg.testbed, cfg.dyn.dt, cfg.seed});
  save_observations(obs_path, nr.pairgen_obs, cfg.testbed, cfg.seed);
  write_manifest(out_dir + "/manifest.json", "generate", cfg,
                 {truth_path, obs_path});
  std::cout << "wrote " << truth_path << " (" << nr.truth.size() << " states, dim "
            << nr.truth.dim() << ")\n"
            << "wrote " << obs_path << " (" << nr.pairgen_obs.size()
            << " observations)\n";
  return 0;
}

int cmd_pairs(const CommonOpts& common, const std::string& nature_dir,
              const std::string& out_path) {
  ExperimentConfig cfg = common.load();
  NatureRun nr = nature_for(cfg, nature_dir);
  PairDataset data = generate_training_pairs(cfg, nr);
  save_dataset(out_path, data);
  write_manifest(out_path + ".manifest.json", "pairs", cfg, {out_path});
  std::cout << "wrote " << out_path << " (" << data.size() << " pairs, dim "
            << data.dim() << ")\n";
  return 0;
}

int cmd_train(const CommonOpts& common, const std::string& dataset_path,
              const std::string& out_path) {
  ExperimentConfig cfg = common.load();
  PairDataset data = load_dataset(dataset_path);
  std::vector<EpochRecord> history;
  Checkpoint ckpt = train_checkpoint(cfg, data, &history);
  save_checkpoint(out_path, ckpt);
  write_history_csv(out_path + ".history.csv", history);
  write_manifest(out_path + ".manifest.json", "train", cfg,
                 {out_path, out_path + ".history.csv"});
  double best_val = std::numeric_limits<double>::infinity();
  for (const auto& h : history) best_val = std::min(best_val, h.val_loss);
  std::cout << "wrote " << out_path << " after " << history.size()
            << " epochs (best val loss " << best_val << ")\n";
  return 0;
}

int cmd_assimilate(const CommonOpts& common, const std::string& method_name,
                   const std::string& checkpoint_path,
                   const std::string& nature_dir, const std::string& out_path,
                   int runs_override, int cycles_override, bool full_scale,
                   int n_threads) {
  ExperimentConfig cfg = common.load();
  if (full_scale) {
    cfg.eval.n_runs = 50;
    cfg.eval.n_cycles = 1 << 30;  // clamped to the available truth window
  }
  if (runs_override > 0) cfg.eval.n_runs = runs_override;
  if (cycles_override > 0) cfg.eval.n_cycles = cycles_override;

  Method method = method_from_string(method_name);
  std::optional<Checkpoint> ckpt;
  if (method == Method::pnpda) {
    if (checkpoint_path.empty()) {
      std::cerr << "pnpda needs --checkpoint\n";
      return 1;
    }
    ckpt = load_checkpoint(checkpoint_path);
  }

  NatureRun nr = nature_for(cfg, nature_dir);

  // A plain benchmark is a degenerate one-value sweep over the configured
  // noise level; this shares the parallel runner and the pairing of run
  // streams across methods.
  ResultTable table =
      sweep(cfg, nr.truth, SweepAxis::obs_noise, {cfg.eval.obs_sigma},
            {method}, cfg.eval.n_runs, ckpt ? &*ckpt : nullptr, n_threads);

  write_records_csv(out_path, table);
  const std::string agg_path = out_path + ".agg.csv";
  write_aggregate_csv(agg_path, aggregate(table));
  write_manifest(out_path + ".manifest.json", "assimilate", cfg,
                 {out_path, agg_path});

  for (const auto& row : aggregate(table)) {
    if (row.component != -1) continue;
    std::cout << to_string(row.method) << ": rmse " << row.rmse_mean << " +- "
              << row.rmse_std << " over " << row.n_success << " runs ("
              << row.n_failed << " failed)\n";
  }
  return 0;
}

int cmd_sweep(const CommonOpts& common, const std::string& axis_name,
              const std::vector<std::string>& value_items,
              const std::vector<std::string>& method_names,
              const std::string& checkpoint_path, const std::string& nature_dir,
              const std::string& out_path, int n_runs, bool full_scale,
              int n_threads) {
  ExperimentConfig cfg = common.load();
  if (full_scale) cfg.eval.n_runs = 50;
  if (n_runs > 0) cfg.eval.n_runs = n_runs;

  SweepAxis axis = sweep_axis_from_string(axis_name);
  std::vector<double> values = parse_values(value_items);
  std::vector<Method> methods;
  for (const auto& name : method_names) methods.push_back(method_from_string(name));

  std::optional<Checkpoint> ckpt;
  for (Method m : methods) {
    if (m == Method::pnpda) {
      if (checkpoint_path.empty()) {
        std::cerr << "pnpda needs --checkpoint\n";
        return 1;
      }
      ckpt = load_checkpoint(checkpoint_path);
    }
  }

  NatureRun nr = nature_for(cfg, nature_dir);
  ResultTable table = sweep(cfg, nr.truth, axis, values, methods,
                            cfg.eval.n_runs, ckpt ? &*ckpt : nullptr, n_threads);

  write_records_csv(out_path, table);
  const std::string agg_path = out_path + ".agg.csv";
  write_aggregate_csv(agg_path, aggregate(table));
  write_manifest(out_path + ".manifest.json", "sweep", cfg, {out_path, agg_path});
  std::cout << "wrote " << out_path << " and " << agg_path << "\n";
  return 0;
}

int cmd_ablate(const CommonOpts& common, const std::string& axis_name,
               const std::vector<std::string>& value_items,
               const std::string& checkpoint_path, const std::string& nature_dir,
               const std::string& out_path, int n_runs, int n_threads) {
  ExperimentConfig cfg = common.load();
  if (n_runs > 0) cfg.eval.n_runs = n_runs;

  AblateAxis axis = ablate_axis_from_string(axis_name);
  std::vector<double> values = parse_values(value_items);
  if (checkpoint_path.empty()) {
    std::cerr << "ablate needs --checkpoint\n";
    return 1;
  }
  Checkpoint ckpt = load_checkpoint(checkpoint_path);

  NatureRun nr = nature_for(cfg, nature_dir);
  ResultTable table =
      ablate(cfg, nr.truth, axis, values, cfg.eval.n_runs, ckpt, n_threads);

  write_records_csv(out_path, table);
  const std::string agg_path = out_path + ".agg.csv";
  write_aggregate_csv(agg_path, aggregate(table));
  write_manifest(out_path + ".manifest.json", "ablate", cfg, {out_path, agg_path});
  std::cout << "wrote " << out_path << " and " << agg_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pnpda: plug-and-play data assimilation laboratory"};
  app.require_subcommand(1);

  CommonOpts common;
  std::string out;
  std::string nature_dir;
  std::string dataset_path;
  std::string checkpoint_path;
  std::string method_name;
  std::string system_name;
  std::string axis_name;
  std::vector<std::string> values;
  std::vector<std::string> methods;
  int n_runs = 0;
  int n_cycles = 0;
  int n_threads = 0;
  bool full_scale = false;
  std::uint64_t seed_value = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "experiment config (JSON) or manifest")
        ->required();
    sub->add_option("--seed", seed_value, "override the experiment base seed")
        ->each([&](const std::string&) { common.seed = seed_value; });
    sub->add_option("--threads", n_threads, "worker threads (0 = hardware)");
  };

  CLI::App* generate = app.add_subcommand("generate", "nature run + observations");
  generate->add_option("--system", system_name, "testbed id (must match config)");
  add_common(generate);
  generate->add_option("--out", out, "output directory")->required();

  CLI::App* pairs = app.add_subcommand("pairs", "cyclic DA training pairs");
  pairs->add_option("--system", system_name, "testbed id (must match config)");
  add_common(pairs);
  pairs->add_option("--nature", nature_dir, "reuse generate output directory");
  pairs->add_option("--out", out, "output dataset file")->required();

  CLI::App* train_cmd = app.add_subcommand("train", "train the velocity network");
  train_cmd->add_option("--dataset", dataset_path, "pair dataset")->required();
  add_common(train_cmd);
  train_cmd->add_option("--out", out, "output checkpoint file")->required();

  CLI::App* assim = app.add_subcommand("assimilate", "cyclic DA benchmark");
  assim->add_option("--method", method_name, "freerun | 3dvar | pnpda")->required();
  assim->add_option("--checkpoint", checkpoint_path, "trained checkpoint (pnpda)");
  add_common(assim);
  assim->add_option("--nature", nature_dir, "reuse generate output directory");
  assim->add_option("--runs", n_runs, "override eval.n_runs");
  assim->add_option("--cycles", n_cycles, "override eval.n_cycles");
  assim->add_flag("--full", full_scale, "paper-scale preset: 50 runs, full record");
  assim->add_option("--out", out, "output records CSV")->required();

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "observation sparsity/noise sweep");
  sweep_cmd->add_option("--axis", axis_name, "obs_fraction | obs_noise")->required();
  sweep_cmd->add_option("--values", values, "axis values")->required()->delimiter(',');
  sweep_cmd->add_option("--methods", methods, "methods to compare")
      ->required()
      ->delimiter(',');
  sweep_cmd->add_option("--checkpoint", checkpoint_path, "trained checkpoint (pnpda)");
  add_common(sweep_cmd);
  sweep_cmd->add_option("--nature", nature_dir, "reuse generate output directory");
  sweep_cmd->add_option("--runs", n_runs, "runs per cell");
  sweep_cmd->add_flag("--full", full_scale, "paper-scale preset: 50 runs");
  sweep_cmd->add_option("--out", out, "output records CSV")->required();

  CLI::App* ablate_cmd = app.add_subcommand("ablate", "PnP-DA hyperparameter study");
  ablate_cmd->add_option("--axis", axis_name, "iters | alpha")->required();
  ablate_cmd->add_option("--values", values, "axis values")->required()->delimiter(',');
  ablate_cmd->add_option("--checkpoint", checkpoint_path, "trained checkpoint")
      ->required();
  add_common(ablate_cmd);
  ablate_cmd->add_option("--nature", nature_dir, "reuse generate output directory");
  ablate_cmd->add_option("--runs", n_runs, "runs per value");
  ablate_cmd->add_option("--out", out, "output records CSV")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (!system_name.empty()) {
      ExperimentConfig cfg = common.load();
      if (cfg.testbed != system_name) {
        std::cerr << "error: --system " << system_name
                  << " does not match config testbed " << cfg.testbed << "\n";
        return 1;
      }
    }
    if (generate->parsed()) return cmd_generate(common, out);
    if (pairs->parsed()) return cmd_pairs(common, nature_dir, out);
    if (train_cmd->parsed()) return cmd_train(common, dataset_path, out);
    if (assim->parsed()) {
      return cmd_assimilate(common, method_name, checkpoint_path, nature_dir,
                            out, n_runs, n_cycles, full_scale, n_threads);
    }
    if (sweep_cmd->parsed()) {
      return cmd_sweep(common, axis_name, values, methods, checkpoint_path,
                       nature_dir, out, n_runs, full_scale, n_threads);
    }
    if (ablate_cmd->parsed()) {
      return cmd_ablate(common, axis_name, values, checkpoint_path, nature_dir,
                        out, n_runs, n_threads);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
