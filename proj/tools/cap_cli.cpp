// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: train, compress, eval, sweep, gradcheck, ablate.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cap/checkpoint.hpp"
#include "cap/compression.hpp"
#include "cap/config.hpp"
#include "cap/errors.hpp"
#include "cap/experiments.hpp"
#include "cap/gradcheck.hpp"
#include "cap/metrics.hpp"

namespace fs = std::filesystem;
using namespace cap;

namespace {

struct Common {
  std::string config;
  std::string plan;
  std::string checkpoint;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  std::string out_dir = ".";
};

std::string out_path(const Common& c, const std::string& name) {
  fs::create_directories(c.out_dir);
  return (fs::path(c.out_dir) / name).string();
}

// Config text: --config wins, then the text stored in the checkpoint.
std::string config_text(const Common& c, const Checkpoint* ckpt) {
  if (!c.config.empty()) return read_text_file(c.config);
  if (ckpt && !ckpt->config_text.empty()) return ckpt->config_text;
  throw ArgumentError("no --config given and the checkpoint carries none");
}

RunConfig run_config(const Common& c, const std::string& text, const std::string& source) {
  RunConfig rc = parse_run_config(text, source);
  if (c.seed) {
    rc.seed = *c.seed;
    rc.train.seed = *c.seed;
  }
  if (c.threads > 1) rc.threads = c.threads;
  return rc;
}

CompressionPlan plan_for(const Common& c) {
  CompressionPlan plan = c.plan.empty() ? CompressionPlan{} : load_plan(c.plan);
  if (c.seed) plan.seed = *c.seed;
  return plan;
}

int cmd_train(const Common& c) {
  const std::string text = read_text_file(c.config);
  const RunConfig rc = run_config(c, text, c.config);
  const DataSplits data = load_data(rc.data);
  const TrainOutcome out = train_baseline(rc, data);
  Checkpoint ckpt{out.network, out.state, rc.seed, text, ""};
  save_checkpoint(ckpt, out_path(c, "checkpoint.bin"));
  write_file(out_path(c, "metrics.csv"), metrics_csv(out.metrics));
  const double acc = out.metrics.empty() ? evaluate_accuracy(out.network, data.test) : out.metrics.back().test_accuracy;
  std::cout << "trained " << out.network.name << " for " << rc.train.epochs << " epochs, test accuracy "
            << fmt(acc, 4) << "\n";
  return 0;
}

int cmd_compress(const Common& c) {
  const Checkpoint base = load_checkpoint(c.checkpoint);
  const std::string text = config_text(c, &base);
  const RunConfig rc = run_config(c, text, c.config.empty() ? c.checkpoint : c.config);
  const CompressionPlan plan = plan_for(c);
  const DataSplits data = load_data(rc.data);
  const CompressionResult res = compress_network(base.network, plan, data.train, &data.test);
  Checkpoint out{res.network, {}, base.data_seed, text, plan_to_text(plan)};
  save_checkpoint(out, out_path(c, "compressed.bin"));
  write_file(out_path(c, "report.json"), to_json(res.report).dump(2) + "\n");
  const auto j = to_json(res.report);
  std::cout << "flops " << fmt(j["flops_pct"].get<double>(), 2) << "% of base, accuracy "
            << fmt(res.report.base_accuracy.value_or(0), 4) << " -> " << fmt(res.report.accuracy_no_ft.value_or(0), 4);
  if (res.report.accuracy_ft) std::cout << " (fine-tuned " << fmt(*res.report.accuracy_ft, 4) << ")";
  std::cout << "\n";
  return 0;
}

int cmd_eval(const Common& c) {
  const Checkpoint ckpt = load_checkpoint(c.checkpoint);
  const RunConfig rc = run_config(c, config_text(c, &ckpt), c.config.empty() ? c.checkpoint : c.config);
  const DataSplits data = load_data(rc.data);
  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  j["network"] = ckpt.network.name;
  j["test_accuracy"] = evaluate_accuracy(ckpt.network, data.test);
  j["train_accuracy"] = evaluate_accuracy(ckpt.network, data.train);
  j["cost"] = to_json(count_costs(ckpt.network, 1));
  write_file(out_path(c, "eval.json"), j.dump(2) + "\n");
  std::cout << "test accuracy " << fmt(j["test_accuracy"].get<double>(), 4) << ", flops "
            << j["cost"]["flops"].get<std::uint64_t>() << ", params " << j["cost"]["param_count"].get<std::uint64_t>()
            << "\n";
  return 0;
}

int cmd_sweep(const Common& c, const std::vector<int>& layers, const std::vector<double>& ratios) {
  const Checkpoint ckpt = load_checkpoint(c.checkpoint);
  const RunConfig rc = run_config(c, config_text(c, &ckpt), c.config.empty() ? c.checkpoint : c.config);
  const DataSplits data = load_data(rc.data);
  std::vector<int> ls = layers.empty() ? rc.sweep_layers : layers;
  if (ls.empty()) ls = compressible_layers(ckpt.network);
  const std::vector<double> rs = ratios.empty() ? rc.sweep_ratios : ratios;
  const auto rows = run_sweep(ckpt.network, plan_for(c), data, ls, rs, rc.threads);
  write_file(out_path(c, "sweep.csv"), sweep_csv(rows));
  std::cout << "swept " << ls.size() << " layers x " << rs.size() << " ratios\n";
  return 0;
}

int cmd_gradcheck(const Common& c, GradcheckOptions o) {
  if (c.seed) o.seed = *c.seed;
  const auto cases = run_gradcheck(o);
  const std::string table = gradcheck_csv(cases, o.tolerance);
  write_file(out_path(c, "gradcheck.csv"), table);
  std::cout << table;
  return all_passed(cases) ? 0 : 1;
}

int cmd_ablate(const Common& c) {
  const std::string text = read_text_file(c.config);
  const RunConfig rc = run_config(c, text, c.config);
  const DataSplits data = load_data(rc.data);
  CompressionPlan plan = plan_for(c);
  if (plan.layers.empty() && !plan.default_keep_ratio) plan.default_keep_ratio = 0.5;
  NetworkGraph baseline;
  if (!c.checkpoint.empty()) {
    baseline = load_checkpoint(c.checkpoint).network;
  } else {
    const TrainOutcome out = train_baseline(rc, data);
    baseline = out.network;
    save_checkpoint(Checkpoint{out.network, out.state, rc.seed, text, ""}, out_path(c, "baseline.bin"));
  }
  const AblationResult result = run_ablation(baseline, rc, plan, data);
  write_file(out_path(c, "ablation.csv"), ablation_csv(result));
  write_file(out_path(c, "ablation_runs.csv"), ablation_runs_csv(result));
  std::cout << ablation_csv(result);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Channel compression for small CNNs"};
  app.require_subcommand(1);
  Common common;
  std::vector<int> layers;
  std::vector<double> ratios;
  GradcheckOptions gc;
  std::uint64_t seed_value = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed_value, "Override the run seed")->each([&](const std::string&) {
      common.seed = seed_value;
    });
    sub->add_option("--threads", common.threads, "Worker threads for independent jobs")->check(CLI::PositiveNumber);
    sub->add_option("--out-dir", common.out_dir, "Directory for outputs");
  };

  auto* train = app.add_subcommand("train", "Train a baseline network");
  train->add_option("--config", common.config, "Run config")->required()->check(CLI::ExistingFile);
  add_common(train);

  auto* compress = app.add_subcommand("compress", "Compress a checkpoint with a plan");
  compress->add_option("--checkpoint", common.checkpoint)->required()->check(CLI::ExistingFile);
  compress->add_option("--plan", common.plan)->required()->check(CLI::ExistingFile);
  compress->add_option("--config", common.config, "Overrides the config stored in the checkpoint")
      ->check(CLI::ExistingFile);
  add_common(compress);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", common.checkpoint)->required()->check(CLI::ExistingFile);
  eval->add_option("--config", common.config)->check(CLI::ExistingFile);
  add_common(eval);

  auto* sweep = app.add_subcommand("sweep", "Single-layer compression sweep");
  sweep->add_option("--checkpoint", common.checkpoint)->required()->check(CLI::ExistingFile);
  sweep->add_option("--plan", common.plan, "Optimization settings")->check(CLI::ExistingFile);
  sweep->add_option("--config", common.config)->check(CLI::ExistingFile);
  sweep->add_option("--layers", layers, "Conv ids")->delimiter(',');
  sweep->add_option("--ratios", ratios, "Keep ratios in (0, 1]")->delimiter(',');
  add_common(sweep);

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient suites");
  grad->add_option("--instances", gc.instances)->check(CLI::PositiveNumber);
  grad->add_option("--max-rows", gc.max_rows)->check(CLI::Range(1, 64));
  grad->add_option("--max-cols", gc.max_cols)->check(CLI::Range(1, 64));
  grad->add_option("--tolerance", gc.tolerance);
  grad->add_flag("--corrupt", gc.include_corrupted, "Add a case with a deliberately wrong backward");
  add_common(grad);

  auto* ablate = app.add_subcommand("ablate", "Four-arm ablation over seeds");
  ablate->add_option("--config", common.config)->required()->check(CLI::ExistingFile);
  ablate->add_option("--plan", common.plan)->check(CLI::ExistingFile);
  ablate->add_option("--checkpoint", common.checkpoint, "Trained baseline; trained from the config if absent")
      ->check(CLI::ExistingFile);
  add_common(ablate);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(common);
    if (compress->parsed()) return cmd_compress(common);
    if (eval->parsed()) return cmd_eval(common);
    if (sweep->parsed()) return cmd_sweep(common, layers, ratios);
    if (grad->parsed()) return cmd_gradcheck(common, gc);
    if (ablate->parsed()) return cmd_ablate(common);
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 3;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
