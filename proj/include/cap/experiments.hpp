// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "cap/compression.hpp"
#include "cap/data.hpp"
#include "cap/network.hpp"
#include "cap/plan.hpp"
#include "cap/training.hpp"

namespace cap {

struct ModelConfig {
  std::string arch = "vgg";  // vgg | resnet
  double width = 1.0;
  std::string depth = "18-lite";
  std::size_t convs_per_block = 2;
};

struct RunConfig {
  ModelConfig model;
  DataConfig data;
  LoopConfig train;
  std::uint64_t seed = 1;
  std::vector<int> sweep_layers;
  std::vector<double> sweep_ratios{1.0, 0.75, 0.5, 0.25, 0.125};
  std::vector<std::uint64_t> ablate_seeds{1, 2, 3};
  std::size_t threads = 1;
};

RunConfig parse_run_config(std::string_view text, const std::string& source = "<config>");
RunConfig load_run_config(const std::string& path);

NetworkGraph build_model(const ModelConfig& model, std::size_t num_classes, std::uint64_t seed);

struct TrainOutcome {
  NetworkGraph network;
  SgdState state;
  std::vector<EpochMetrics> metrics;
};

// Builds the configured model from `seed` and trains it on the splits.
TrainOutcome train_baseline(const RunConfig& config, const DataSplits& data);

// Runs job(i) for i in [0, count) on up to `threads` workers. Results must be
// written to per-index slots; the first exception is rethrown.
void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& job);

struct SweepRow {
  int layer = 0;
  double keep_ratio = 1.0;
  std::size_t rank = 0;
  double recon_error = 0.0;          // after projection and folding
  double recon_error_relaxed = 0.0;  // after kernel relaxation
  double accuracy = 0.0;             // held-out, after relaxation
};

inline constexpr const char* kSweepCsvHeader = "layer,keep_ratio,rank,recon_error,recon_error_relaxed,accuracy";

// Compresses each listed layer alone at each keep ratio, using `base_plan`
// for the optimization settings. Rows are sorted by (layer, keep_ratio).
std::vector<SweepRow> run_sweep(const NetworkGraph& net, const CompressionPlan& base_plan, const DataSplits& data,
                                const std::vector<int>& layers, const std::vector<double>& ratios,
                                std::size_t threads);
std::string sweep_csv(const std::vector<SweepRow>& rows);

inline constexpr const char* kArmScratch = "compressed_from_scratch";
inline constexpr const char* kArmProjectionOnly = "projection_only";
inline constexpr const char* kArmRandomRelax = "random_projection_relax";
inline constexpr const char* kArmProjectionRelax = "projection_relax";

struct AblationRun {
  std::string arm;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double flops_pct = 100.0;
};

struct AblationSummary {
  std::string arm;
  std::size_t seeds = 0;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
};

struct AblationResult {
  double baseline_accuracy = 0.0;
  std::vector<AblationRun> runs;
  std::vector<AblationSummary> summary;  // arms in fixed order
};

inline constexpr const char* kAblationCsvHeader = "arm,seeds,mean_accuracy,std_accuracy";
inline constexpr const char* kAblationRunsCsvHeader = "arm,seed,accuracy,flops_pct";

// The four compression arms over config.ablate_seeds. `baseline` is the
// trained uncompressed network; the scratch arm retrains the compressed shape
// with config.train.
AblationResult run_ablation(const NetworkGraph& baseline, const RunConfig& config, const CompressionPlan& plan,
                            const DataSplits& data);
std::string ablation_csv(const AblationResult& result);
std::string ablation_runs_csv(const AblationResult& result);

double spearman(const std::vector<double>& a, const std::vector<double>& b);
double mean(const std::vector<double>& v);
double sample_stddev(const std::vector<double>& v);

}  // namespace cap
