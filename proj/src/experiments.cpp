// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#include "cap/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "cap/config.hpp"
#include "cap/errors.hpp"

namespace cap {

namespace {

const std::vector<std::string> kRunKeys = {
    "model.arch",      "model.width",      "model.depth",       "model.convs_per_block", "data.kind",
    "data.path",       "data.seed",        "data.train_size",   "data.test_size",        "data.num_classes",
    "data.noise",      "data.mean",        "data.std",          "train.epochs",          "train.batch_size",
    "train.lr",        "train.momentum",   "train.weight_decay", "train.schedule",       "seed",
    "sweep.layers",    "sweep.ratios",     "ablate.seeds",      "threads"};

std::array<double, 3> triple(const KeyValueFile& kv, const char* key, std::array<double, 3> fallback) {
  const auto* e = kv.find(key);
  if (!e) return fallback;
  const auto v = kv.get_doubles(key, {});
  if (v.size() != 3) kv.fail(*e, "expected three comma-separated numbers");
  return {v[0], v[1], v[2]};
}

}  // namespace

RunConfig parse_run_config(std::string_view text, const std::string& source) {
  const KeyValueFile kv = KeyValueFile::parse(text, source);
  kv.require_known(kRunKeys);
  RunConfig c;
  c.model.arch = kv.get_string("model.arch", c.model.arch);
  if (c.model.arch != "vgg" && c.model.arch != "resnet") kv.fail(*kv.find("model.arch"), "expected vgg or resnet");
  c.model.width = kv.get_double("model.width", c.model.width);
  c.model.depth = kv.get_string("model.depth", c.model.depth);
  c.model.convs_per_block = kv.get_size("model.convs_per_block", c.model.convs_per_block);

  c.data.kind = kv.get_string("data.kind", c.data.kind);
  if (c.data.kind != "synthetic_blobs" && c.data.kind != "cifar10_binary") {
    kv.fail(*kv.find("data.kind"), "expected synthetic_blobs or cifar10_binary");
  }
  c.data.path = kv.get_string("data.path", c.data.path);
  c.data.seed = static_cast<std::uint64_t>(kv.get_size("data.seed", c.data.seed));
  c.data.train_size = kv.get_size("data.train_size", c.data.train_size);
  c.data.test_size = kv.get_size("data.test_size", c.data.test_size);
  c.data.num_classes = kv.get_size("data.num_classes", c.data.kind == "cifar10_binary" ? 10 : c.data.num_classes);
  c.data.noise = kv.get_double("data.noise", c.data.noise);
  c.data.mean = triple(kv, "data.mean", c.data.mean);
  c.data.stddev = triple(kv, "data.std", c.data.stddev);

  c.seed = static_cast<std::uint64_t>(kv.get_size("seed", c.seed));
  c.train.epochs = kv.get_size("train.epochs", 10);
  c.train.batch_size = kv.get_size("train.batch_size", 32);
  if (c.train.batch_size == 0) kv.fail(*kv.find("train.batch_size"), "must be positive");
  c.train.lr = kv.get_double("train.lr", 0.02);
  c.train.momentum = kv.get_double("train.momentum", 0.9);
  c.train.weight_decay = kv.get_double("train.weight_decay", 5e-4);
  const std::string schedule = kv.get_string("train.schedule", "cosine");
  if (schedule != "cosine" && schedule != "constant") kv.fail(*kv.find("train.schedule"), "expected cosine or constant");
  c.train.cosine = schedule == "cosine";
  c.train.seed = c.seed;

  for (auto v : kv.get_ints("sweep.layers", {})) c.sweep_layers.push_back(static_cast<int>(v));
  c.sweep_ratios = kv.get_doubles("sweep.ratios", c.sweep_ratios);
  for (double r : c.sweep_ratios) {
    if (!(r > 0.0 && r <= 1.0)) kv.fail(*kv.find("sweep.ratios"), "ratios must lie in (0, 1]");
  }
  if (kv.contains("ablate.seeds")) {
    c.ablate_seeds.clear();
    for (auto v : kv.get_ints("ablate.seeds", {})) c.ablate_seeds.push_back(static_cast<std::uint64_t>(v));
  }
  c.threads = std::max<std::size_t>(1, kv.get_size("threads", c.threads));
  return c;
}

RunConfig load_run_config(const std::string& path) { return parse_run_config(read_text_file(path), path); }

NetworkGraph build_model(const ModelConfig& model, std::size_t num_classes, std::uint64_t seed) {
  if (model.arch == "vgg") return build_small_vgg(model.width, num_classes, seed);
  if (model.arch == "resnet") return build_small_resnet(model.depth, num_classes, seed, model.convs_per_block);
  throw ArgumentError("unknown architecture '" + model.arch + "'");
}

TrainOutcome train_baseline(const RunConfig& config, const DataSplits& data) {
  TrainOutcome out{build_model(config.model, data.train.num_classes, config.seed), {}, {}};
  LoopConfig loop = config.train;
  loop.seed = config.seed;
  out.metrics = train_classifier(out.network, data.train, data.test, loop, out.state);
  return out;
}

void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& job) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

std::vector<SweepRow> run_sweep(const NetworkGraph& net, const CompressionPlan& base_plan, const DataSplits& data,
                                const std::vector<int>& layers, const std::vector<double>& ratios,
                                std::size_t threads) {
  for (int id : layers) {
    if (id < 0 || static_cast<std::size_t>(id) >= conv_count(net) || !is_compressible(net, id)) {
      throw ValidationError("sweep layer " + std::to_string(id) + " is protected or missing");
    }
  }
  for (double r : ratios) {
    if (!(r > 0.0 && r <= 1.0)) throw ValidationError("sweep ratio " + std::to_string(r) + " outside (0, 1]");
  }
  std::vector<int> sorted_layers = layers;
  std::sort(sorted_layers.begin(), sorted_layers.end());
  sorted_layers.erase(std::unique(sorted_layers.begin(), sorted_layers.end()), sorted_layers.end());
  std::vector<double> sorted_ratios = ratios;
  std::sort(sorted_ratios.begin(), sorted_ratios.end());
  sorted_ratios.erase(std::unique(sorted_ratios.begin(), sorted_ratios.end()), sorted_ratios.end());

  std::vector<SweepRow> rows;
  for (int id : sorted_layers)
    for (double r : sorted_ratios) rows.push_back(SweepRow{id, r, rank_for_ratio(conv_at(net, id).c_out, r), 0, 0, 0});

  const TeacherSnapshot teacher(net);
  parallel_for(rows.size(), threads, [&](std::size_t i) {
    SweepRow& row = rows[i];
    CompressionPlan plan = base_plan;
    plan.mode = CompressionMode::kSingleLayer;
    plan.default_keep_ratio.reset();
    plan.finetune_epochs = 0;
    plan.layers = {LayerTarget{row.layer, row.rank, std::nullopt}};
    const CompressionResult res = compress_network(net, plan, data.train, &data.test);
    const int point = supervision_point(net, row.layer, {row.layer});
    row.recon_error = res.report.layers.front().recon_error;
    row.recon_error_relaxed = reconstruction_error(res.network, teacher, data.test, point, plan.normalize_recon);
    row.accuracy = *res.report.accuracy_no_ft;
  });
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << kSweepCsvHeader << "\n";
  char buf[32];
  for (const auto& r : rows) {
    out << r.layer << "," << fmt(r.keep_ratio, 4) << "," << r.rank;
    std::snprintf(buf, sizeof(buf), ",%.6e", r.recon_error);
    out << buf;
    std::snprintf(buf, sizeof(buf), ",%.6e", r.recon_error_relaxed);
    out << buf << "," << fmt(r.accuracy, 6) << "\n";
  }
  return out.str();
}

AblationResult run_ablation(const NetworkGraph& baseline, const RunConfig& config, const CompressionPlan& plan,
                            const DataSplits& data) {
  const std::vector<std::string> arms = {kArmScratch, kArmProjectionOnly, kArmRandomRelax, kArmProjectionRelax};
  const std::map<int, std::size_t> ranks = resolve_ranks(baseline, plan);
  AblationResult result;
  result.baseline_accuracy = evaluate_accuracy(baseline, data.test);
  const std::uint64_t base_flops = count_costs(baseline, 1).flops;
  for (std::uint64_t seed : config.ablate_seeds)
    for (const auto& arm : arms) result.runs.push_back(AblationRun{arm, seed, 0.0, 100.0});

  parallel_for(result.runs.size(), config.threads, [&](std::size_t i) {
    AblationRun& run = result.runs[i];
    NetworkGraph model;
    if (run.arm == kArmScratch) {
      model = apply_plan_shapes(baseline, ranks);
      reinitialize(model, run.seed);
      LoopConfig loop = config.train;
      loop.seed = run.seed;
      SgdState state;
      train_classifier(model, data.train, data.test, loop, state);
    } else {
      CompressionPlan p = plan;
      p.seed = run.seed;
      p.finetune_epochs = 0;
      if (run.arm == kArmProjectionOnly) p.relaxation_epochs = 0;
      if (run.arm == kArmRandomRelax) {
        p.init = ProxyInit::kRandom;
        p.projection_steps = 0;
      }
      model = compress_network(baseline, p, data.train, nullptr).network;
    }
    run.accuracy = evaluate_accuracy(model, data.test);
    run.flops_pct = percent_of(count_costs(model, 1).flops, base_flops);
  });

  for (const auto& arm : arms) {
    std::vector<double> acc;
    for (const auto& r : result.runs)
      if (r.arm == arm) acc.push_back(r.accuracy);
    result.summary.push_back(AblationSummary{arm, acc.size(), mean(acc), sample_stddev(acc)});
  }
  return result;
}

std::string ablation_csv(const AblationResult& result) {
  std::ostringstream out;
  out << kAblationCsvHeader << "\n";
  out << "uncompressed,1," << fmt(result.baseline_accuracy, 6) << "," << fmt(0.0, 6) << "\n";
  for (const auto& s : result.summary) {
    out << s.arm << "," << s.seeds << "," << fmt(s.mean, 6) << "," << fmt(s.stddev, 6) << "\n";
  }
  return out.str();
}

std::string ablation_runs_csv(const AblationResult& result) {
  std::ostringstream out;
  out << kAblationRunsCsvHeader << "\n";
  for (const auto& r : result.runs) {
    out << r.arm << "," << r.seed << "," << fmt(r.accuracy, 6) << "," << fmt(r.flops_pct, 4) << "\n";
  }
  return out.str();
}

namespace {

std::vector<double> ranks_of(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw ArgumentError("spearman needs two equal-length series (n >= 2)");
  const auto ra = ranks_of(a), rb = ranks_of(b);
  const double ma = mean(ra), mb = mean(rb);
  double num = 0.0, da = 0.0, db = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    da += (ra[i] - ma) * (ra[i] - ma);
    db += (rb[i] - mb) * (rb[i] - mb);
  }
  if (da == 0.0 || db == 0.0) return 0.0;
  return num / std::sqrt(da * db);
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace cap
