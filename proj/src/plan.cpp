// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#include "cap/plan.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cap/config.hpp"
#include "cap/errors.hpp"

namespace cap {

namespace {

const std::vector<std::string> kPlanKeys = {
    "mode",          "gamma",          "seed",           "batch_size",         "projection_steps",
    "projection_lr", "projection_momentum", "init",      "normalize_recon",    "two_round",
    "relaxation_epochs", "relaxation_lr", "relaxation_momentum", "finetune_epochs", "finetune_lr",
    "finetune_momentum", "default_keep_ratio"};

std::string format_double(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

}  // namespace

const char* mode_name(CompressionMode mode) {
  switch (mode) {
    case CompressionMode::kSingleLayer: return "single_layer";
    case CompressionMode::kCascadedGreedy: return "cascaded_greedy";
    case CompressionMode::kSimultaneous: return "simultaneous";
  }
  return "?";
}

const char* init_name(ProxyInit init) {
  switch (init) {
    case ProxyInit::kWarmStart: return "warm_start";
    case ProxyInit::kActivationPca: return "activation_pca";
    case ProxyInit::kRandom: return "random";
  }
  return "?";
}

CompressionPlan parse_plan(std::string_view text, const std::string& source) {
  const KeyValueFile kv = KeyValueFile::parse(text, source);
  kv.require_known(kPlanKeys, {{"layer.", ".keep_ratio"}, {"layer.", ".rank"}});

  CompressionPlan plan;
  if (const auto* e = kv.find("mode")) {
    if (e->value == "single_layer") plan.mode = CompressionMode::kSingleLayer;
    else if (e->value == "cascaded_greedy") plan.mode = CompressionMode::kCascadedGreedy;
    else if (e->value == "simultaneous") plan.mode = CompressionMode::kSimultaneous;
    else kv.fail(*e, "expected single_layer, cascaded_greedy or simultaneous");
  }
  if (const auto* e = kv.find("init")) {
    if (e->value == "warm_start") plan.init = ProxyInit::kWarmStart;
    else if (e->value == "activation_pca") plan.init = ProxyInit::kActivationPca;
    else if (e->value == "random") plan.init = ProxyInit::kRandom;
    else kv.fail(*e, "expected warm_start, activation_pca or random");
  }
  plan.gamma = kv.get_double("gamma", plan.gamma);
  if (plan.gamma < 0) kv.fail(*kv.find("gamma"), "must be non-negative");
  plan.seed = static_cast<std::uint64_t>(kv.get_size("seed", plan.seed));
  plan.batch_size = kv.get_size("batch_size", plan.batch_size);
  if (plan.batch_size == 0) kv.fail(*kv.find("batch_size"), "must be positive");
  plan.projection_steps = kv.get_size("projection_steps", plan.projection_steps);
  plan.projection_lr = kv.get_double("projection_lr", plan.projection_lr);
  plan.projection_momentum = kv.get_double("projection_momentum", plan.projection_momentum);
  plan.normalize_recon = kv.get_bool("normalize_recon", plan.normalize_recon);
  plan.two_round = kv.get_bool("two_round", plan.two_round);
  plan.relaxation_epochs = kv.get_size("relaxation_epochs", plan.relaxation_epochs);
  plan.relaxation_lr = kv.get_double("relaxation_lr", plan.relaxation_lr);
  plan.relaxation_momentum = kv.get_double("relaxation_momentum", plan.relaxation_momentum);
  plan.finetune_epochs = kv.get_size("finetune_epochs", plan.finetune_epochs);
  plan.finetune_lr = kv.get_double("finetune_lr", plan.finetune_lr);
  plan.finetune_momentum = kv.get_double("finetune_momentum", plan.finetune_momentum);
  if (const auto* e = kv.find("default_keep_ratio")) {
    const double r = kv.get_double(e->key, 1.0);
    if (!(r > 0.0 && r <= 1.0)) kv.fail(*e, "keep ratio must be in (0, 1]");
    plan.default_keep_ratio = r;
  }

  std::map<int, LayerTarget> targets;
  for (const auto& e : kv.entries()) {
    if (!e.key.starts_with("layer.")) continue;
    const auto dot = e.key.find('.', 6);
    const std::string id_text = e.key.substr(6, dot - 6);
    int id = -1;
    try {
      std::size_t used = 0;
      id = std::stoi(id_text, &used);
      if (used != id_text.size() || id < 0) id = -1;
    } catch (const std::logic_error&) {
      id = -1;
    }
    if (id < 0) kv.fail(e, "layer id must be a non-negative integer");
    LayerTarget& t = targets[id];
    t.layer = id;
    if (e.key.ends_with(".keep_ratio")) {
      const double r = kv.get_double(e.key, 1.0);
      if (!(r > 0.0 && r <= 1.0)) kv.fail(e, "keep ratio must be in (0, 1]");
      t.keep_ratio = r;
    } else {
      const std::int64_t r = kv.get_int(e.key, 1);
      if (r < 1) kv.fail(e, "rank must be at least 1");
      t.rank = static_cast<std::size_t>(r);
    }
    if (t.rank && t.keep_ratio) kv.fail(e, "layer has both rank and keep_ratio");
  }
  for (auto& [id, t] : targets) plan.layers.push_back(t);
  return plan;
}

CompressionPlan load_plan(const std::string& path) { return parse_plan(read_text_file(path), path); }

std::string plan_to_text(const CompressionPlan& plan) {
  std::ostringstream out;
  out << "mode = " << mode_name(plan.mode) << "\n";
  out << "gamma = " << format_double(plan.gamma) << "\n";
  out << "seed = " << plan.seed << "\n";
  out << "batch_size = " << plan.batch_size << "\n";
  out << "projection_steps = " << plan.projection_steps << "\n";
  out << "projection_lr = " << format_double(plan.projection_lr) << "\n";
  out << "projection_momentum = " << format_double(plan.projection_momentum) << "\n";
  out << "init = " << init_name(plan.init) << "\n";
  out << "normalize_recon = " << (plan.normalize_recon ? "true" : "false") << "\n";
  out << "two_round = " << (plan.two_round ? "true" : "false") << "\n";
  out << "relaxation_epochs = " << plan.relaxation_epochs << "\n";
  out << "relaxation_lr = " << format_double(plan.relaxation_lr) << "\n";
  out << "relaxation_momentum = " << format_double(plan.relaxation_momentum) << "\n";
  out << "finetune_epochs = " << plan.finetune_epochs << "\n";
  out << "finetune_lr = " << format_double(plan.finetune_lr) << "\n";
  out << "finetune_momentum = " << format_double(plan.finetune_momentum) << "\n";
  if (plan.default_keep_ratio) out << "default_keep_ratio = " << format_double(*plan.default_keep_ratio) << "\n";
  for (const auto& t : plan.layers) {
    if (t.rank) out << "layer." << t.layer << ".rank = " << *t.rank << "\n";
    if (t.keep_ratio) out << "layer." << t.layer << ".keep_ratio = " << format_double(*t.keep_ratio) << "\n";
  }
  return out.str();
}

std::size_t rank_for_ratio(std::size_t channels, double keep_ratio) {
  const auto r = static_cast<std::size_t>(std::lround(keep_ratio * static_cast<double>(channels)));
  return std::clamp<std::size_t>(r, 1, channels);
}

std::map<int, std::size_t> resolve_ranks(const NetworkGraph& net, const CompressionPlan& plan) {
  const auto n = static_cast<int>(conv_count(net));
  std::map<int, std::size_t> ranks;
  for (const auto& t : plan.layers) {
    if (t.layer >= n) {
      throw ValidationError("plan references conv " + std::to_string(t.layer) + " but " + net.name + " has " +
                            std::to_string(n) + " convs");
    }
    if (!is_compressible(net, t.layer)) {
      throw ValidationError("conv " + std::to_string(t.layer) + " of " + net.name + " is protected");
    }
    const std::size_t c = conv_at(net, t.layer).c_out;
    const std::size_t r = t.rank ? *t.rank : rank_for_ratio(c, t.keep_ratio.value_or(1.0));
    if (r < 1 || r > c) {
      throw ValidationError("rank " + std::to_string(r) + " for conv " + std::to_string(t.layer) +
                            " outside [1, " + std::to_string(c) + "]");
    }
    ranks[t.layer] = r;
  }
  if (plan.default_keep_ratio) {
    for (int id : compressible_layers(net)) {
      if (!ranks.contains(id)) ranks[id] = rank_for_ratio(conv_at(net, id).c_out, *plan.default_keep_ratio);
    }
  }
  if (plan.mode == CompressionMode::kSingleLayer && ranks.size() > 1) {
    throw ValidationError("single_layer mode takes exactly one layer, plan has " + std::to_string(ranks.size()));
  }
  return ranks;
}

}  // namespace cap
