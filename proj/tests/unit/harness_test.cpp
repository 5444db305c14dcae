// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "cap/checkpoint.hpp"
#include "cap/config.hpp"
#include "cap/errors.hpp"
#include "cap/experiments.hpp"
#include "cap/gradcheck.hpp"
#include "cap/training.hpp"

namespace cap {
namespace {

TEST(Config, ParsesTypedValues) {
  const KeyValueFile kv = KeyValueFile::parse("# comment\na = 3\n\nb = 0.5  # trailing\nc = x, y\nd = true\n", "t");
  EXPECT_EQ(kv.get_int("a", 0), 3);
  EXPECT_DOUBLE_EQ(kv.get_double("b", 0), 0.5);
  EXPECT_TRUE(kv.get_bool("d", false));
  EXPECT_EQ(kv.get_int("missing", 9), 9);
}

TEST(Config, ErrorsCarryLineNumbers) {
  try {
    KeyValueFile::parse("a = 1\nb = 2\nbroken line\n", "cfg");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  EXPECT_THROW(KeyValueFile::parse("a = 1\na = 2\n", "cfg"), ParseError);
  EXPECT_THROW(parse_run_config("train.epochs = many\n"), ParseError);
  EXPECT_THROW(parse_run_config("model.arch = transformer\n"), ParseError);
  EXPECT_THROW(parse_run_config("typo.key = 1\n"), ParseError);
}

TEST(Data, SyntheticBlobsAreSeeded) {
  const Dataset a = make_synthetic_blobs(20, 4, 0.5, 1, 2);
  const Dataset b = make_synthetic_blobs(20, 4, 0.5, 1, 2);
  const Dataset c = make_synthetic_blobs(20, 4, 0.5, 1, 3);
  EXPECT_EQ(hash_tensor(a.images), hash_tensor(b.images));
  EXPECT_NE(hash_tensor(a.images), hash_tensor(c.images));
  EXPECT_EQ(a.images.shape(), (Shape4{20, 3, 32, 32}));
  for (double v : a.images.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(a.labels[i], static_cast<int>(i % 4));
}

TEST(Data, EpochPermutationIsAPermutation) {
  const auto p = epoch_permutation(100, 5, 0);
  std::set<std::size_t> seen(p.begin(), p.end());
  EXPECT_EQ(seen.size(), 100u);
  EXPECT_EQ(*seen.rbegin(), 99u);
  EXPECT_EQ(p, epoch_permutation(100, 5, 0));
  EXPECT_NE(p, epoch_permutation(100, 5, 1));
}

TEST(Data, NormalizeByChannel) {
  Dataset d = make_synthetic_blobs(2, 2, 0.1, 1, 1);
  const double before = d.images.at(1, 2, 3, 4);
  normalize(d, {0.1, 0.2, 0.3}, {0.5, 0.5, 2.0});
  EXPECT_DOUBLE_EQ(d.images.at(1, 2, 3, 4), (before - 0.3) / 2.0);
}

TEST(Data, ReadsCifarBinaryRecords) {
  const auto path = std::filesystem::temp_directory_path() / "cap_cifar_records.bin";
  std::string bytes;
  for (int r = 0; r < 3; ++r) {
    bytes.push_back(static_cast<char>(r + 4));
    for (int i = 0; i < 3072; ++i) bytes.push_back(static_cast<char>((i + r) % 256));
  }
  write_file(path.string(), bytes);
  const Dataset d = read_cifar10({path.string()}, 2);
  std::filesystem::remove(path);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d.labels, (std::vector<int>{4, 5}));
  EXPECT_EQ(d.images.shape(), (Shape4{2, 3, 32, 32}));
  // Channel-major pixels scaled to [0, 1].
  EXPECT_DOUBLE_EQ(d.images.at(1, 0, 0, 1), 2.0 / 255.0);
  EXPECT_DOUBLE_EQ(d.images.at(0, 1, 0, 0), (1024 % 256) / 255.0);
  EXPECT_THROW(read_cifar10({"/nonexistent/batch.bin"}, 1), IoError);
}

TEST(Training, CosineSchedule) {
  EXPECT_DOUBLE_EQ(cosine_lr(0.1, 0, 10), 0.1);
  EXPECT_NEAR(cosine_lr(0.1, 5, 10), 0.05, 1e-15);
}

TEST(Training, SgdUpdateWithMomentumAndDecay) {
  Tensor4 w(Shape4{1, 1, 1, 2}, std::vector<double>{1.0, 2.0});
  const std::vector<Tensor4*> params{&w};
  const std::vector<Tensor4> grads{Tensor4(Shape4{1, 1, 1, 2}, std::vector<double>{0.5, -0.5})};
  SgdState st;
  sgd_update(params, grads, {true}, st, 0.1, 0.9, 0.01);
  EXPECT_DOUBLE_EQ(w[0], 1.0 - 0.1 * (0.5 + 0.01));
  EXPECT_DOUBLE_EQ(w[1], 2.0 - 0.1 * (-0.5 + 0.02));
  const std::vector<bool> frozen{false};
  const Tensor4 keep = w;
  sgd_update(params, grads, frozen, st, 0.1, 0.9, 0.01);
  EXPECT_EQ(w, keep);
}

// Easy 4-class problem: the toy VGG must fit the training set.
TEST(Training, FitsEasyProblem) {
  RunConfig c = parse_run_config(
      "data.num_classes = 4\ndata.noise = 0.35\ndata.train_size = 256\ndata.test_size = 64\ntrain.epochs = 6\n"
      "model.width = 0.5\n");
  const DataSplits data = load_data(c.data);
  const TrainOutcome out = train_baseline(c, data);
  ASSERT_EQ(out.metrics.size(), 6u);
  EXPECT_LT(out.metrics.back().train_loss, out.metrics.front().train_loss);
  EXPECT_GT(evaluate_accuracy(out.network, data.train), 0.95);
}

TEST(Training, ResumeFromCheckpointMatchesUninterrupted) {
  RunConfig c = parse_run_config(
      "data.num_classes = 4\ndata.train_size = 64\ndata.test_size = 16\ntrain.epochs = 2\n"
      "train.schedule = constant\nmodel.width = 0.5\n");
  const DataSplits data = load_data(c.data);
  auto loss = [](Tape& t, const ForwardResult& fr, const Batch& b) { return classification_loss(t, fr, b); };
  NetworkGraph full = build_model(c.model, 4, c.seed);
  NetworkGraph half = full;
  SgdState s_full;
  run_sgd(full, data.train, loss, c.train, s_full);

  LoopConfig first = c.train;
  first.epochs = 1;
  SgdState s_half;
  run_sgd(half, data.train, loss, first, s_half);
  Checkpoint back = deserialize_checkpoint(serialize_checkpoint(Checkpoint{half, s_half, c.seed, "", ""}));
  run_sgd(back.network, data.train, loss, c.train, back.optimizer);
  EXPECT_EQ(back.optimizer.epochs_done, 2u);
  EXPECT_EQ(parameter_hash(back.network), parameter_hash(full));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  NetworkGraph net = build_small_resnet("18-lite", 10, 9);
  SgdState st;
  for (const Tensor4* p : parameters(std::as_const(net))) st.velocity.emplace_back(p->shape(), 0.125);
  st.epochs_done = 3;
  st.steps_done = 96;
  const Checkpoint ck{net, st, 77, "seed = 1\n", "mode = simultaneous\n"};
  const std::string bytes = serialize_checkpoint(ck);
  const Checkpoint back = deserialize_checkpoint(bytes);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  EXPECT_EQ(back.optimizer.epochs_done, 3u);
  EXPECT_EQ(back.data_seed, 77u);
  EXPECT_EQ(back.plan_text, ck.plan_text);
  const Tensor4 x(Shape4{2, 3, 32, 32}, 0.3);
  EXPECT_EQ(hash_tensor(predict(back.network, x)), hash_tensor(predict(net, x)));
}

TEST(Checkpoint, RejectsCorruptInput) {
  const std::string bytes = serialize_checkpoint(Checkpoint{build_small_vgg(1.0, 10, 1), {}, 1, "", ""});
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() / 2)), IoError);
  EXPECT_THROW(deserialize_checkpoint(bytes + "x"), IoError);
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad), IoError);
  EXPECT_THROW(load_checkpoint("/nonexistent/ckpt.bin"), IoError);
}

TEST(Statistics, SpearmanWithTies) {
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0);
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0);
  // Ranks (1.5, 1.5, 3) vs (1, 2, 3): Pearson on ranks by hand.
  const double r = spearman({0, 0, 1}, {1, 2, 3});
  EXPECT_NEAR(r, std::sqrt(3.0) / 2.0, 1e-12);
  EXPECT_DOUBLE_EQ(mean({1, 2, 3}), 2.0);
  EXPECT_DOUBLE_EQ(sample_stddev({1, 2, 3}), 1.0);
}

TEST(Harness, ParallelForFillsSlots) {
  std::vector<int> out(17, 0);
  parallel_for(out.size(), 4, [&](std::size_t i) { out[i] = static_cast<int>(i * i); });
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], static_cast<int>(i * i));
  EXPECT_THROW(parallel_for(3, 2, [](std::size_t i) { if (i == 1) throw ArgumentError("boom"); }), ArgumentError);
}

TEST(Harness, GradcheckSuitesPassAndCorruptionFails) {
  GradcheckOptions o;
  o.instances = 5;
  o.include_corrupted = true;
  const auto cases = run_gradcheck(o);
  std::set<std::string> suites;
  for (const auto& c : cases) {
    suites.insert(c.suite);
    if (c.name.find("corrupted") == std::string::npos) EXPECT_TRUE(c.passed) << c.suite << "/" << c.name;
    else EXPECT_FALSE(c.passed);
  }
  EXPECT_EQ(suites.count("tensor-autodiff"), 1u);
  EXPECT_EQ(suites.count("linalg-svd"), 1u);
  EXPECT_EQ(suites.count("proxy-projection"), 1u);
  const std::string csv = gradcheck_csv(cases, o.tolerance);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kGradcheckCsvHeader);
}

}  // namespace
}  // namespace cap
