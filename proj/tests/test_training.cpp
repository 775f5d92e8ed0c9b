#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "gradcheck.hpp"
#include "taxon/error.hpp"
#include "taxon/training.hpp"
#include "test_util.hpp"

using namespace taxon;
using taxon::testing::TempDir;
using taxon::testing::manifest_with_counts;
using taxon::testing::random_tensor;

namespace {

constexpr std::size_t kSide = 8;

/// Class-separable features: per-class channel offsets plus noise.
MemoryFeatureSource features_for(const DatasetManifest& m, std::uint64_t seed) {
  MemoryFeatureSource src;
  Rng rng(seed);
  for (const auto& r : m.records) {
    Tensor t = random_tensor({3, kSide, kSide}, rng, 0.3);
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const std::size_t c = i / (kSide * kSide);
      t[i] += (static_cast<std::size_t>(r.class_id) % 3 == c ? 1.0 : 0.0) + 0.3 * r.class_id;
    }
    src.add(r.image_id, std::move(t));
  }
  return src;
}

TrainConfig small_config(int epochs) {
  TrainConfig cfg;
  cfg.arch = make_arch("tiny-cnn", kSide, kSide);
  cfg.epochs = epochs;
  cfg.batch_size = 4;
  cfg.learning_rate = 0.05;
  cfg.seed = 3;
  return cfg;
}

PreprocessSpec small_spec() {
  PreprocessSpec s;
  s.target_height = s.target_width = static_cast<int>(kSide);
  return s;
}

}  // namespace

TEST_CASE("train_step: zero learning rate leaves parameters unchanged") {
  auto model = build_model(make_arch("tiny-cnn", kSide, kSide), 3, {}, {}, 1);
  const auto before = export_tensors(model);
  Rng rng(1);
  OptimizerState state;
  const std::vector<int> labels{0, 2};
  const double loss = train_step(model, random_tensor({2, 3, kSide, kSide}, rng), labels, state, 0.0, 0.9);
  CHECK(std::isfinite(loss));
  CHECK(loss > 0.0);
  CHECK(export_tensors(model) == before);
}

TEST_CASE("train_step: head update equals -lr (p - y) x^T on a single example") {
  auto model = build_model(make_arch("tiny-cnn", kSide, kSide), 4, {}, {}, 2);
  Rng rng(5);
  const Tensor input = random_tensor({1, 3, kSide, kSide}, rng);
  const int label = 1;

  // Features entering the head, by running the layers before it.
  Tensor feat = Tensor({3, kSide, kSide});
  feat.data = input.data;
  const auto& layers = model.net.layers();
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) feat = layers[l]->forward(feat);
  const Tensor logits = model.forward(input);
  double denom = 0.0;
  for (double z : logits.data) denom += std::exp(z);

  const auto w0 = export_tensors(model).at("head.weight");
  OptimizerState state;
  const double lr = 0.1;
  train_step(model, input, std::vector<int>{label}, state, lr, 0.9);
  const auto w1 = export_tensors(model).at("head.weight");
  for (std::size_t k = 0; k < 4; ++k) {
    const double residual = std::exp(logits[k]) / denom - (static_cast<int>(k) == label ? 1.0 : 0.0);
    for (std::size_t i = 0; i < feat.numel(); ++i) {
      CHECK(std::abs((w1[k * feat.numel() + i] - w0[k * feat.numel() + i]) - (-lr * residual * feat[i])) <= 1e-5);
    }
  }
}

TEST_CASE("train_step: momentum accumulates as v = m v + g") {
  auto model = build_model(make_arch("tiny-cnn", kSide, kSide), 3, {}, {}, 2);
  Rng rng(6);
  const Tensor x = random_tensor({2, 3, kSide, kSide}, rng);
  const std::vector<int> labels{0, 1};
  const double lr = 0.01, m = 0.5;
  OptimizerState state;
  const auto g1 = model.net.loss_and_gradient(x, labels).grads;
  train_step(model, x, labels, state, lr, m);
  const auto g2 = model.net.loss_and_gradient(x, labels).grads;
  const auto before = export_tensors(model);
  train_step(model, x, labels, state, lr, m);
  const auto after = export_tensors(model);
  const auto params = model.net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& name = params[i]->name;
    for (std::size_t j = 0; j < g1[i].numel(); ++j) {
      const double v = m * g1[i][j] + g2[i][j];
      CHECK(after.at(name)[j] == doctest::Approx(before.at(name)[j] - lr * v).epsilon(1e-12));
    }
  }
}

TEST_CASE("train_step: frozen backbone stays bit-identical") {
  auto model = build_model(make_arch("tiny-cnn", kSide, kSide), 3, {}, {FreezeMode::kFreezeAllButLast}, 7);
  const auto before = export_tensors(model);
  Rng rng(3);
  OptimizerState state;
  for (int step = 0; step < 3; ++step) {
    train_step(model, random_tensor({4, 3, kSide, kSide}, rng), std::vector<int>{0, 1, 2, 1}, state, 0.1, 0.9);
  }
  const auto after = export_tensors(model);
  for (const auto& [name, t] : after) {
    if (name.rfind("head.", 0) == 0) {
      CHECK(t != before.at(name));
    } else {
      CHECK(t == before.at(name));
    }
  }
  CHECK(state.velocity.size() == 2);
}

TEST_CASE("train_step: non-finite loss names the batch") {
  auto model = build_model(make_arch("tiny-cnn", kSide, kSide), 3, {}, {}, 1);
  model.net.head().params()[0].value[0] = std::numeric_limits<double>::quiet_NaN();
  Rng rng(1);
  const Tensor x = random_tensor({1, 3, kSide, kSide}, rng);
  OptimizerState state;
  try {
    train_step(model, x, std::vector<int>{0}, state, 0.1, 0.9, "epoch 2 batch 5");
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("epoch 2 batch 5") != std::string::npos);
  }
}

TEST_CASE("gradient: backward matches central differences") {
  Rng rng(21);
  for (int trial = 0; trial < 3; ++trial) {
    const auto model = build_model(make_arch("tiny-cnn", 6, 6), 3, {}, {}, static_cast<std::uint64_t>(trial));
    const Tensor x = random_tensor({2, 3, 6, 6}, rng);
    const std::vector<int> labels{static_cast<int>(rng.below(3)), static_cast<int>(rng.below(3))};
    const auto analytic = testing::flatten(model.net.loss_and_gradient(x, labels).grads);
    const auto numeric = testing::finite_difference_gradient(model.net, x, labels, 1e-4);
    CHECK(testing::relative_error(analytic, numeric) <= 1e-3);
  }
}

TEST_CASE("checkpoint: round trip, corruption and version checks") {
  TempDir dir;
  auto model = build_model(make_arch("tiny-cnn", kSide, kSide), 3, {}, {}, 1);
  OptimizerState state;
  Rng rng(2);
  train_step(model, random_tensor({2, 3, kSide, kSide}, rng), std::vector<int>{0, 1}, state, 0.1, 0.9);
  const std::vector<EpochMetrics> history{{1, 1.5, 1.25, 0.5}};
  save_checkpoint(dir / "ck.bin", model, state, 1, history, 1.25);

  const auto ck = load_checkpoint(dir / "ck.bin");
  CHECK(export_tensors(ck.model) == export_tensors(model));
  CHECK(ck.optimizer == state);
  CHECK(ck.epoch == 1);
  CHECK(ck.history == history);
  CHECK(ck.best_val_loss == 1.25);

  // Truncation
  const auto size = std::filesystem::file_size(dir / "ck.bin");
  std::filesystem::copy_file(dir / "ck.bin", dir / "short.bin");
  std::filesystem::resize_file(dir / "short.bin", size / 2);
  CHECK_THROWS_AS(load_checkpoint(dir / "short.bin"), LoadError);

  // Flipped byte
  {
    std::fstream f(dir / "ck.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(static_cast<std::streamoff>(size / 2));
    char c;
    f.read(&c, 1);
    f.seekp(static_cast<std::streamoff>(size / 2));
    c = static_cast<char>(c ^ 0x5a);
    f.write(&c, 1);
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "ck.bin"), LoadError);

  // Future format version
  TensorFile file;
  file.metadata = model_metadata(model);
  file.tensors = export_tensors(model);
  write_tensor_file(dir / "v.bin", file);
  {
    std::fstream f(dir / "v.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const char v2[4] = {2, 0, 0, 0};
    f.write(v2, 4);
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "v.bin"), LoadError);
  CHECK_THROWS_AS(load_checkpoint(dir / "nope.bin"), LoadError);
}

TEST_CASE("history CSV round trip") {
  const std::vector<EpochMetrics> h{{1, 2.0794415416798357, 1.9, 0.75}, {2, 1.1, 0.1 + 0.2, 0.0}};
  std::stringstream s;
  write_history_csv(s, h);
  CHECK(read_history_csv(s) == h);
}

TEST_CASE("fit: one epoch on a 4-class, 40-image set") {
  const auto m = manifest_with_counts({10, 10, 10, 10});
  const auto s = split(m, 0.8, 1);
  const auto src = features_for(m, 1);
  TempDir dir;
  const auto r = fit(small_config(1), m, s, src, small_spec(), {.output_dir = dir.path()});
  REQUIRE(r.history.size() == 1);
  CHECK(std::isfinite(r.history[0].train_loss));
  CHECK(std::isfinite(r.history[0].val_loss));
  CHECK(std::filesystem::exists(dir / "history.csv"));
  CHECK(std::filesystem::exists(dir / "checkpoint_last.bin"));
  CHECK(std::filesystem::exists(dir / "checkpoint_best.bin"));
  std::ifstream hist(dir / "history.csv");
  CHECK(read_history_csv(hist) == r.history);
}

TEST_CASE("fit: deterministic for a fixed seed") {
  const auto m = manifest_with_counts({6, 9, 7});
  const auto s = split(m, 0.7, 2);
  const auto src = features_for(m, 2);
  const auto a = fit(small_config(3), m, s, src, small_spec());
  const auto b = fit(small_config(3), m, s, src, small_spec());
  CHECK(a.history == b.history);
  CHECK(export_tensors(a.model) == export_tensors(b.model));
}

TEST_CASE("fit: multi-worker loading sees the same batches") {
  const auto m = manifest_with_counts({6, 9, 7});
  const auto s = split(m, 0.7, 2);
  const auto src = features_for(m, 2);
  auto cfg = small_config(2);
  const auto a = fit(cfg, m, s, src, small_spec());
  cfg.workers = 3;
  const auto b = fit(cfg, m, s, src, small_spec());
  CHECK(a.history == b.history);
}

TEST_CASE("fit: resume reproduces the uninterrupted run") {
  const auto m = manifest_with_counts({8, 8, 8});
  const auto s = split(m, 0.75, 4);
  const auto src = features_for(m, 4);
  TempDir full_dir, part_dir;
  const auto full = fit(small_config(4), m, s, src, small_spec(), {.output_dir = full_dir.path()});
  fit(small_config(4), m, s, src, small_spec(), {.output_dir = part_dir.path(), .stop_after_epoch = 2});
  const auto resumed = fit(small_config(4), m, s, src, small_spec(),
                           {.output_dir = part_dir.path(), .resume_from = part_dir / "checkpoint_last.bin"});
  CHECK(resumed.history == full.history);
  CHECK(export_tensors(resumed.model) == export_tensors(full.model));
  std::ifstream a(full_dir / "history.csv"), b(part_dir / "history.csv");
  CHECK(std::string(std::istreambuf_iterator<char>(a), {}) == std::string(std::istreambuf_iterator<char>(b), {}));
}

TEST_CASE("fit: freeze_all_but_last leaves the backbone at its initialization") {
  const auto m = manifest_with_counts({8, 8, 8});
  const auto s = split(m, 0.75, 4);
  const auto src = features_for(m, 4);
  auto cfg = small_config(3);
  cfg.freeze.mode = FreezeMode::kFreezeAllButLast;
  const auto initial = build_model(cfg.arch, 3, cfg.init, cfg.freeze, cfg.seed);
  const auto r = fit(cfg, m, s, src, small_spec());
  const auto a = export_tensors(initial);
  const auto b = export_tensors(r.model);
  for (const auto& [name, t] : a) {
    if (name.rfind("head.", 0) == 0) continue;
    CHECK(b.at(name) == t);
  }
  CHECK(b.at("head.weight") != a.at("head.weight"));
  CHECK(r.warnings.size() == 1);
}

TEST_CASE("fit: configuration errors") {
  const auto m = manifest_with_counts({4, 4});
  const auto src = features_for(m, 1);
  SplitAssignment all_val;
  for (const auto& r : m.records) all_val.val_ids.insert(r.image_id);
  CHECK_THROWS_AS(fit(small_config(1), m, all_val, src, small_spec()), ConfigError);

  const auto s = split(m, 0.5, 1);
  auto bad = small_config(1);
  bad.epochs = 0;
  CHECK_THROWS_AS(fit(bad, m, s, src, small_spec()), ConfigError);
  bad = small_config(1);
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(fit(bad, m, s, src, small_spec()), ConfigError);
  bad = small_config(1);
  bad.momentum = 1.0;
  CHECK_THROWS_AS(fit(bad, m, s, src, small_spec()), ConfigError);
  PreprocessSpec wrong = small_spec();
  wrong.target_width = 9;
  CHECK_THROWS_AS(fit(small_config(1), m, s, src, wrong), ConfigError);
}
