#include <doctest.h>

#include <fstream>
#include <sstream>

#include "cli_pipeline.hpp"
#include "taxon/config.hpp"
#include "taxon/error.hpp"
#include "taxon/synth.hpp"
#include "test_util.hpp"

using namespace taxon;
using taxon::testing::cli;
using taxon::testing::TempDir;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("config: JSON round trip") {
  ExperimentConfig cfg;
  cfg.seed = 42;
  cfg.paths.manifest = "m.jsonl";
  cfg.curation.prune_enabled = true;
  cfg.curation.train_fraction = 0.8;
  cfg.model.init = "pretrained";
  cfg.model.freeze = "freeze_all_but_last";
  cfg.model.input_height = cfg.model.input_width = 32;
  cfg.preprocess.mean = {0.485, 0.456, 0.406};
  cfg.training.learning_rate = 0.1 + 0.2;
  cfg.evaluation.k_list = {1, 3, 5};
  CHECK(config_from_json(nlohmann::json::parse(dump_config(cfg))) == cfg);
  CHECK(dump_config(config_from_json(nlohmann::json::parse(dump_config(cfg)))) == dump_config(cfg));
}

TEST_CASE("config: rejects unknown keys, wrong types and bad values") {
  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"sed": 1})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"training": {"lr": 1}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"training": {"epochs": "ten"}})")), ConfigError);
  ExperimentConfig cfg;
  cfg.model.arch = "vgg";
  CHECK_THROWS_AS(cfg.validate(), RegistryError);
  cfg = {};
  cfg.curation.train_fraction = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.model.init = "pretrained";
  CHECK_THROWS_AS(cfg.validate(), ConfigError);  // no weight source
}

TEST_CASE("cli: exit codes") {
  TempDir dir;
  std::ofstream(dir / "empty.jsonl").close();
  CHECK(cli({"stats", "--manifest", (dir / "empty.jsonl").string()}) == kExitData);
  CHECK(cli({"stats"}) == kExitUsage);
  CHECK(cli({"no-such-command"}) == kExitUsage);
  CHECK(cli({"report"}) == kExitUsage);

  SynthConfig sc;
  sc.num_classes = 3;
  sc.max_images = 6;
  generate_synthetic_dataset(sc, dir.path(), false);
  const auto manifest = (dir / "manifest.jsonl").string();
  CHECK(cli({"split", "--manifest", manifest, "--fraction", "1.0", "--out", (dir / "s.csv").string()}) == kExitUsage);
  CHECK(cli({"split", "--manifest", manifest, "--fraction", "0.5", "--out", (dir / "s.csv").string()}) == kExitOk);
  CHECK(cli({"train", "--manifest", manifest, "--split", (dir / "s.csv").string(), "--arch", "vgg", "--out",
             (dir / "run").string()}) != kExitOk);
  CHECK(cli({"train", "--manifest", manifest, "--split", (dir / "s.csv").string(), "--arch", "alexnet", "--out",
             (dir / "run").string()}) != kExitOk);
  CHECK(cli({"zoo", "list"}) == kExitOk);
}

TEST_CASE("cli: eval refuses a checkpoint with the wrong class count") {
  TempDir dir;
  SynthConfig sc;
  sc.num_classes = 3;
  sc.max_images = 6;
  sc.image_size = 8;
  generate_synthetic_dataset(sc, dir.path());
  const auto model = build_model(make_arch("tiny-cnn", 8, 8), 5, {}, {}, 1);
  save_weights(dir / "w.bin", model);
  REQUIRE(cli({"split", "--manifest", (dir / "manifest.jsonl").string(), "--fraction", "0.5", "--out",
               (dir / "s.csv").string()}) == kExitOk);
  std::string text;
  CHECK(cli({"eval", "--checkpoint", (dir / "w.bin").string(), "--manifest", (dir / "manifest.jsonl").string(),
             "--split", (dir / "s.csv").string(), "--out", (dir / "ev").string()},
            &text) == kExitData);
  CHECK(text.find("5") != std::string::npos);
}

TEST_CASE("cli: split and synth-gen are byte-identical on rerun") {
  TempDir a, b;
  for (const auto* d : {&a, &b}) {
    REQUIRE(cli({"synth-gen", "--out", d->path().string(), "--classes", "5", "--max-images", "10", "--size", "8",
                 "--seed", "3"}) == kExitOk);
    REQUIRE(cli({"split", "--manifest", (*d / "manifest.jsonl").string(), "--seed", "9", "--fraction", "0.7",
                 "--out", (*d / "split.csv").string()}) == kExitOk);
  }
  CHECK(slurp(a / "manifest.jsonl") == slurp(b / "manifest.jsonl"));
  CHECK(slurp(a / "split.csv") == slurp(b / "split.csv"));
  CHECK(slurp(a.path() / "images/c0000/c0000_00000.ppm") == slurp(b.path() / "images/c0000/c0000_00000.ppm"));
}

TEST_CASE("cli: print-config emits a loadable config reflecting overrides") {
  TempDir dir;
  ExperimentConfig base;
  base.paths.manifest = "x.jsonl";
  base.training.epochs = 7;
  std::ofstream(dir / "c.json") << dump_config(base);
  std::string text;
  REQUIRE(cli({"train", "--config", (dir / "c.json").string(), "--epochs", "3", "--lr", "0.5", "--print-config"},
              &text) == kExitOk);
  const auto cfg = config_from_json(nlohmann::json::parse(text));
  CHECK(cfg.training.epochs == 3);
  CHECK(cfg.training.learning_rate == 0.5);
  CHECK(cfg.paths.manifest == "x.jsonl");
}

TEST_CASE("cli: end-to-end pipeline") {
  TempDir dir;
  const auto outcome = taxon::testing::run_pipeline(dir.path());
  INFO(outcome.failure);
  CHECK(outcome.ok);
}
