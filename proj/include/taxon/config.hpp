#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "taxon/curation.hpp"
#include "taxon/training.hpp"

namespace taxon {

/// One experiment: data, curation, model, training and evaluation settings.
///
/// Stored as JSON with the sections below; every key is optional and
/// unknown keys are rejected.
///
///   {"seed": 0,
///    "paths": {"manifest", "split", "weight_source", "output_dir", "data_root"},
///    "curation": {"train_fraction", "prune_enabled", "prune_threshold", "drop_pruned_classes"},
///    "model": {"arch", "init", "freeze", "input_height", "input_width"},
///    "preprocess": {"mean": [r, g, b], "std": [r, g, b]},
///    "training": {"epochs", "batch_size", "learning_rate", "momentum", "workers"},
///    "evaluation": {"k_list": [1, 5]}}
struct ExperimentConfig {
  std::uint64_t seed = 0;

  struct Paths {
    std::string manifest;
    std::string split;  // empty: split in-process
    std::string weight_source;
    std::string output_dir = "run";
    std::string data_root;  // empty: directory of the manifest
    bool operator==(const Paths&) const = default;
  } paths;

  struct Curation {
    double train_fraction = 0.9;
    bool prune_enabled = false;
    std::size_t prune_threshold = 100;
    bool drop_pruned_classes = false;
    bool operator==(const Curation&) const = default;
  } curation;

  struct ModelSection {
    std::string arch = "tiny-cnn";
    std::string init = "scratch";
    std::string freeze = "train_all";
    int input_height = 224;
    int input_width = 224;
    bool operator==(const ModelSection&) const = default;
  } model;

  struct Preprocess {
    std::array<double, 3> mean{0.0, 0.0, 0.0};
    std::array<double, 3> std{1.0, 1.0, 1.0};
    bool operator==(const Preprocess&) const = default;
  } preprocess;

  struct Training {
    int epochs = 10;
    int batch_size = 16;
    double learning_rate = 0.01;
    double momentum = 0.9;
    std::size_t workers = 1;
    bool operator==(const Training&) const = default;
  } training;

  struct Evaluation {
    std::vector<int> k_list{1, 5};
    bool operator==(const Evaluation&) const = default;
  } evaluation;

  bool operator==(const ExperimentConfig&) const = default;

  /// Checks every numeric field and enum; with `check_paths`, also that the
  /// referenced files exist.
  void validate(bool check_paths = false) const;

  PreprocessSpec preprocess_spec() const;
  TrainConfig train_config() const;
};

nlohmann::ordered_json to_json(const ExperimentConfig& cfg);
/// Throws ConfigError on unknown keys or wrong types.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string dump_config(const ExperimentConfig& cfg);

}  // namespace taxon
