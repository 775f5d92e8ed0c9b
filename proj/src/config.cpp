#include "taxon/config.hpp"

#include <fstream>
#include <set>

#include <fmt/core.h>

#include "taxon/error.hpp"

namespace taxon {

void ExperimentConfig::validate(bool check_paths) const {
  if (!(curation.train_fraction > 0.0 && curation.train_fraction < 1.0)) {
    throw ConfigError(fmt::format("curation.train_fraction {} outside (0, 1)", curation.train_fraction));
  }
  if (curation.prune_threshold < 1) throw ConfigError("curation.prune_threshold must be >= 1");
  ArchitectureRegistry::global().lookup(model.arch);
  try {
    const auto init = parse_init_mode(model.init);
    parse_freeze_mode(model.freeze);
    if (init == InitMode::kPretrained && paths.weight_source.empty()) {
      throw ConfigError("model.init = pretrained requires paths.weight_source");
    }
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
  try {
    preprocess_spec().validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
  train_config().validate();
  if (training.workers < 1) throw ConfigError("training.workers must be >= 1");
  if (evaluation.k_list.empty()) throw ConfigError("evaluation.k_list is empty");
  for (int k : evaluation.k_list) {
    if (k < 1) throw ConfigError(fmt::format("evaluation.k_list entry {} must be >= 1", k));
  }
  if (check_paths) {
    auto need = [](const std::string& p, const char* key) {
      if (!p.empty() && !std::filesystem::exists(p)) {
        throw ConfigError(fmt::format("{} '{}' does not exist", key, p));
      }
    };
    if (paths.manifest.empty()) throw ConfigError("paths.manifest is required");
    need(paths.manifest, "paths.manifest");
    need(paths.split, "paths.split");
    need(paths.weight_source, "paths.weight_source");
    need(paths.data_root, "paths.data_root");
  }
}

PreprocessSpec ExperimentConfig::preprocess_spec() const {
  PreprocessSpec s;
  s.target_height = model.input_height;
  s.target_width = model.input_width;
  s.normalize_mean = preprocess.mean;
  s.normalize_std = preprocess.std;
  return s;
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig t;
  t.epochs = training.epochs;
  t.batch_size = training.batch_size;
  t.learning_rate = training.learning_rate;
  t.momentum = training.momentum;
  t.seed = seed;
  t.workers = training.workers;
  t.freeze.mode = parse_freeze_mode(model.freeze);
  t.init.mode = parse_init_mode(model.init);
  if (!paths.weight_source.empty()) t.init.weight_source = paths.weight_source;
  t.arch = ArchitectureSpec{model.arch,
                            {3, static_cast<std::size_t>(std::max(model.input_height, 0)),
                             static_cast<std::size_t>(std::max(model.input_width, 0))},
                            ""};
  return t;
}

nlohmann::ordered_json to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["paths"] = {{"manifest", c.paths.manifest},
                {"split", c.paths.split},
                {"weight_source", c.paths.weight_source},
                {"output_dir", c.paths.output_dir},
                {"data_root", c.paths.data_root}};
  j["curation"] = {{"train_fraction", c.curation.train_fraction},
                   {"prune_enabled", c.curation.prune_enabled},
                   {"prune_threshold", c.curation.prune_threshold},
                   {"drop_pruned_classes", c.curation.drop_pruned_classes}};
  j["model"] = {{"arch", c.model.arch},
                {"init", c.model.init},
                {"freeze", c.model.freeze},
                {"input_height", c.model.input_height},
                {"input_width", c.model.input_width}};
  j["preprocess"] = {{"mean", c.preprocess.mean}, {"std", c.preprocess.std}};
  j["training"] = {{"epochs", c.training.epochs},
                   {"batch_size", c.training.batch_size},
                   {"learning_rate", c.training.learning_rate},
                   {"momentum", c.training.momentum},
                   {"workers", c.training.workers}};
  j["evaluation"] = {{"k_list", c.evaluation.k_list}};
  return j;
}

namespace {

class SectionReader {
 public:
  SectionReader(const nlohmann::json& j, std::string section) : j_(j), section_(std::move(section)) {
    if (!j_.is_object()) throw ConfigError(fmt::format("'{}' must be an object", section_.empty() ? "config" : section_));
  }

  template <typename T>
  void read(const char* key, T& into) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      into = it->get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(fmt::format("config key '{}' has the wrong type", qualified(key)));
    }
  }

  const nlohmann::json* section(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError(fmt::format("unknown config key '{}'", qualified(key)));
    }
  }

 private:
  std::string qualified(const std::string& key) const { return section_.empty() ? key : section_ + "." + key; }

  const nlohmann::json& j_;
  std::string section_;
  std::set<std::string> seen_;
};

}  // namespace

ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  SectionReader root(j, "");
  root.read("seed", c.seed);
  if (const auto* s = root.section("paths")) {
    SectionReader r(*s, "paths");
    r.read("manifest", c.paths.manifest);
    r.read("split", c.paths.split);
    r.read("weight_source", c.paths.weight_source);
    r.read("output_dir", c.paths.output_dir);
    r.read("data_root", c.paths.data_root);
    r.finish();
  }
  if (const auto* s = root.section("curation")) {
    SectionReader r(*s, "curation");
    r.read("train_fraction", c.curation.train_fraction);
    r.read("prune_enabled", c.curation.prune_enabled);
    r.read("prune_threshold", c.curation.prune_threshold);
    r.read("drop_pruned_classes", c.curation.drop_pruned_classes);
    r.finish();
  }
  if (const auto* s = root.section("model")) {
    SectionReader r(*s, "model");
    r.read("arch", c.model.arch);
    r.read("init", c.model.init);
    r.read("freeze", c.model.freeze);
    r.read("input_height", c.model.input_height);
    r.read("input_width", c.model.input_width);
    r.finish();
  }
  if (const auto* s = root.section("preprocess")) {
    SectionReader r(*s, "preprocess");
    r.read("mean", c.preprocess.mean);
    r.read("std", c.preprocess.std);
    r.finish();
  }
  if (const auto* s = root.section("training")) {
    SectionReader r(*s, "training");
    r.read("epochs", c.training.epochs);
    r.read("batch_size", c.training.batch_size);
    r.read("learning_rate", c.training.learning_rate);
    r.read("momentum", c.training.momentum);
    r.read("workers", c.training.workers);
    r.finish();
  }
  if (const auto* s = root.section("evaluation")) {
    SectionReader r(*s, "evaluation");
    r.read("k_list", c.evaluation.k_list);
    r.finish();
  }
  root.finish();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config '{}'", path.string()));
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return config_from_json(j);
}

std::string dump_config(const ExperimentConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

}  // namespace taxon
