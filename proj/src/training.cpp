#include "taxon/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/core.h>

#include "taxon/error.hpp"

namespace taxon {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError(fmt::format("epochs must be >= 1, got {}", epochs));
  if (batch_size < 1) throw ConfigError(fmt::format("batch_size must be >= 1, got {}", batch_size));
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError(fmt::format("learning_rate must be > 0, got {}", learning_rate));
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError(fmt::format("momentum must be in [0, 1), got {}", momentum));
  }
  if (init.mode == InitMode::kPretrained && !init.weight_source) {
    throw ConfigError("pretrained initialization requires a weight source");
  }
}

double train_step(Model& model, const Tensor& inputs, std::span<const int> labels, OptimizerState& state,
                  double learning_rate, double momentum, const std::string& batch_label) {
  LossAndGradient lg;
  try {
    lg = model.net.loss_and_gradient(inputs, labels);
  } catch (const NumericError& e) {
    throw NumericError(fmt::format("{}: {}", batch_label, e.what()));
  }
  if (!std::isfinite(lg.mean_loss)) {
    throw NumericError(fmt::format("{}: non-finite loss {}", batch_label, lg.mean_loss));
  }
  auto params = model.net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    if (!p.trainable) continue;
    const Tensor& g = lg.grads[i];
    Tensor& v = state.velocity[p.name];
    if (v.shape != p.value.shape) v = Tensor(p.value.shape);
    for (std::size_t j = 0; j < g.numel(); ++j) {
      v[j] = momentum * v[j] + g[j];
      p.value[j] -= learning_rate * v[j];
    }
  }
  return lg.mean_loss;
}

namespace {

constexpr const char* kVelocityPrefix = "optim.velocity.";

int argmax_lowest(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i) {
    if (row[i] > row[best]) best = i;
  }
  return static_cast<int>(best);
}

std::vector<const ImageRecord*> sorted_side(const DatasetManifest& m, const SplitAssignment& s, SplitSide side) {
  auto recs = select(m, s, side);
  std::sort(recs.begin(), recs.end(),
            [](const ImageRecord* a, const ImageRecord* b) { return a->image_id < b->image_id; });
  return recs;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model, const OptimizerState& state,
                     int epoch, const std::vector<EpochMetrics>& history, std::optional<double> best_val_loss) {
  TensorFile file;
  file.metadata = model_metadata(model);
  file.metadata["kind"] = "checkpoint";
  file.metadata["epoch"] = epoch;
  auto rows = nlohmann::json::array();
  for (const auto& h : history) rows.push_back({h.epoch, h.train_loss, h.val_loss, h.val_top1_error});
  file.metadata["history"] = rows;
  file.metadata["best_val_loss"] = best_val_loss ? nlohmann::json(*best_val_loss) : nlohmann::json();
  file.tensors = export_tensors(model);
  for (const auto& [name, v] : state.velocity) file.tensors.emplace(kVelocityPrefix + name, v);
  write_tensor_file(path, file);
}

TrainingCheckpoint load_checkpoint(const std::filesystem::path& path, const FreezePolicy& freeze) {
  const TensorFile file = read_tensor_file(path);
  TrainingCheckpoint ck;
  ck.model = model_from_file(file, freeze);
  const auto& meta = file.metadata;
  try {
    ck.epoch = meta.at("epoch").get<int>();
    for (const auto& row : meta.at("history")) {
      ck.history.push_back({row.at(0).get<int>(), row.at(1).get<double>(), row.at(2).get<double>(),
                            row.at(3).get<double>()});
    }
    const auto& best = meta.at("best_val_loss");
    ck.best_val_loss = best.is_null() ? std::numeric_limits<double>::infinity() : best.get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(fmt::format("{}: not a training checkpoint ({})", path.string(), e.what()));
  }
  const std::string prefix = kVelocityPrefix;
  for (const auto& [name, t] : file.tensors) {
    if (name.rfind(prefix, 0) == 0) ck.optimizer.velocity.emplace(name.substr(prefix.size()), t);
  }
  return ck;
}

void write_history_csv(std::ostream& out, const std::vector<EpochMetrics>& history) {
  out << "epoch,train_loss,val_loss,val_top1_error\n";
  for (const auto& h : history) {
    out << fmt::format("{},{},{},{}\n", h.epoch, h.train_loss, h.val_loss, h.val_top1_error);
  }
}

std::vector<EpochMetrics> read_history_csv(std::istream& in) {
  std::vector<EpochMetrics> out;
  std::string line;
  if (!std::getline(in, line) || line != "epoch,train_loss,val_loss,val_top1_error") {
    throw FormatError("history file lacks the 'epoch,train_loss,val_loss,val_top1_error' header");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    EpochMetrics m;
    char c1, c2, c3;
    if (!(row >> m.epoch >> c1 >> m.train_loss >> c2 >> m.val_loss >> c3 >> m.val_top1_error)) {
      throw FormatError(fmt::format("malformed history row '{}'", line));
    }
    out.push_back(m);
  }
  return out;
}

std::pair<double, double> loss_and_error(const Model& model, const FeatureSource& source,
                                         std::span<const ImageRecord* const> records,
                                         std::size_t batch_size, std::size_t workers) {
  if (records.empty()) throw DataError("cannot score an empty record set");
  double loss = 0.0;
  std::size_t wrong = 0;
  for (std::size_t start = 0; start < records.size(); start += batch_size) {
    const auto chunk = records.subspan(start, std::min(batch_size, records.size() - start));
    const Tensor logits = model.forward(load_batch(source, chunk, workers));
    const std::size_t K = logits.shape[1];
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      std::span<const double> row(logits.data.data() + b * K, K);
      loss += cross_entropy(row, chunk[b]->class_id);
      if (argmax_lowest(row) != chunk[b]->class_id) ++wrong;
    }
  }
  const auto n = static_cast<double>(records.size());
  return {loss / n, static_cast<double>(wrong) / n};
}

FitResult fit(const TrainConfig& config, const DatasetManifest& manifest, const SplitAssignment& split,
              const FeatureSource& source, const PreprocessSpec& preprocess, const FitOptions& options) {
  config.validate();
  preprocess.validate();
  if (static_cast<std::size_t>(preprocess.target_height) != config.arch.input_dims[1] ||
      static_cast<std::size_t>(preprocess.target_width) != config.arch.input_dims[2]) {
    throw ConfigError(fmt::format("preprocess target {}x{} does not match the {} input {}x{}",
                                  preprocess.target_height, preprocess.target_width, config.arch.name,
                                  config.arch.input_dims[1], config.arch.input_dims[2]));
  }
  const auto train = sorted_side(manifest, split, SplitSide::kTrain);
  const auto val = sorted_side(manifest, split, SplitSide::kVal);
  if (train.empty()) throw ConfigError("the train split is empty");
  if (val.empty()) throw ConfigError("the validation split is empty");

  FitResult result;
  int start_epoch = 0;
  double best = std::numeric_limits<double>::infinity();
  if (options.resume_from) {
    auto ck = load_checkpoint(*options.resume_from, config.freeze);
    if (ck.model.num_classes != manifest.num_classes) {
      throw ConfigError(fmt::format("checkpoint has {} classes but the manifest has {}", ck.model.num_classes,
                                    manifest.num_classes));
    }
    if (ck.model.arch.name != config.arch.name) {
      throw ConfigError(fmt::format("checkpoint architecture '{}' differs from configured '{}'",
                                    ck.model.arch.name, config.arch.name));
    }
    result.model = std::move(ck.model);
    result.optimizer = std::move(ck.optimizer);
    result.history = std::move(ck.history);
    start_epoch = ck.epoch;
    best = ck.best_val_loss;
  } else {
    result.model = build_model(config.arch, manifest.num_classes, config.init, config.freeze, config.seed);
    result.warnings = result.model.warnings;
  }
  result.model.preprocess = preprocess;

  const bool write_files = !options.output_dir.empty();
  if (write_files) std::filesystem::create_directories(options.output_dir);
  const auto batch = static_cast<std::size_t>(config.batch_size);

  for (int epoch = start_epoch + 1; epoch <= config.epochs; ++epoch) {
    std::vector<const ImageRecord*> order = train;
    Rng rng(derive_seed(config.seed, {seed_key("shuffle"), static_cast<std::uint64_t>(epoch)}));
    rng.shuffle(std::span<const ImageRecord*>(order));

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t s = 0; s < order.size(); s += batch) {
      const std::span<const ImageRecord* const> chunk(order.data() + s, std::min(batch, order.size() - s));
      const Tensor inputs = load_batch(source, chunk, config.workers);
      std::vector<int> labels;
      labels.reserve(chunk.size());
      for (const auto* r : chunk) labels.push_back(r->class_id);
      loss_sum += train_step(result.model, inputs, labels, result.optimizer, config.learning_rate,
                             config.momentum,
                             fmt::format("epoch {} batch {} (first image '{}')", epoch, batches, chunk[0]->image_id));
      ++batches;
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(batches);
    std::tie(m.val_loss, m.val_top1_error) = loss_and_error(result.model, source, val, batch, config.workers);
    result.history.push_back(m);

    const bool improved = m.val_loss < best;
    if (improved) best = m.val_loss;
    if (write_files) {
      std::ofstream hist(options.output_dir / "history.csv", std::ios::binary | std::ios::trunc);
      write_history_csv(hist, result.history);
      save_checkpoint(options.output_dir / "checkpoint_last.bin", result.model, result.optimizer, epoch,
                      result.history, best);
      if (improved) {
        save_checkpoint(options.output_dir / "checkpoint_best.bin", result.model, result.optimizer, epoch,
                        result.history, best);
      }
    }
    if (options.stop_after_epoch && epoch >= *options.stop_after_epoch) break;
  }
  return result;
}

}  // namespace taxon
