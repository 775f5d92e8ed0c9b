#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "taxon/curation.hpp"
#include "taxon/loader.hpp"
#include "taxon/loss.hpp"
#include "taxon/manifest.hpp"
#include "taxon/modelzoo.hpp"

namespace taxon {

struct TrainConfig {
  int epochs = 10;
  int batch_size = 16;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  FreezePolicy freeze;
  WeightInit init;
  ArchitectureSpec arch;
  std::size_t workers = 1;

  bool operator==(const TrainConfig&) const = default;

  /// Throws ConfigError on the first invalid field.
  void validate() const;
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_top1_error = 0.0;

  bool operator==(const EpochMetrics&) const = default;
};

/// Momentum buffers, one per trainable parameter name.
struct OptimizerState {
  std::map<std::string, Tensor> velocity;

  bool operator==(const OptimizerState&) const = default;
};

/// One gradient-descent-with-momentum update on the trainable parameters:
///   v <- momentum * v + g;  theta <- theta - lr * v
/// Returns the batch-mean loss measured before the update. A non-finite loss
/// raises NumericError mentioning `batch_label`.
double train_step(Model& model, const Tensor& inputs, std::span<const int> labels,
                  OptimizerState& state, double learning_rate, double momentum,
                  const std::string& batch_label = "batch");

/// Everything needed to resume training exactly.
struct TrainingCheckpoint {
  Model model;
  OptimizerState optimizer;
  int epoch = 0;
  std::vector<EpochMetrics> history;
  double best_val_loss = 0.0;
};

void save_checkpoint(const std::filesystem::path& path, const Model& model, const OptimizerState& state,
                     int epoch, const std::vector<EpochMetrics>& history = {},
                     std::optional<double> best_val_loss = std::nullopt);
/// Throws LoadError on corrupt, truncated or version-mismatched files.
TrainingCheckpoint load_checkpoint(const std::filesystem::path& path, const FreezePolicy& freeze = {});

/// CSV `epoch,train_loss,val_loss,val_top1_error`.
void write_history_csv(std::ostream& out, const std::vector<EpochMetrics>& history);
std::vector<EpochMetrics> read_history_csv(std::istream& in);

struct FitOptions {
  /// Receives history.csv, checkpoint_last.bin and checkpoint_best.bin; empty = no files.
  std::filesystem::path output_dir;
  /// Continue from a checkpoint written by an earlier fit.
  std::optional<std::filesystem::path> resume_from;
  /// Stop after this epoch (simulates an interrupted run).
  std::optional<int> stop_after_epoch;
};

struct FitResult {
  Model model;
  OptimizerState optimizer;
  std::vector<EpochMetrics> history;
  std::vector<std::string> warnings;
};

/// Trains on the train side of `split`, validating on the val side after
/// every epoch. Deterministic for a fixed seed with workers == 1.
FitResult fit(const TrainConfig& config, const DatasetManifest& manifest, const SplitAssignment& split,
              const FeatureSource& source, const PreprocessSpec& preprocess, const FitOptions& options = {});

/// Mean cross-entropy and top-1 error of `model` over `records`.
std::pair<double, double> loss_and_error(const Model& model, const FeatureSource& source,
                                         std::span<const ImageRecord* const> records,
                                         std::size_t batch_size, std::size_t workers = 1);

}  // namespace taxon
