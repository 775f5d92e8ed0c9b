#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <set>
#include <string>
#include <vector>

#include "taxon/image.hpp"
#include "taxon/manifest.hpp"
#include "taxon/tensor.hpp"

namespace taxon {

/// Train/validation membership for every image of a manifest.
struct SplitAssignment {
  std::set<std::string> train_ids;
  std::set<std::string> val_ids;
  std::uint64_t seed = 0;
  double train_fraction = 0.9;

  bool operator==(const SplitAssignment&) const = default;

  bool is_train(const std::string& id) const { return train_ids.contains(id); }
  bool is_val(const std::string& id) const { return val_ids.contains(id); }
};

enum class SplitSide { kTrain, kVal };

/// Stratified seeded split. Within each class the records are ordered by
/// image_id, shuffled with a generator keyed on (seed, class_id), and the
/// first lround(fraction * n) go to train. A class with n >= 2 always keeps
/// at least one validation record.
SplitAssignment split(const DatasetManifest& m, double train_fraction, std::uint64_t seed);

/// Records on one side of a split, in manifest order.
std::vector<const ImageRecord*> select(const DatasetManifest& m, const SplitAssignment& s,
                                       SplitSide side);

/// Split file: two `#key=value` metadata lines, then CSV `image_id,side`
/// sorted by image_id.
void write_split(std::ostream& out, const SplitAssignment& s);
void save_split(const std::filesystem::path& dest, const SplitAssignment& s);
SplitAssignment parse_split(std::istream& in, const std::string& source_name = "<stream>");
SplitAssignment load_split(const std::filesystem::path& source);

/// Audit record of one class-count prune.
struct PruneReport {
  std::size_t threshold = 0;
  std::vector<int> removed_class_ids;
  std::size_t removed_image_count = 0;   // train side
  std::size_t retained_image_count = 0;  // train side
  std::vector<std::size_t> train_counts; // per original class id, before pruning
  std::size_t val_image_count = 0;
  std::size_t val_images_in_removed_classes = 0;
  bool label_space_reduced = false;

  bool operator==(const PruneReport&) const = default;
};

struct PruneOptions {
  /// Also remove pruned classes from the label space (validation records of
  /// those classes are dropped and the remaining ids re-indexed contiguously).
  bool drop_pruned_classes = false;
};

struct PruneResult {
  DatasetManifest manifest;
  SplitAssignment split;
  PruneReport report;
};

/// Removes every train record of each class whose train count is < threshold.
PruneResult prune_by_class_count(const DatasetManifest& m, const SplitAssignment& s,
                                 std::size_t threshold, PruneOptions options = {});

/// `key=value` lines.
void write_prune_report(std::ostream& out, const PruneReport& r);
/// CSV `class_id,train_count,removed`.
void write_prune_classes_csv(std::ostream& out, const PruneReport& r);

struct PreprocessSpec {
  int target_height = 224;
  int target_width = 224;
  std::array<double, 3> normalize_mean{0.0, 0.0, 0.0};
  std::array<double, 3> normalize_std{1.0, 1.0, 1.0};

  bool operator==(const PreprocessSpec&) const = default;

  void validate() const;
};

/// Bilinear resize (half-pixel centres, edge clamped) straight to the target
/// size, then (v / 255 - mean[c]) / std[c]. Output is 3 x H x W.
Tensor preprocess_image(const RawImage& raw, const PreprocessSpec& spec);

}  // namespace taxon
