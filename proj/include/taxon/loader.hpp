#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <unordered_map>

#include "taxon/curation.hpp"
#include "taxon/manifest.hpp"
#include "taxon/tensor.hpp"

namespace taxon {

/// Produces the preprocessed 3 x H x W feature array for one record.
/// Implementations must be safe to call from several threads.
class FeatureSource {
 public:
  virtual ~FeatureSource() = default;
  virtual Tensor features(const ImageRecord& record) const = 0;
};

/// Reads PPM images below `data_root` and preprocesses them, caching results.
class ImageFileSource final : public FeatureSource {
 public:
  ImageFileSource(std::filesystem::path data_root, PreprocessSpec spec, bool cache = true);

  Tensor features(const ImageRecord& record) const override;
  const PreprocessSpec& spec() const { return spec_; }

 private:
  std::filesystem::path root_;
  PreprocessSpec spec_;
  bool cache_enabled_;
  mutable std::mutex mu_;
  mutable std::unordered_map<std::string, Tensor> cache_;
};

/// Features held in memory, keyed by image_id.
class MemoryFeatureSource final : public FeatureSource {
 public:
  MemoryFeatureSource() = default;
  explicit MemoryFeatureSource(std::map<std::string, Tensor> features) : features_(std::move(features)) {}

  void add(const std::string& image_id, Tensor t) { features_[image_id] = std::move(t); }
  Tensor features(const ImageRecord& record) const override;

 private:
  std::map<std::string, Tensor> features_;
};

/// Stacks features of `records` into a B x (feature shape) batch. With
/// workers > 1 the records are loaded in parallel; row order always follows
/// `records`.
Tensor load_batch(const FeatureSource& source, std::span<const ImageRecord* const> records,
                  std::size_t workers = 1);

}  // namespace taxon
