#include "taxon/loader.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>
#include <vector>

#include <fmt/core.h>

#include "taxon/error.hpp"
#include "taxon/image.hpp"

namespace taxon {

ImageFileSource::ImageFileSource(std::filesystem::path data_root, PreprocessSpec spec, bool cache)
    : root_(std::move(data_root)), spec_(spec), cache_enabled_(cache) {
  spec_.validate();
}

Tensor ImageFileSource::features(const ImageRecord& record) const {
  if (cache_enabled_) {
    std::lock_guard lock(mu_);
    auto it = cache_.find(record.image_id);
    if (it != cache_.end()) return it->second;
  }
  Tensor t = preprocess_image(read_ppm(root_ / record.path), spec_);
  if (cache_enabled_) {
    std::lock_guard lock(mu_);
    cache_.emplace(record.image_id, t);
  }
  return t;
}

Tensor MemoryFeatureSource::features(const ImageRecord& record) const {
  auto it = features_.find(record.image_id);
  if (it == features_.end()) throw DataError(fmt::format("no features for image '{}'", record.image_id));
  return it->second;
}

Tensor load_batch(const FeatureSource& source, std::span<const ImageRecord* const> records,
                  std::size_t workers) {
  if (records.empty()) throw DataError("cannot assemble an empty batch");
  std::vector<Tensor> rows(records.size());
  workers = std::clamp<std::size_t>(workers, 1, records.size());
  if (workers == 1) {
    for (std::size_t i = 0; i < records.size(); ++i) rows[i] = source.features(*records[i]);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i; (i = next.fetch_add(1)) < records.size();) rows[i] = source.features(*records[i]);
        } catch (...) {
          errors[w] = std::current_exception();
          next = records.size();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  const auto& shape = rows.front().shape;
  std::vector<std::size_t> batch_shape{records.size()};
  batch_shape.insert(batch_shape.end(), shape.begin(), shape.end());
  Tensor batch(batch_shape);
  const std::size_t per = rows.front().numel();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].shape != shape) {
      throw ShapeError(fmt::format("image '{}' has features {} but the batch expects {}", records[i]->image_id,
                                   shape_string(rows[i].shape), shape_string(shape)));
    }
    std::copy(rows[i].data.begin(), rows[i].data.end(), batch.data.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return batch;
}

}  // namespace taxon
