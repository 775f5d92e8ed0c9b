#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "taxon/manifest.hpp"
#include "taxon/rng.hpp"
#include "taxon/tensor.hpp"

namespace taxon::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() / fmt::format("taxon_test_{}_{}", stamp, counter++);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Manifest whose class c holds counts[c] records named "<c>_<i>".
inline DatasetManifest manifest_with_counts(const std::vector<std::size_t>& counts) {
  DatasetManifest m;
  m.num_classes = static_cast<int>(counts.size());
  m.categories = default_categories();
  for (std::size_t c = 0; c < counts.size(); ++c) m.class_names.push_back(fmt::format("class{}", c));
  for (std::size_t c = 0; c < counts.size(); ++c) {
    for (std::size_t i = 0; i < counts[c]; ++i) {
      ImageRecord r;
      r.image_id = fmt::format("{}_{}", c, i);
      r.path = r.image_id + ".ppm";
      r.class_id = static_cast<int>(c);
      r.class_name = m.class_names[c];
      r.category = m.categories[c % m.categories.size()];
      m.records.push_back(r);
    }
  }
  return m;
}

inline Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = scale * rng.uniform(-1.0, 1.0);
  return t;
}

}  // namespace taxon::testing
