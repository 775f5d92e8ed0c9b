#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "taxon/image.hpp"
#include "taxon/manifest.hpp"

namespace taxon {

/// Seeded long-tailed synthetic species data. Class c receives
/// max(min_images, round(max_images * (c + 1)^-tail_exponent)) images; every
/// class has a random visual prototype (two colours plus an oriented
/// stripe pattern) and each image is a jittered, noisy rendering of it.
struct SynthConfig {
  int num_classes = 20;
  int max_images = 60;
  int min_images = 4;
  double tail_exponent = 1.0;
  int image_size = 32;
  std::uint64_t seed = 0;
  double noise = 0.08;

  void validate() const;
};

std::vector<std::size_t> long_tail_counts(const SynthConfig& cfg);

/// Records reference `images/c<class>/<image_id>.ppm`; categories cycle
/// through the six defaults by class id.
DatasetManifest make_synthetic_manifest(const SynthConfig& cfg);

RawImage render_synthetic_image(const SynthConfig& cfg, int class_id, int index);

/// Writes manifest.jsonl and every image below `out_dir`; returns the manifest.
DatasetManifest generate_synthetic_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir,
                                           bool write_images = true);

}  // namespace taxon
