#include "taxon/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/core.h>

#include "taxon/error.hpp"
#include "taxon/rng.hpp"

namespace taxon {

void SynthConfig::validate() const {
  if (num_classes < 1) throw ArgumentError("synthetic data needs at least one class");
  if (max_images < 1 || min_images < 1 || min_images > max_images) {
    throw ArgumentError(fmt::format("need 1 <= min_images ({}) <= max_images ({})", min_images, max_images));
  }
  if (tail_exponent < 0.0) throw ArgumentError("tail exponent must be >= 0");
  if (image_size < 2) throw ArgumentError("image size must be >= 2");
}

std::vector<std::size_t> long_tail_counts(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<std::size_t> counts(static_cast<std::size_t>(cfg.num_classes));
  for (int c = 0; c < cfg.num_classes; ++c) {
    const double n = static_cast<double>(cfg.max_images) * std::pow(c + 1.0, -cfg.tail_exponent);
    counts[c] = static_cast<std::size_t>(std::max<long>(cfg.min_images, std::lround(n)));
  }
  return counts;
}

DatasetManifest make_synthetic_manifest(const SynthConfig& cfg) {
  const auto counts = long_tail_counts(cfg);
  DatasetManifest m;
  m.num_classes = cfg.num_classes;
  m.categories = default_categories();
  for (int c = 0; c < cfg.num_classes; ++c) m.class_names.push_back(fmt::format("species_{:04d}", c));
  for (int c = 0; c < cfg.num_classes; ++c) {
    for (std::size_t i = 0; i < counts[c]; ++i) {
      ImageRecord r;
      r.image_id = fmt::format("c{:04d}_{:05d}", c, i);
      r.path = fmt::format("images/c{:04d}/{}.ppm", c, r.image_id);
      r.class_id = c;
      r.class_name = m.class_names[c];
      r.category = m.categories[static_cast<std::size_t>(c) % m.categories.size()];
      r.width_px = cfg.image_size;
      r.height_px = cfg.image_size;
      m.records.push_back(std::move(r));
    }
  }
  return m;
}

RawImage render_synthetic_image(const SynthConfig& cfg, int class_id, int index) {
  Rng proto(derive_seed(cfg.seed, {seed_key("prototype"), static_cast<std::uint64_t>(class_id)}));
  double fg[3], bg[3];
  for (double& v : fg) v = proto.uniform(0.1, 0.9);
  for (double& v : bg) v = proto.uniform(0.1, 0.9);
  const double angle = proto.uniform(0.0, std::numbers::pi);
  const double freq = proto.uniform(1.0, 4.0);

  Rng jitter(derive_seed(cfg.seed, {seed_key("image"), static_cast<std::uint64_t>(class_id),
                                    static_cast<std::uint64_t>(index)}));
  const double phase = jitter.uniform(0.0, 2.0 * std::numbers::pi);
  const double theta = angle + jitter.uniform(-0.15, 0.15);
  const double gain = jitter.uniform(0.9, 1.1);
  const double ct = std::cos(theta), st = std::sin(theta);

  RawImage img;
  img.height = img.width = cfg.image_size;
  img.channels = 3;
  img.pixels.resize(static_cast<std::size_t>(cfg.image_size) * cfg.image_size * 3);
  for (int y = 0; y < cfg.image_size; ++y) {
    for (int x = 0; x < cfg.image_size; ++x) {
      const double u = static_cast<double>(x) / cfg.image_size;
      const double v = static_cast<double>(y) / cfg.image_size;
      const double s = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * freq * (u * ct + v * st) + phase);
      for (int c = 0; c < 3; ++c) {
        const double value = gain * (fg[c] * s + bg[c] * (1.0 - s)) + cfg.noise * jitter.normal();
        img.pixels[(static_cast<std::size_t>(y) * cfg.image_size + x) * 3 + c] =
            static_cast<std::uint8_t>(std::clamp(std::lround(value * 255.0), 0L, 255L));
      }
    }
  }
  return img;
}

DatasetManifest generate_synthetic_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir,
                                           bool write_images) {
  auto m = make_synthetic_manifest(cfg);
  std::filesystem::create_directories(out_dir);
  if (write_images) {
    std::vector<int> index_in_class(static_cast<std::size_t>(cfg.num_classes), 0);
    for (const auto& r : m.records) {
      const auto path = out_dir / r.path;
      std::filesystem::create_directories(path.parent_path());
      write_ppm(path, render_synthetic_image(cfg, r.class_id, index_in_class[r.class_id]++));
    }
  }
  save_manifest(out_dir / "manifest.jsonl", m);
  return m;
}

}  // namespace taxon
