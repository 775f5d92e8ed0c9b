#include "taxon/curation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/core.h>
#include <fmt/format.h>

#include "taxon/error.hpp"
#include "taxon/rng.hpp"

namespace taxon {

SplitAssignment split(const DatasetManifest& m, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ArgumentError(fmt::format("train fraction {} is outside (0, 1)", train_fraction));
  }
  std::map<int, std::vector<std::string>> by_class;
  for (const auto& r : m.records) by_class[r.class_id].push_back(r.image_id);

  SplitAssignment out;
  out.seed = seed;
  out.train_fraction = train_fraction;
  for (auto& [cls, ids] : by_class) {
    std::sort(ids.begin(), ids.end());
    Rng rng(derive_seed(seed, {seed_key("split"), static_cast<std::uint64_t>(cls)}));
    rng.shuffle(std::span<std::string>(ids));
    const std::size_t n = ids.size();
    auto n_train = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(n)));
    if (n >= 2 && n_train >= n) n_train = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      (i < n_train ? out.train_ids : out.val_ids).insert(ids[i]);
    }
  }
  return out;
}

std::vector<const ImageRecord*> select(const DatasetManifest& m, const SplitAssignment& s,
                                       SplitSide side) {
  const auto& ids = side == SplitSide::kTrain ? s.train_ids : s.val_ids;
  std::vector<const ImageRecord*> out;
  for (const auto& r : m.records) {
    if (ids.contains(r.image_id)) out.push_back(&r);
  }
  return out;
}

void write_split(std::ostream& out, const SplitAssignment& s) {
  out << "#seed=" << s.seed << '\n';
  out << "#train_fraction=" << fmt::format("{}", s.train_fraction) << '\n';
  out << "image_id,side\n";
  // Merge two sorted sets so the rows come out in image_id order.
  auto t = s.train_ids.begin();
  auto v = s.val_ids.begin();
  while (t != s.train_ids.end() || v != s.val_ids.end()) {
    if (v == s.val_ids.end() || (t != s.train_ids.end() && *t < *v)) {
      out << *t++ << ",train\n";
    } else {
      out << *v++ << ",val\n";
    }
  }
}

void save_split(const std::filesystem::path& dest, const SplitAssignment& s) {
  std::ofstream out(dest, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write split file '{}'", dest.string()));
  write_split(out, s);
}

SplitAssignment parse_split(std::istream& in, const std::string& source_name) {
  SplitAssignment s;
  bool have_seed = false, have_fraction = false, have_columns = false;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = fmt::format("{}:{}", source_name, line_no);
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(1, eq - 1);
      const std::string value = line.substr(eq + 1);
      try {
        if (key == "seed") {
          s.seed = std::stoull(value);
          have_seed = true;
        } else if (key == "train_fraction") {
          s.train_fraction = std::stod(value);
          have_fraction = true;
        }
      } catch (const std::exception&) {
        throw FormatError(fmt::format("{}: bad value for '{}'", where, key));
      }
      continue;
    }
    if (!have_columns) {
      if (line != "image_id,side") throw FormatError(fmt::format("{}: expected header 'image_id,side'", where));
      have_columns = true;
      continue;
    }
    const auto comma = line.rfind(',');
    if (comma == std::string::npos || comma == 0) throw FormatError(fmt::format("{}: expected 'image_id,side'", where));
    const std::string id = line.substr(0, comma);
    const std::string side = line.substr(comma + 1);
    bool fresh;
    if (side == "train") {
      fresh = !s.val_ids.contains(id) && s.train_ids.insert(id).second;
    } else if (side == "val") {
      fresh = !s.train_ids.contains(id) && s.val_ids.insert(id).second;
    } else {
      throw FormatError(fmt::format("{}: side must be 'train' or 'val', got '{}'", where, side));
    }
    if (!fresh) throw ValidationError(fmt::format("{}: image_id '{}' listed twice", where, id));
  }
  if (!have_columns || !have_seed || !have_fraction) {
    throw FormatError(fmt::format("{}: incomplete split file", source_name));
  }
  return s;
}

SplitAssignment load_split(const std::filesystem::path& source) {
  std::ifstream in(source, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open split file '{}'", source.string()));
  return parse_split(in, source.string());
}

PruneResult prune_by_class_count(const DatasetManifest& m, const SplitAssignment& s,
                                 std::size_t threshold, PruneOptions options) {
  if (threshold < 1) throw ArgumentError("prune threshold must be at least 1");

  PruneReport report;
  report.threshold = threshold;
  report.train_counts.assign(static_cast<std::size_t>(m.num_classes), 0);
  for (const auto& r : m.records) {
    if (s.is_train(r.image_id)) {
      ++report.train_counts[static_cast<std::size_t>(r.class_id)];
    } else if (s.is_val(r.image_id)) {
      ++report.val_image_count;
    } else {
      throw DataError(fmt::format("image_id '{}' is in neither side of the split", r.image_id));
    }
  }

  std::vector<bool> removed(report.train_counts.size(), false);
  for (std::size_t c = 0; c < report.train_counts.size(); ++c) {
    if (report.train_counts[c] < threshold) {
      removed[c] = true;
      report.removed_class_ids.push_back(static_cast<int>(c));
    }
  }
  report.label_space_reduced = options.drop_pruned_classes && !report.removed_class_ids.empty();

  // Old class id -> new class id (identity unless the label space shrinks).
  std::vector<int> remap(removed.size());
  PruneResult result;
  result.manifest.categories = m.categories;
  if (options.drop_pruned_classes) {
    int next = 0;
    for (std::size_t c = 0; c < removed.size(); ++c) {
      remap[c] = removed[c] ? -1 : next++;
      if (!removed[c]) result.manifest.class_names.push_back(m.class_names[c]);
    }
    result.manifest.num_classes = next;
  } else {
    for (std::size_t c = 0; c < removed.size(); ++c) remap[c] = static_cast<int>(c);
    result.manifest.class_names = m.class_names;
    result.manifest.num_classes = m.num_classes;
  }

  result.split.seed = s.seed;
  result.split.train_fraction = s.train_fraction;
  for (const auto& r : m.records) {
    const bool train = s.is_train(r.image_id);
    const bool pruned_class = removed[static_cast<std::size_t>(r.class_id)];
    if (train && pruned_class) {
      ++report.removed_image_count;
      continue;
    }
    if (!train && pruned_class) {
      ++report.val_images_in_removed_classes;
      if (options.drop_pruned_classes) continue;
    }
    if (train) ++report.retained_image_count;
    ImageRecord copy = r;
    copy.class_id = remap[static_cast<std::size_t>(r.class_id)];
    (train ? result.split.train_ids : result.split.val_ids).insert(copy.image_id);
    result.manifest.records.push_back(std::move(copy));
  }
  if (result.manifest.num_classes > 0) result.manifest.validate();
  result.report = std::move(report);
  return result;
}

void write_prune_report(std::ostream& out, const PruneReport& r) {
  out << "threshold=" << r.threshold << '\n';
  out << "removed_class_count=" << r.removed_class_ids.size() << '\n';
  out << "removed_class_ids=" << fmt::format("{}", fmt::join(r.removed_class_ids, ",")) << '\n';
  out << "removed_image_count=" << r.removed_image_count << '\n';
  out << "retained_image_count=" << r.retained_image_count << '\n';
  out << "val_image_count=" << r.val_image_count << '\n';
  out << "val_images_in_removed_classes=" << r.val_images_in_removed_classes << '\n';
  out << "label_space_reduced=" << (r.label_space_reduced ? "true" : "false") << '\n';
}

void write_prune_classes_csv(std::ostream& out, const PruneReport& r) {
  out << "class_id,train_count,removed\n";
  for (std::size_t c = 0; c < r.train_counts.size(); ++c) {
    out << c << ',' << r.train_counts[c] << ',' << (r.train_counts[c] < r.threshold ? 1 : 0) << '\n';
  }
}

void PreprocessSpec::validate() const {
  if (target_height <= 0 || target_width <= 0) {
    throw ArgumentError(fmt::format("preprocess target {}x{} must be positive", target_height, target_width));
  }
  for (double s : normalize_std) {
    if (!(s > 0.0)) throw ArgumentError("normalization std components must be > 0");
  }
}

namespace {

struct Tap {
  int lo;
  int hi;
  double frac;
};

std::vector<Tap> resize_taps(int in, int out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int lo = static_cast<int>(std::floor(src));
    taps[i] = {lo, std::min(lo + 1, in - 1), src - lo};
  }
  return taps;
}

}  // namespace

Tensor preprocess_image(const RawImage& raw, const PreprocessSpec& spec) {
  spec.validate();
  if (raw.channels != 3) {
    throw FormatError(fmt::format("expected a 3-channel image, got {} channels", raw.channels));
  }
  if (raw.height < 1 || raw.width < 1 ||
      raw.pixels.size() != static_cast<std::size_t>(raw.height) * raw.width * 3) {
    throw FormatError("image buffer does not match its declared dimensions");
  }
  const int out_h = spec.target_height;
  const int out_w = spec.target_width;
  const auto xt = resize_taps(raw.width, out_w);
  const auto yt = resize_taps(raw.height, out_h);

  // Horizontal pass into a (in_h x out_w) buffer per channel, then vertical.
  Tensor out({3, static_cast<std::size_t>(out_h), static_cast<std::size_t>(out_w)});
  std::vector<double> rows(static_cast<std::size_t>(raw.height) * out_w);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < raw.height; ++y) {
      for (int x = 0; x < out_w; ++x) {
        const auto& t = xt[x];
        const double a = raw.at(y, t.lo, c);
        const double b = raw.at(y, t.hi, c);
        rows[static_cast<std::size_t>(y) * out_w + x] = a + (b - a) * t.frac;
      }
    }
    const double mean = spec.normalize_mean[c];
    const double stddev = spec.normalize_std[c];
    double* plane = out.data.data() + static_cast<std::size_t>(c) * out_h * out_w;
    for (int y = 0; y < out_h; ++y) {
      const auto& t = yt[y];
      const double* top = rows.data() + static_cast<std::size_t>(t.lo) * out_w;
      const double* bottom = rows.data() + static_cast<std::size_t>(t.hi) * out_w;
      for (int x = 0; x < out_w; ++x) {
        const double v = top[x] + (bottom[x] - top[x]) * t.frac;
        plane[static_cast<std::size_t>(y) * out_w + x] = (v / 255.0 - mean) / stddev;
      }
    }
  }
  return out;
}

}  // namespace taxon
