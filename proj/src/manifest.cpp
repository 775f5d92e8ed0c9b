#include "taxon/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "taxon/error.hpp"

namespace taxon {

using nlohmann::json;

void DatasetManifest::validate() const {
  if (num_classes <= 0) {
    throw ValidationError(fmt::format("manifest declares {} classes; at least one is required",
                                      num_classes));
  }
  if (class_names.size() != static_cast<std::size_t>(num_classes)) {
    throw ValidationError(fmt::format("class_names has {} entries but num_classes is {}",
                                      class_names.size(), num_classes));
  }
  std::unordered_set<std::string> seen_names;
  for (const auto& n : class_names) {
    if (!seen_names.insert(n).second) {
      throw ValidationError(fmt::format("duplicate class name '{}'", n));
    }
  }
  if (categories.empty()) throw ValidationError("manifest declares no categories");
  const std::set<std::string> category_set(categories.begin(), categories.end());
  if (category_set.size() != categories.size()) {
    throw ValidationError("duplicate category name in manifest header");
  }

  std::unordered_set<std::string> seen_ids;
  seen_ids.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.image_id.empty()) throw ValidationError(fmt::format("record {} has an empty image_id", i));
    if (r.class_id < 0 || r.class_id >= num_classes) {
      throw ValidationError(fmt::format("record '{}' has class_id {} outside [0, {})", r.image_id,
                                        r.class_id, num_classes));
    }
    if (!r.class_name.empty() && r.class_name != class_names[r.class_id]) {
      throw ValidationError(fmt::format("record '{}' names class '{}' but class {} is '{}'",
                                        r.image_id, r.class_name, r.class_id,
                                        class_names[r.class_id]));
    }
    if (!category_set.contains(r.category)) {
      throw ValidationError(
          fmt::format("record '{}' has undeclared category '{}'", r.image_id, r.category));
    }
    if (r.width_px < 0 || r.height_px < 0) {
      throw ValidationError(fmt::format("record '{}' has negative dimensions", r.image_id));
    }
    if (!seen_ids.insert(r.image_id).second) {
      throw ValidationError(fmt::format("duplicate image_id '{}'", r.image_id));
    }
  }
}

const ImageRecord& DatasetManifest::find(const std::string& image_id) const {
  auto it = std::find_if(records.begin(), records.end(),
                         [&](const ImageRecord& r) { return r.image_id == image_id; });
  if (it == records.end()) throw DataError(fmt::format("image_id '{}' not in manifest", image_id));
  return *it;
}

std::size_t ClassDistribution::total() const {
  std::size_t n = 0;
  for (const auto& [cls, c] : counts) n += c;
  return n;
}

namespace {

template <typename T>
T required(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw FormatError(fmt::format("{}: missing key '{}'", where, key));
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw FormatError(fmt::format("{}: key '{}' has the wrong type", where, key));
  }
}

template <typename T>
T optional(const json& obj, const char* key, T fallback, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw FormatError(fmt::format("{}: key '{}' has the wrong type", where, key));
  }
}

bool blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

DatasetManifest parse_manifest(std::istream& in, const std::string& source_name) {
  DatasetManifest m;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    const std::string where = fmt::format("{}:{}", source_name, line_no);
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError(fmt::format("{}: not a JSON object ({})", where, e.what()));
    }
    if (!obj.is_object()) throw FormatError(fmt::format("{}: expected a JSON object", where));

    if (!have_header) {
      m.num_classes = required<int>(obj, "num_classes", where);
      m.class_names = required<std::vector<std::string>>(obj, "class_names", where);
      m.categories = optional<std::vector<std::string>>(obj, "categories", default_categories(), where);
      have_header = true;
      continue;
    }
    ImageRecord r;
    r.image_id = required<std::string>(obj, "image_id", where);
    r.path = required<std::string>(obj, "path", where);
    r.class_id = required<int>(obj, "class_id", where);
    r.class_name = optional<std::string>(obj, "class_name", "", where);
    r.category = required<std::string>(obj, "category", where);
    r.width_px = optional<int>(obj, "width_px", 0, where);
    r.height_px = optional<int>(obj, "height_px", 0, where);
    m.records.push_back(std::move(r));
  }
  if (!have_header) throw FormatError(fmt::format("{}: empty manifest (no header line)", source_name));
  m.validate();
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& source) {
  std::ifstream in(source);
  if (!in) throw IoError(fmt::format("cannot open manifest '{}'", source.string()));
  return parse_manifest(in, source.string());
}

void write_manifest(std::ostream& out, const DatasetManifest& m) {
  nlohmann::ordered_json header = {{"num_classes", m.num_classes},
                 {"class_names", m.class_names},
                 {"categories", m.categories}};
  out << header.dump() << '\n';
  for (const auto& r : m.records) {
    nlohmann::ordered_json obj = {{"image_id", r.image_id}, {"path", r.path},           {"class_id", r.class_id},
                {"class_name", r.class_name}, {"category", r.category}, {"width_px", r.width_px},
                {"height_px", r.height_px}};
    out << obj.dump() << '\n';
  }
}

void save_manifest(const std::filesystem::path& dest, const DatasetManifest& m) {
  std::ofstream out(dest);
  if (!out) throw IoError(fmt::format("cannot write manifest '{}'", dest.string()));
  write_manifest(out, m);
}

ClassDistribution distribution_from_counts(const std::vector<std::size_t>& counts) {
  if (counts.empty()) throw DataError("class distribution of zero classes");
  ClassDistribution d;
  for (std::size_t i = 0; i < counts.size(); ++i) d.counts[static_cast<int>(i)] = counts[i];

  std::vector<std::size_t> sorted = counts;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  d.min = sorted.front();
  d.max = sorted.back();
  d.median = n % 2 == 1 ? static_cast<double>(sorted[n / 2])
                        : 0.5 * (static_cast<double>(sorted[n / 2 - 1]) +
                                 static_cast<double>(sorted[n / 2]));
  if (n < 2) {
    d.std = 0.0;
  } else {
    double mean = 0.0;
    for (auto c : sorted) mean += static_cast<double>(c);
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (auto c : sorted) ss += (static_cast<double>(c) - mean) * (static_cast<double>(c) - mean);
    d.std = std::sqrt(ss / static_cast<double>(n - 1));
  }
  return d;
}

ClassDistribution compute_class_distribution(const DatasetManifest& m) {
  if (m.records.empty()) throw DataError("cannot compute class statistics of an empty manifest");
  std::vector<std::size_t> counts(static_cast<std::size_t>(m.num_classes), 0);
  for (const auto& r : m.records) ++counts.at(static_cast<std::size_t>(r.class_id));
  return distribution_from_counts(counts);
}

std::map<std::size_t, std::size_t> export_histogram(const ClassDistribution& d,
                                                    std::size_t bin_width) {
  if (bin_width == 0) throw ArgumentError("histogram bin width must be at least 1");
  std::map<std::size_t, std::size_t> bins;
  for (const auto& [cls, count] : d.counts) ++bins[(count / bin_width) * bin_width];
  return bins;
}

void write_histogram_csv(std::ostream& out, const std::map<std::size_t, std::size_t>& histogram) {
  out << "bin_lower,class_count\n";
  for (const auto& [lo, n] : histogram) out << lo << ',' << n << '\n';
}

}  // namespace taxon
