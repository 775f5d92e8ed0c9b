#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace taxon {

/// The six coarse groups used by the species data.
inline const std::vector<std::string>& default_categories() {
  static const std::vector<std::string> names = {"Amphibians", "Birds",  "Fungi",
                                                 "Insects",    "Plants", "Reptiles"};
  return names;
}

struct ImageRecord {
  std::string image_id;
  std::string path;  // relative to the data root
  int class_id = 0;
  std::string class_name;
  std::string category;
  int width_px = 0;  // 0 = unknown
  int height_px = 0;

  bool operator==(const ImageRecord&) const = default;
};

struct DatasetManifest {
  std::vector<ImageRecord> records;
  int num_classes = 0;
  std::vector<std::string> class_names;
  std::vector<std::string> categories;

  bool operator==(const DatasetManifest&) const = default;

  /// Throws ValidationError on the first broken invariant.
  void validate() const;

  /// Index of a record by image_id; throws DataError when absent.
  const ImageRecord& find(const std::string& image_id) const;
};

/// Per-class image counts plus summary statistics over them.
struct ClassDistribution {
  std::map<int, std::size_t> counts;  // every class in [0, C), zeros included
  std::size_t max = 0;
  std::size_t min = 0;
  double median = 0.0;
  double std = 0.0;  // sample standard deviation, divisor C - 1

  std::size_t total() const;
};

/// Line-delimited manifest: one header object, then one object per record.
DatasetManifest load_manifest(const std::filesystem::path& source);
DatasetManifest parse_manifest(std::istream& in, const std::string& source_name = "<stream>");

void write_manifest(std::ostream& out, const DatasetManifest& m);
void save_manifest(const std::filesystem::path& dest, const DatasetManifest& m);

ClassDistribution compute_class_distribution(const DatasetManifest& m);

/// Summary statistics over an explicit list of per-class counts.
ClassDistribution distribution_from_counts(const std::vector<std::size_t>& counts);

/// Histogram of classes by image count: bin lower edge -> number of classes.
/// Bins are [lo, lo + bin_width) and cover [0, max].
std::map<std::size_t, std::size_t> export_histogram(const ClassDistribution& d,
                                                    std::size_t bin_width);

/// Writes `bin_lower,class_count` CSV.
void write_histogram_csv(std::ostream& out, const std::map<std::size_t, std::size_t>& histogram);

}  // namespace taxon
