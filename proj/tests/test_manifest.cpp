#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "taxon/error.hpp"
#include "taxon/manifest.hpp"
#include "test_util.hpp"

using namespace taxon;
using taxon::testing::manifest_with_counts;

namespace {

const char* kThreeRecords =
    R"({"num_classes": 2, "class_names": ["frog", "owl"], "categories": ["Amphibians", "Birds"]})"
    "\n"
    R"({"image_id": "a", "path": "x/a.jpg", "class_id": 0, "class_name": "frog", "category": "Amphibians", "width_px": 800, "height_px": 600})"
    "\n"
    R"({"image_id": "b", "path": "x/b.jpg", "class_id": 1, "class_name": "owl", "category": "Birds"})"
    "\n"
    R"({"image_id": "c", "path": "x/c.jpg", "class_id": 1, "class_name": "owl", "category": "Birds", "width_px": 0, "height_px": 0})"
    "\n";

DatasetManifest parse(const std::string& text) {
  std::istringstream in(text);
  return parse_manifest(in, "test");
}

// Brute-force oracle: walk every possible bin lower edge and count members.
std::map<std::size_t, std::size_t> brute_histogram(const std::vector<std::size_t>& counts, std::size_t w) {
  std::map<std::size_t, std::size_t> out;
  const std::size_t top = *std::max_element(counts.begin(), counts.end());
  for (std::size_t lo = 0; lo <= top; lo += w) {
    std::size_t n = 0;
    for (auto c : counts) n += (c >= lo && c < lo + w) ? 1 : 0;
    if (n) out[lo] = n;
  }
  return out;
}

}  // namespace

TEST_CASE("load: three records, two classes") {
  const auto m = parse(kThreeRecords);
  CHECK(m.num_classes == 2);
  REQUIRE(m.records.size() == 3);
  CHECK(m.records[0].image_id == "a");
  CHECK(m.records[0].width_px == 800);
  CHECK(m.records[1].width_px == 0);
  CHECK(m.records[2].image_id == "c");
}

TEST_CASE("load: write then parse preserves the manifest") {
  const auto m = parse(kThreeRecords);
  std::ostringstream out;
  write_manifest(out, m);
  CHECK(parse(out.str()) == m);
}

TEST_CASE("load: validation failures") {
  SUBCASE("no classes") {
    CHECK_THROWS_AS(parse(R"({"num_classes": 0, "class_names": []})"), ValidationError);
  }
  SUBCASE("class id out of range names the record") {
    const std::string text =
        R"({"num_classes": 3, "class_names": ["a","b","c"]})"
        "\n"
        R"({"image_id": "bad-one", "path": "p", "class_id": 5, "category": "Birds"})";
    try {
      parse(text);
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("bad-one") != std::string::npos);
    }
  }
  SUBCASE("duplicate image id") {
    const std::string text =
        R"({"num_classes": 1, "class_names": ["a"]})"
        "\n"
        R"({"image_id": "x", "path": "p", "class_id": 0, "category": "Birds"})"
        "\n"
        R"({"image_id": "x", "path": "q", "class_id": 0, "category": "Birds"})";
    CHECK_THROWS_AS(parse(text), ValidationError);
  }
  SUBCASE("undeclared category") {
    const std::string text =
        R"({"num_classes": 1, "class_names": ["a"], "categories": ["Birds"]})"
        "\n"
        R"({"image_id": "x", "path": "p", "class_id": 0, "category": "Fungi"})";
    CHECK_THROWS_AS(parse(text), ValidationError);
  }
  SUBCASE("duplicate class names") {
    CHECK_THROWS_AS(parse(R"({"num_classes": 2, "class_names": ["a","a"]})"), ValidationError);
  }
}

TEST_CASE("load: format errors name the line") {
  const std::string text =
      R"({"num_classes": 1, "class_names": ["a"]})"
      "\n"
      "not json at all\n";
  try {
    parse(text);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("test:2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse(""), FormatError);
  CHECK_THROWS_AS(parse(R"({"num_classes": 1, "class_names": ["a"]})"
                        "\n"
                        R"({"image_id": "x", "class_id": 0, "category": "Birds"})"),
                  FormatError);
}

TEST_CASE("distribution: {5, 2, 9}") {
  const auto d = compute_class_distribution(manifest_with_counts({5, 2, 9}));
  CHECK(d.max == 9);
  CHECK(d.min == 2);
  CHECK(d.median == 5.0);
  // sqrt(((5-16/3)^2 + (2-16/3)^2 + (9-16/3)^2) / 2)
  const double mean = 16.0 / 3.0;
  const double oracle =
      std::sqrt((std::pow(5 - mean, 2) + std::pow(2 - mean, 2) + std::pow(9 - mean, 2)) / 2.0);
  CHECK(d.std == doctest::Approx(oracle).epsilon(1e-12));
  CHECK(d.std == doctest::Approx(3.5119).epsilon(1e-4));
}

TEST_CASE("distribution: single class and even-length median") {
  const auto one = compute_class_distribution(manifest_with_counts({7}));
  CHECK(one.max == 7);
  CHECK(one.min == 7);
  CHECK(one.median == 7.0);
  CHECK(one.std == 0.0);

  const auto even = compute_class_distribution(manifest_with_counts({1, 4, 6, 10}));
  CHECK(even.median == 5.0);
}

TEST_CASE("distribution: zero-record classes are kept with count 0") {
  auto m = manifest_with_counts({3, 0, 2});
  const auto d = compute_class_distribution(m);
  CHECK(d.counts.size() == 3);
  CHECK(d.counts.at(1) == 0);
  CHECK(d.min == 0);
}

TEST_CASE("distribution: empty manifest") {
  auto m = manifest_with_counts({0, 0});
  CHECK_THROWS_AS(compute_class_distribution(m), DataError);
}

TEST_CASE("distribution: conservation and permutation invariance") {
  Rng rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<std::size_t> counts(1 + rng.below(30));
    for (auto& c : counts) c = rng.below(50);
    counts[0] += 1;
    auto m = manifest_with_counts(counts);
    const auto d = compute_class_distribution(m);
    CHECK(d.total() == m.records.size());
    CHECK(static_cast<double>(d.max) >= d.median);
    CHECK(d.median >= static_cast<double>(d.min));
    CHECK(d.std >= 0.0);

    rng.shuffle(std::span<ImageRecord>(m.records));
    const auto shuffled = compute_class_distribution(m);
    CHECK(shuffled.counts == d.counts);
    CHECK(shuffled.median == d.median);
    CHECK(shuffled.std == d.std);
  }
}

TEST_CASE("histogram: examples") {
  const auto d = distribution_from_counts({5, 12, 14});
  CHECK(export_histogram(d, 10) == std::map<std::size_t, std::size_t>{{0, 1}, {10, 2}});
  CHECK(export_histogram(d, 100) == std::map<std::size_t, std::size_t>{{0, 3}});
  CHECK(export_histogram(distribution_from_counts({10}), 10) == std::map<std::size_t, std::size_t>{{10, 1}});
  CHECK_THROWS_AS(export_histogram(d, 0), ArgumentError);
}

TEST_CASE("histogram: matches brute-force binning and sums to the class count") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::size_t> counts(1 + rng.below(40));
    for (auto& c : counts) c = rng.below(600);
    const std::size_t w = 1 + rng.below(120);
    const auto h = export_histogram(distribution_from_counts(counts), w);
    CHECK(h == brute_histogram(counts, w));
    std::size_t total = 0;
    for (const auto& [lo, n] : h) total += n;
    CHECK(total == counts.size());
  }
}

TEST_CASE("histogram: CSV layout") {
  std::ostringstream out;
  write_histogram_csv(out, {{0, 1}, {10, 2}});
  CHECK(out.str() == "bin_lower,class_count\n0,1\n10,2\n");
}
