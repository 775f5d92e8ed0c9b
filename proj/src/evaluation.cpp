#include "taxon/evaluation.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/core.h>
#include <fmt/format.h>

#include "taxon/error.hpp"

namespace taxon {

PredictionRecord topk_from_logits(std::span<const double> logits, int k, std::string image_id) {
  if (k < 1 || static_cast<std::size_t>(k) > logits.size()) {
    throw ArgumentError(fmt::format("k = {} outside [1, {}]", k, logits.size()));
  }
  std::vector<int> order(logits.size());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
    return logits[a] != logits[b] ? logits[a] > logits[b] : a < b;
  });
  PredictionRecord p;
  p.image_id = std::move(image_id);
  p.topk_labels.assign(order.begin(), order.begin() + k);
  for (int label : p.topk_labels) p.topk_confidences.push_back(logits[label]);
  return p;
}

PredictionRecord predict_topk(const Model& model, const Tensor& image, int k, std::string image_id) {
  std::vector<std::size_t> shape{1};
  shape.insert(shape.end(), image.shape.begin(), image.shape.end());
  Tensor batch(shape);
  batch.data = image.data;
  const Tensor logits = model.forward(batch);
  return topk_from_logits(logits.data, k, std::move(image_id));
}

double topk_error(std::span<const PredictionRecord> predictions, const std::map<std::string, int>& truths, int k) {
  if (predictions.empty()) throw DataError("no predictions to score");
  if (k < 1) throw ArgumentError(fmt::format("k must be >= 1, got {}", k));
  std::size_t wrong = 0;
  for (const auto& p : predictions) {
    auto it = truths.find(p.image_id);
    if (it == truths.end()) throw DataError(fmt::format("no ground truth for image '{}'", p.image_id));
    if (p.topk_labels.size() < static_cast<std::size_t>(k)) {
      throw ArgumentError(fmt::format("prediction for '{}' holds {} labels, fewer than k = {}", p.image_id,
                                      p.topk_labels.size(), k));
    }
    const auto end = p.topk_labels.begin() + k;
    if (std::find(p.topk_labels.begin(), end, it->second) == end) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(predictions.size());
}

double top1_error(std::span<const PredictionRecord> predictions, const std::map<std::string, int>& truths) {
  return topk_error(predictions, truths, 1);
}

EvaluationReport summarize(std::span<const PredictionRecord> predictions, const DatasetManifest& manifest,
                           const std::vector<int>& k_list, const std::string& model_id,
                           const std::string& split_id) {
  if (predictions.empty()) throw DataError("no predictions to summarize");
  std::map<std::string, int> truths;
  std::map<std::string, const ImageRecord*> by_id;
  for (const auto& r : manifest.records) by_id.emplace(r.image_id, &r);
  for (const auto& p : predictions) {
    auto it = by_id.find(p.image_id);
    if (it == by_id.end()) throw DataError(fmt::format("no ground truth for image '{}'", p.image_id));
    truths.emplace(p.image_id, it->second->class_id);
  }

  EvaluationReport report;
  report.model_id = model_id;
  report.split_id = split_id;
  report.num_images = predictions.size();
  std::set<int> ks(k_list.begin(), k_list.end());
  ks.insert(1);
  for (int k : ks) report.topk_error[k] = topk_error(predictions, truths, k);
  report.top1_error = report.topk_error.at(1);

  std::map<std::string, std::size_t> wrong;
  for (const auto& p : predictions) {
    const auto& cat = by_id.at(p.image_id)->category;
    ++report.per_category_count[cat];
    if (p.topk_labels.front() != truths.at(p.image_id)) ++wrong[cat];
  }
  for (const auto& [cat, n] : report.per_category_count) {
    report.per_category_error[cat] = static_cast<double>(wrong[cat]) / static_cast<double>(n);
  }
  return report;
}

Evaluation evaluate(const Model& model, const DatasetManifest& manifest, const SplitAssignment& split,
                    SplitSide side, const FeatureSource& source, const std::vector<int>& k_list,
                    const std::string& model_id, const std::string& split_id, std::size_t batch_size,
                    std::size_t workers) {
  if (model.num_classes != manifest.num_classes) {
    throw DataError(fmt::format("model predicts {} classes but the manifest declares {}", model.num_classes,
                                manifest.num_classes));
  }
  const auto records = select(manifest, split, side);
  if (records.empty()) throw ConfigError("the selected split side is empty");
  if (k_list.empty()) throw ArgumentError("k_list is empty");
  for (int k : k_list) {
    if (k < 1 || k > model.num_classes) {
      throw ArgumentError(fmt::format("k = {} outside [1, {}]", k, model.num_classes));
    }
  }
  const int kmax = std::max(1, *std::max_element(k_list.begin(), k_list.end()));
  batch_size = std::max<std::size_t>(batch_size, 1);

  Evaluation out;
  out.predictions.reserve(records.size());
  for (std::size_t s = 0; s < records.size(); s += batch_size) {
    const std::span<const ImageRecord* const> chunk(records.data() + s, std::min(batch_size, records.size() - s));
    const Tensor logits = model.forward(load_batch(source, chunk, workers));
    const std::size_t K = logits.shape[1];
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      out.predictions.push_back(
          topk_from_logits(std::span<const double>(logits.data.data() + b * K, K), kmax, chunk[b]->image_id));
    }
  }
  out.report = summarize(out.predictions, manifest, k_list, model_id, split_id);
  return out;
}

void write_predictions(std::ostream& out, std::span<const PredictionRecord> predictions) {
  for (const auto& p : predictions) {
    out << p.image_id;
    for (std::size_t i = 0; i < p.topk_labels.size(); ++i) {
      out << fmt::format(",{}:{}", p.topk_labels[i], p.topk_confidences[i]);
    }
    out << '\n';
  }
}

std::vector<PredictionRecord> read_predictions(std::istream& in) {
  std::vector<PredictionRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string field;
    PredictionRecord p;
    std::getline(fields, p.image_id, ',');
    while (std::getline(fields, field, ',')) {
      const auto colon = field.find(':');
      if (colon == std::string::npos) throw FormatError(fmt::format("predictions line {}: expected label:confidence", line_no));
      try {
        p.topk_labels.push_back(std::stoi(field.substr(0, colon)));
        p.topk_confidences.push_back(std::stod(field.substr(colon + 1)));
      } catch (const std::exception&) {
        throw FormatError(fmt::format("predictions line {}: bad entry '{}'", line_no, field));
      }
    }
    if (p.image_id.empty() || p.topk_labels.empty()) {
      throw FormatError(fmt::format("predictions line {}: empty record", line_no));
    }
    out.push_back(std::move(p));
  }
  return out;
}

namespace {

std::set<int> union_of_ks(std::span<const EvaluationReport> reports) {
  std::set<int> ks;
  for (const auto& r : reports) {
    for (const auto& [k, e] : r.topk_error) ks.insert(k);
  }
  ks.insert(1);
  return ks;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream s(line);
  while (std::getline(s, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

void write_report_csv(std::ostream& out, std::span<const EvaluationReport> reports) {
  const auto ks = union_of_ks(reports);
  out << "model,split,num_images";
  for (int k : ks) out << ",top" << k << "_error";
  out << '\n';
  for (const auto& r : reports) {
    out << r.model_id << ',' << r.split_id << ',' << r.num_images;
    for (int k : ks) {
      auto it = r.topk_error.find(k);
      out << ',' << (it == r.topk_error.end() ? std::string() : fmt::format("{}", it->second));
    }
    out << '\n';
  }
}

std::vector<EvaluationReport> read_report_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("report file is empty");
  const auto header = split_csv(line);
  if (header.size() < 4 || header[0] != "model" || header[1] != "split" || header[2] != "num_images") {
    throw FormatError("report header must start with 'model,split,num_images'");
  }
  std::vector<int> ks;
  for (std::size_t i = 3; i < header.size(); ++i) {
    const auto& h = header[i];
    if (h.size() < 10 || h.rfind("top", 0) != 0 || h.substr(h.size() - 6) != "_error") {
      throw FormatError(fmt::format("unexpected report column '{}'", h));
    }
    ks.push_back(std::stoi(h.substr(3, h.size() - 9)));
  }
  std::vector<EvaluationReport> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) throw FormatError(fmt::format("report row '{}' has the wrong width", line));
    EvaluationReport r;
    r.model_id = cells[0];
    r.split_id = cells[1];
    try {
      r.num_images = std::stoull(cells[2]);
      for (std::size_t i = 0; i < ks.size(); ++i) {
        if (!cells[3 + i].empty()) r.topk_error[ks[i]] = std::stod(cells[3 + i]);
      }
    } catch (const std::exception&) {
      throw FormatError(fmt::format("report row '{}' has a non-numeric field", line));
    }
    if (!r.topk_error.contains(1)) throw FormatError(fmt::format("report row '{}' lacks top1_error", line));
    r.top1_error = r.topk_error.at(1);
    out.push_back(std::move(r));
  }
  return out;
}

void write_category_csv(std::ostream& out, const EvaluationReport& report) {
  out << "category,num_images,top1_error\n";
  for (const auto& [cat, n] : report.per_category_count) {
    out << fmt::format("{},{},{}\n", cat, n, report.per_category_error.at(cat));
  }
}

std::vector<EvaluationReport> rank_reports(std::vector<EvaluationReport> reports) {
  std::stable_sort(reports.begin(), reports.end(), [](const EvaluationReport& a, const EvaluationReport& b) {
    if (a.top1_error != b.top1_error) return a.top1_error < b.top1_error;
    return a.model_id < b.model_id;
  });
  return reports;
}

std::string render_results_table(std::vector<EvaluationReport> reports) {
  reports = rank_reports(std::move(reports));
  const auto ks = union_of_ks(reports);
  std::string out = "| Model Architecture | Split | Images | Validation Error |";
  std::string rule = "|---|---|---:|---:|";
  for (int k : ks) {
    if (k == 1) continue;
    out += fmt::format(" Top-{} Error |", k);
    rule += "---:|";
  }
  out += "\n" + rule + "\n";
  for (const auto& r : reports) {
    out += fmt::format("| {} | {} | {} | {:.4f} |", r.model_id, r.split_id, r.num_images, r.top1_error);
    for (int k : ks) {
      if (k == 1) continue;
      auto it = r.topk_error.find(k);
      out += it == r.topk_error.end() ? std::string(" - |") : fmt::format(" {:.4f} |", it->second);
    }
    out += '\n';
  }
  return out;
}

}  // namespace taxon
