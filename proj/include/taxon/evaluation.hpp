#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "taxon/curation.hpp"
#include "taxon/loader.hpp"
#include "taxon/manifest.hpp"
#include "taxon/modelzoo.hpp"

namespace taxon {

/// Top-k labels of one image, highest confidence (raw logit) first.
struct PredictionRecord {
  std::string image_id;
  std::vector<int> topk_labels;
  std::vector<double> topk_confidences;

  bool operator==(const PredictionRecord&) const = default;
};

/// Indices of the k largest logits in descending order; ties go to the
/// lower class id. Requires 1 <= k <= logits.size().
PredictionRecord topk_from_logits(std::span<const double> logits, int k, std::string image_id = {});

PredictionRecord predict_topk(const Model& model, const Tensor& image, int k, std::string image_id = {});

/// Fraction of predictions whose rank-1 label differs from the truth.
double top1_error(std::span<const PredictionRecord> predictions, const std::map<std::string, int>& truths);

/// Fraction of predictions whose first k labels miss the truth.
double topk_error(std::span<const PredictionRecord> predictions, const std::map<std::string, int>& truths, int k);

struct EvaluationReport {
  std::string model_id;
  std::string split_id;
  std::size_t num_images = 0;
  double top1_error = 0.0;
  std::map<int, double> topk_error;
  /// Top-1 error per coarse category (an addition to the overall metric).
  std::map<std::string, double> per_category_error;
  std::map<std::string, std::size_t> per_category_count;

  bool operator==(const EvaluationReport&) const = default;
};

struct Evaluation {
  EvaluationReport report;
  std::vector<PredictionRecord> predictions;  // with k = max(k_list)
};

/// Scores `model` on one side of `split`.
Evaluation evaluate(const Model& model, const DatasetManifest& manifest, const SplitAssignment& split,
                    SplitSide side, const FeatureSource& source, const std::vector<int>& k_list,
                    const std::string& model_id, const std::string& split_id, std::size_t batch_size = 32,
                    std::size_t workers = 1);

/// Aggregates already-made predictions into a report.
EvaluationReport summarize(std::span<const PredictionRecord> predictions, const DatasetManifest& manifest,
                           const std::vector<int>& k_list, const std::string& model_id,
                           const std::string& split_id);

/// Lines of `image_id,label1:conf1,label2:conf2,...`.
void write_predictions(std::ostream& out, std::span<const PredictionRecord> predictions);
std::vector<PredictionRecord> read_predictions(std::istream& in);

/// One CSV row per report: `model,split,num_images,top1_error,top<k>_error...`.
void write_report_csv(std::ostream& out, std::span<const EvaluationReport> reports);
std::vector<EvaluationReport> read_report_csv(std::istream& in);
/// `category,num_images,top1_error`.
void write_category_csv(std::ostream& out, const EvaluationReport& report);

/// Reports ordered by ascending top-1 error, ties by model id.
std::vector<EvaluationReport> rank_reports(std::vector<EvaluationReport> reports);

/// Markdown comparison table (rows ranked as rank_reports).
std::string render_results_table(std::vector<EvaluationReport> reports);

}  // namespace taxon
