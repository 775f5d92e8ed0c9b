#include <sstream>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "taxon/commands.hpp"
#include "taxon/curation.hpp"
#include "taxon/error.hpp"
#include "taxon/evaluation.hpp"
#include "taxon/loss.hpp"
#include "taxon/manifest.hpp"
#include "taxon/modelzoo.hpp"
#include "taxon/synth.hpp"
#include "taxon/training.hpp"

namespace py = pybind11;
using namespace pybind11::literals;
using namespace taxon;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const DoubleArray& a) {
  Tensor t;
  for (py::ssize_t i = 0; i < a.ndim(); ++i) t.shape.push_back(static_cast<std::size_t>(a.shape(i)));
  t.data.assign(a.data(), a.data() + a.size());
  return t;
}

py::array_t<double> to_array(const Tensor& t) {
  py::array_t<double> out(std::vector<py::ssize_t>(t.shape.begin(), t.shape.end()));
  std::copy(t.data.begin(), t.data.end(), out.mutable_data());
  return out;
}

/// HWC uint8 array -> normalized CHW float array.
py::array_t<double> preprocess(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& image,
                               const PreprocessSpec& spec) {
  if (image.ndim() != 3 || image.shape(2) != 3) throw ShapeError("expected an H x W x 3 uint8 image");
  RawImage raw;
  raw.height = static_cast<int>(image.shape(0));
  raw.width = static_cast<int>(image.shape(1));
  raw.pixels.assign(image.data(), image.data() + image.size());
  return to_array(preprocess_image(raw, spec));
}

Model make_model(const std::string& arch, int num_classes, std::size_t input_size, const std::string& init,
                 const std::string& freeze, std::optional<std::filesystem::path> weights, std::uint64_t seed) {
  return build_model(make_arch(arch, input_size, input_size), num_classes, {parse_init_mode(init), std::move(weights)},
                     {parse_freeze_mode(freeze)}, seed);
}

py::tuple cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return py::make_tuple(code, out.str(), err.str());
}

}  // namespace

PYBIND11_MODULE(_taxon, m) {
  m.doc() = "Long-tailed species classification toolkit";

  auto base = py::register_exception<Error>(m, "TaxonError", PyExc_ValueError);
  py::register_exception<ArgumentError>(m, "ArgumentError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<RegistryError>(m, "RegistryError", base.ptr());
  py::register_exception<LoadError>(m, "LoadError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  // manifest
  py::class_<ImageRecord>(m, "ImageRecord")
      .def(py::init<>())
      .def_readwrite("image_id", &ImageRecord::image_id)
      .def_readwrite("path", &ImageRecord::path)
      .def_readwrite("class_id", &ImageRecord::class_id)
      .def_readwrite("class_name", &ImageRecord::class_name)
      .def_readwrite("category", &ImageRecord::category)
      .def_readwrite("width_px", &ImageRecord::width_px)
      .def_readwrite("height_px", &ImageRecord::height_px);

  py::class_<DatasetManifest>(m, "DatasetManifest")
      .def(py::init<>())
      .def_readwrite("records", &DatasetManifest::records)
      .def_readwrite("num_classes", &DatasetManifest::num_classes)
      .def_readwrite("class_names", &DatasetManifest::class_names)
      .def_readwrite("categories", &DatasetManifest::categories)
      .def("validate", &DatasetManifest::validate)
      .def("__len__", [](const DatasetManifest& d) { return d.records.size(); });

  py::class_<ClassDistribution>(m, "ClassDistribution")
      .def_readonly("counts", &ClassDistribution::counts)
      .def_readonly("max", &ClassDistribution::max)
      .def_readonly("min", &ClassDistribution::min)
      .def_readonly("median", &ClassDistribution::median)
      .def_readonly("std", &ClassDistribution::std)
      .def("total", &ClassDistribution::total);

  m.def("load_manifest", &load_manifest, "source"_a);
  m.def("save_manifest", &save_manifest, "dest"_a, "manifest"_a);
  m.def("compute_class_distribution", &compute_class_distribution, "manifest"_a);
  m.def("distribution_from_counts", &distribution_from_counts, "counts"_a);
  m.def("export_histogram", &export_histogram, "distribution"_a, "bin_width"_a);

  // curation
  py::class_<SplitAssignment>(m, "SplitAssignment")
      .def_readonly("train_ids", &SplitAssignment::train_ids)
      .def_readonly("val_ids", &SplitAssignment::val_ids)
      .def_readonly("seed", &SplitAssignment::seed)
      .def_readonly("train_fraction", &SplitAssignment::train_fraction)
      .def("__eq__", [](const SplitAssignment& a, const SplitAssignment& b) { return a == b; });

  py::class_<PruneReport>(m, "PruneReport")
      .def_readonly("threshold", &PruneReport::threshold)
      .def_readonly("removed_class_ids", &PruneReport::removed_class_ids)
      .def_readonly("removed_image_count", &PruneReport::removed_image_count)
      .def_readonly("retained_image_count", &PruneReport::retained_image_count)
      .def_readonly("train_counts", &PruneReport::train_counts)
      .def_readonly("val_image_count", &PruneReport::val_image_count)
      .def_readonly("label_space_reduced", &PruneReport::label_space_reduced);

  py::class_<PruneResult>(m, "PruneResult")
      .def_readonly("manifest", &PruneResult::manifest)
      .def_readonly("split", &PruneResult::split)
      .def_readonly("report", &PruneResult::report);

  py::class_<PreprocessSpec>(m, "PreprocessSpec")
      .def(py::init([](int height, int width, std::array<double, 3> mean, std::array<double, 3> std) {
             return PreprocessSpec{height, width, mean, std};
           }),
           "height"_a = 224, "width"_a = 224, "mean"_a = std::array<double, 3>{0.0, 0.0, 0.0},
           "std"_a = std::array<double, 3>{1.0, 1.0, 1.0})
      .def_readwrite("target_height", &PreprocessSpec::target_height)
      .def_readwrite("target_width", &PreprocessSpec::target_width)
      .def_readwrite("normalize_mean", &PreprocessSpec::normalize_mean)
      .def_readwrite("normalize_std", &PreprocessSpec::normalize_std);

  m.def("split", &split, "manifest"_a, "train_fraction"_a, "seed"_a);
  m.def("load_split", &load_split, "source"_a);
  m.def("save_split", &save_split, "dest"_a, "split"_a);
  m.def(
      "prune_by_class_count",
      [](const DatasetManifest& d, const SplitAssignment& s, std::size_t threshold, bool drop) {
        return prune_by_class_count(d, s, threshold, {drop});
      },
      "manifest"_a, "split"_a, "threshold"_a, "drop_pruned_classes"_a = false);
  m.def("preprocess", &preprocess, "image"_a, "spec"_a);

  // loss
  m.def(
      "cross_entropy", [](const DoubleArray& logits, int label) { return cross_entropy(to_tensor(logits).data, label); },
      "logits"_a, "label"_a);

  // modelzoo
  py::class_<ParameterInfo>(m, "ParameterInfo")
      .def_readonly("name", &ParameterInfo::name)
      .def_readonly("shape", &ParameterInfo::shape)
      .def_readonly("trainable", &ParameterInfo::trainable);

  py::class_<Model>(m, "Model")
      .def_property_readonly("arch", [](const Model& md) { return md.arch.name; })
      .def_property_readonly("num_classes", [](const Model& md) { return md.num_classes; })
      .def_property_readonly("input_dims", [](const Model& md) { return md.arch.input_dims; })
      .def_readonly("warnings", &Model::warnings)
      .def("forward", [](const Model& md, const DoubleArray& batch) { return to_array(md.forward(to_tensor(batch))); })
      .def("parameters", [](const Model& md) {
        py::dict out;
        for (const auto& [name, t] : export_tensors(md)) out[py::str(name)] = to_array(t);
        return out;
      });

  m.def("build_model", &make_model, "arch"_a = "tiny-cnn", "num_classes"_a, "input_size"_a = 224,
        "init"_a = "scratch", "freeze"_a = "train_all", "weights"_a = std::nullopt, "seed"_a = 0);
  m.def("parameter_inventory", &parameter_inventory, "model"_a);
  m.def("save_weights", [](const std::filesystem::path& p, const Model& md) { save_weights(p, md); }, "path"_a,
        "model"_a);
  m.def("load_model", [](const std::filesystem::path& p) { return load_model(p); }, "path"_a);
  m.def("list_architectures", [] {
    std::vector<std::pair<std::string, bool>> out;
    for (const auto& e : ArchitectureRegistry::global().entries()) out.emplace_back(e.name, e.available());
    return out;
  });

  // evaluation
  py::class_<PredictionRecord>(m, "PredictionRecord")
      .def_readonly("image_id", &PredictionRecord::image_id)
      .def_readonly("topk_labels", &PredictionRecord::topk_labels)
      .def_readonly("topk_confidences", &PredictionRecord::topk_confidences);

  m.def(
      "predict_topk",
      [](const DoubleArray& logits, int k, std::string image_id) {
        return topk_from_logits(to_tensor(logits).data, k, std::move(image_id));
      },
      "logits"_a, "k"_a, "image_id"_a = "");
  m.def(
      "top1_error",
      [](const std::map<std::string, std::vector<int>>& predicted, const std::map<std::string, int>& truths) {
        std::vector<PredictionRecord> preds;
        for (const auto& [id, labels] : predicted) preds.push_back({id, labels, std::vector<double>(labels.size())});
        return top1_error(preds, truths);
      },
      "predictions"_a, "truths"_a, "Predictions map image_id to ranked labels.");
  m.def(
      "topk_error",
      [](const std::map<std::string, std::vector<int>>& predicted, const std::map<std::string, int>& truths, int k) {
        std::vector<PredictionRecord> preds;
        for (const auto& [id, labels] : predicted) preds.push_back({id, labels, std::vector<double>(labels.size())});
        return topk_error(preds, truths, k);
      },
      "predictions"_a, "truths"_a, "k"_a);

  // synthetic data and command line
  m.def(
      "generate_synthetic_dataset",
      [](const std::filesystem::path& out, int num_classes, int max_images, int min_images, double tail_exponent,
         int image_size, std::uint64_t seed) {
        SynthConfig cfg;
        cfg.num_classes = num_classes;
        cfg.max_images = max_images;
        cfg.min_images = min_images;
        cfg.tail_exponent = tail_exponent;
        cfg.image_size = image_size;
        cfg.seed = seed;
        return generate_synthetic_dataset(cfg, out);
      },
      "out_dir"_a, "num_classes"_a = 20, "max_images"_a = 60, "min_images"_a = 4, "tail_exponent"_a = 1.0,
      "image_size"_a = 32, "seed"_a = 0);
  m.def("run_cli", &cli, "args"_a, "Runs a taxon command line; returns (exit_code, stdout, stderr).");
}
