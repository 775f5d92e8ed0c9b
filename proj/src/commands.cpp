#include "taxon/commands.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/core.h>
#include <fmt/ostream.h>

#include "taxon/config.hpp"
#include "taxon/curation.hpp"
#include "taxon/error.hpp"
#include "taxon/evaluation.hpp"
#include "taxon/loader.hpp"
#include "taxon/manifest.hpp"
#include "taxon/modelzoo.hpp"
#include "taxon/synth.hpp"
#include "taxon/training.hpp"

namespace taxon {

namespace fs = std::filesystem;

namespace {

constexpr const char* kDataRootEnv = "TAXON_DATA_ROOT";

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
  return out;
}

/// flag > environment > config > directory of the manifest
fs::path resolve_data_root(const std::string& flag, const std::string& configured, const fs::path& manifest) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kDataRootEnv); env && *env) return env;
  if (!configured.empty()) return configured;
  return manifest.has_parent_path() ? manifest.parent_path() : fs::path(".");
}

// ---------------------------------------------------------------- stats

struct StatsArgs {
  std::string manifest;
  std::size_t bin_width = 25;
  std::string histogram;
};

int cmd_stats(const StatsArgs& a, std::ostream& out) {
  const auto m = load_manifest(a.manifest);
  const auto d = compute_class_distribution(m);
  out << fmt::format("classes: {}\nimages: {}\n\n", m.num_classes, m.records.size());
  out << fmt::format("{:>8} {:>8} {:>8} {:>14}\n", "Maximum", "Minimum", "Median", "Standard Dev.");
  out << fmt::format("{:>8} {:>8} {:>8} {:>14.4f}\n", d.max, d.min, d.median, d.std);
  if (!a.histogram.empty()) {
    auto h = open_output(a.histogram);
    write_histogram_csv(h, export_histogram(d, a.bin_width));
  }
  return kExitOk;
}

// ---------------------------------------------------------------- split

struct SplitArgs {
  std::string manifest;
  double fraction = 0.9;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_split(const SplitArgs& a, std::ostream& out) {
  const auto m = load_manifest(a.manifest);
  const auto s = split(m, a.fraction, a.seed);
  auto f = open_output(a.out);
  write_split(f, s);
  out << fmt::format("train: {}\nval: {}\n", s.train_ids.size(), s.val_ids.size());
  return kExitOk;
}

// ---------------------------------------------------------------- prune

struct PruneArgs {
  std::string manifest;
  std::string split;
  std::size_t threshold = 100;
  std::string out_manifest;
  std::string out_split;
  std::string report;
  std::string classes_csv;
  bool drop_classes = false;
};

int cmd_prune(const PruneArgs& a, std::ostream& out) {
  const auto m = load_manifest(a.manifest);
  const auto s = load_split(a.split);
  const auto r = prune_by_class_count(m, s, a.threshold, {a.drop_classes});
  {
    auto f = open_output(a.out_manifest);
    write_manifest(f, r.manifest);
  }
  if (!a.out_split.empty()) {
    auto f = open_output(a.out_split);
    write_split(f, r.split);
  }
  if (!a.report.empty()) {
    auto f = open_output(a.report);
    write_prune_report(f, r.report);
  }
  if (!a.classes_csv.empty()) {
    auto f = open_output(a.classes_csv);
    write_prune_classes_csv(f, r.report);
  }
  write_prune_report(out, r.report);
  return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config;
  std::optional<std::string> manifest, split, out, data_root, weights, arch, init, freeze;
  std::optional<int> epochs, batch_size, input_size;
  std::optional<double> lr, momentum, fraction;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers, prune_threshold;
  bool prune = false;
  bool no_prune = false;
  bool resume = false;
  std::optional<int> stop_after;
  bool print_config = false;
};

ExperimentConfig resolve_train_config(const TrainArgs& a) {
  ExperimentConfig c = a.config.empty() ? ExperimentConfig{} : load_config(a.config);
  if (a.manifest) c.paths.manifest = *a.manifest;
  if (a.split) c.paths.split = *a.split;
  if (a.out) c.paths.output_dir = *a.out;
  if (a.data_root) c.paths.data_root = *a.data_root;
  if (a.weights) c.paths.weight_source = *a.weights;
  if (a.arch) c.model.arch = *a.arch;
  if (a.init) c.model.init = *a.init;
  if (a.freeze) c.model.freeze = *a.freeze;
  if (a.input_size) c.model.input_height = c.model.input_width = *a.input_size;
  if (a.epochs) c.training.epochs = *a.epochs;
  if (a.batch_size) c.training.batch_size = *a.batch_size;
  if (a.lr) c.training.learning_rate = *a.lr;
  if (a.momentum) c.training.momentum = *a.momentum;
  if (a.workers) c.training.workers = *a.workers;
  if (a.fraction) c.curation.train_fraction = *a.fraction;
  if (a.seed) c.seed = *a.seed;
  if (a.prune_threshold) c.curation.prune_threshold = *a.prune_threshold;
  if (a.prune) c.curation.prune_enabled = true;
  if (a.no_prune) c.curation.prune_enabled = false;
  return c;
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const ExperimentConfig cfg = resolve_train_config(a);
  if (a.print_config) {
    out << dump_config(cfg);
    return kExitOk;
  }
  cfg.validate(true);
  const fs::path out_dir = cfg.paths.output_dir;
  fs::create_directories(out_dir);

  auto manifest = load_manifest(cfg.paths.manifest);
  auto assignment = cfg.paths.split.empty() ? split(manifest, cfg.curation.train_fraction, cfg.seed)
                                            : load_split(cfg.paths.split);
  if (cfg.curation.prune_enabled) {
    auto pruned = prune_by_class_count(manifest, assignment, cfg.curation.prune_threshold,
                                       {cfg.curation.drop_pruned_classes});
    auto f = open_output(out_dir / "prune_report.txt");
    write_prune_report(f, pruned.report);
    manifest = std::move(pruned.manifest);
    assignment = std::move(pruned.split);
  }
  {
    auto f = open_output(out_dir / "split.csv");
    write_split(f, assignment);
  }
  {
    auto f = open_output(out_dir / "config.json");
    f << dump_config(cfg);
  }

  TrainConfig tc = cfg.train_config();
  tc.arch.structural_descriptor = ArchitectureRegistry::global().lookup(tc.arch.name).descriptor;
  const PreprocessSpec spec = cfg.preprocess_spec();
  const ImageFileSource source(resolve_data_root("", cfg.paths.data_root, cfg.paths.manifest), spec);

  FitOptions opts;
  opts.output_dir = out_dir;
  if (a.resume) {
    opts.resume_from = out_dir / "checkpoint_last.bin";
    if (!fs::exists(*opts.resume_from)) {
      throw ConfigError(fmt::format("--resume: no checkpoint at '{}'", opts.resume_from->string()));
    }
  }
  opts.stop_after_epoch = a.stop_after;
  const auto result = fit(tc, manifest, assignment, source, spec, opts);
  for (const auto& w : result.warnings) err << "warning: " << w << '\n';
  for (const auto& h : result.history) {
    out << fmt::format("epoch {:>3}  train_loss {:.6f}  val_loss {:.6f}  val_top1_error {:.4f}\n", h.epoch,
                       h.train_loss, h.val_loss, h.val_top1_error);
  }
  return kExitOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::string split;
  std::string side = "val";
  std::vector<int> k_list{1, 5};
  std::string out_dir = "eval";
  std::string model_id;
  std::string data_root;
  std::size_t workers = 1;
  std::size_t batch_size = 32;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Model model = load_model(a.checkpoint);
  const auto manifest = load_manifest(a.manifest);
  const auto assignment = load_split(a.split);
  if (model.num_classes != manifest.num_classes) {
    throw DataError(fmt::format("checkpoint was trained for C = {} classes but the manifest declares C = {}",
                                model.num_classes, manifest.num_classes));
  }
  const SplitSide side = a.side == "train" ? SplitSide::kTrain : SplitSide::kVal;
  const ImageFileSource source(resolve_data_root(a.data_root, "", a.manifest), model.preprocess);
  const std::string model_id = a.model_id.empty() ? model.arch.name : a.model_id;
  const std::string split_id = fmt::format("{}@{}", a.side, fs::path(a.split).filename().string());
  const auto ev = evaluate(model, manifest, assignment, side, source, a.k_list, model_id, split_id, a.batch_size,
                           a.workers);

  const fs::path dir = a.out_dir;
  {
    auto f = open_output(dir / "predictions.txt");
    write_predictions(f, ev.predictions);
  }
  {
    auto f = open_output(dir / "report.csv");
    write_report_csv(f, std::span(&ev.report, 1));
  }
  {
    auto f = open_output(dir / "categories.csv");
    write_category_csv(f, ev.report);
  }
  const std::string table = render_results_table({ev.report});
  std::string categories = "\n| Category (extension) | Images | Top-1 Error |\n|---|---:|---:|\n";
  for (const auto& [cat, n] : ev.report.per_category_count) {
    categories += fmt::format("| {} | {} | {:.4f} |\n", cat, n, ev.report.per_category_error.at(cat));
  }
  {
    auto f = open_output(dir / "report.md");
    f << table << categories;
  }
  out << table;
  return kExitOk;
}

// ---------------------------------------------------------------- report

struct ReportArgs {
  std::vector<std::string> files;
  std::string out_md;
  std::string out_csv;
};

int cmd_report(const ReportArgs& a, std::ostream& out, std::ostream& err) {
  std::vector<EvaluationReport> reports;
  for (const auto& path : a.files) {
    std::ifstream in(path);
    if (!in) throw IoError(fmt::format("cannot open report '{}'", path));
    auto rows = read_report_csv(in);
    reports.insert(reports.end(), rows.begin(), rows.end());
  }
  if (reports.empty()) throw DataError("the report files contain no rows");
  std::set<std::string> splits;
  for (const auto& r : reports) splits.insert(r.split_id);
  if (splits.size() > 1) {
    std::string list;
    for (const auto& s : splits) list += (list.empty() ? "" : ", ") + s;
    err << "warning: reports come from different splits (" << list << "); rows are not directly comparable\n";
  }
  const auto ranked = rank_reports(reports);
  const std::string table = render_results_table(ranked);
  out << table;
  if (!a.out_md.empty()) {
    auto f = open_output(a.out_md);
    f << table;
  }
  if (!a.out_csv.empty()) {
    auto f = open_output(a.out_csv);
    write_report_csv(f, ranked);
  }
  return kExitOk;
}

// ---------------------------------------------------------------- zoo list

int cmd_zoo_list(std::ostream& out) {
  out << fmt::format("{:<12} {:<11} {:<11} {}\n", "name", "available", "input", "structure");
  for (const auto& e : ArchitectureRegistry::global().entries()) {
    out << fmt::format("{:<12} {:<11} {:<11} {}\n", e.name, e.available() ? "yes" : "no", "3x224x224",
                       e.descriptor);
  }
  return kExitOk;
}

// ---------------------------------------------------------------- synth-gen

struct SynthArgs {
  std::string out;
  SynthConfig cfg;
  bool no_images = false;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  const auto m = generate_synthetic_dataset(a.cfg, a.out, !a.no_images);
  out << fmt::format("wrote {} records over {} classes to {}\n", m.records.size(), m.num_classes,
                     (fs::path(a.out) / "manifest.jsonl").string());
  return kExitOk;
}

int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::kArgument:
      return kExitUsage;
    case ErrorKind::kNumeric:
      return kExitNumeric;
    default:
      return kExitData;
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Long-tailed species classification experiment harness", "taxon"};
  app.require_subcommand(1);
  std::function<int()> action;

  StatsArgs stats;
  auto* s_stats = app.add_subcommand("stats", "Per-class image count statistics and histogram");
  s_stats->add_option("--manifest", stats.manifest, "Manifest file")->required();
  s_stats->add_option("--bin-width", stats.bin_width, "Histogram bin width")->check(CLI::PositiveNumber);
  s_stats->add_option("--histogram", stats.histogram, "Write bin_lower,class_count CSV here");
  s_stats->callback([&] { action = [&] { return cmd_stats(stats, out); }; });

  SplitArgs split_args;
  auto* s_split = app.add_subcommand("split", "Seeded stratified train/validation split");
  s_split->add_option("--manifest", split_args.manifest, "Manifest file")->required();
  s_split->add_option("--fraction", split_args.fraction, "Train fraction in (0, 1)");
  s_split->add_option("--seed", split_args.seed, "Seed");
  s_split->add_option("--out", split_args.out, "Split file to write")->required();
  s_split->callback([&] { action = [&] { return cmd_split(split_args, out); }; });

  PruneArgs prune;
  auto* s_prune = app.add_subcommand("prune", "Drop train images of classes below a count threshold");
  s_prune->add_option("--manifest", prune.manifest, "Manifest file")->required();
  s_prune->add_option("--split", prune.split, "Split file")->required();
  s_prune->add_option("--threshold", prune.threshold, "Classes with fewer train images are pruned");
  s_prune->add_option("--out-manifest", prune.out_manifest, "Curated manifest to write")->required();
  s_prune->add_option("--out-split", prune.out_split, "Curated split to write");
  s_prune->add_option("--report", prune.report, "key=value prune report");
  s_prune->add_option("--classes-csv", prune.classes_csv, "class_id,train_count,removed CSV");
  s_prune->add_flag("--drop-pruned-classes", prune.drop_classes, "Also remove pruned classes from the label space");
  s_prune->callback([&] { action = [&] { return cmd_prune(prune, out); }; });

  TrainArgs train;
  auto* s_train = app.add_subcommand("train", "Train a model (config file, flags override)");
  s_train->add_option("--config", train.config, "Experiment config (JSON)");
  s_train->add_option("--manifest", train.manifest);
  s_train->add_option("--split", train.split);
  s_train->add_option("--out", train.out, "Output directory");
  s_train->add_option("--data-root", train.data_root);
  s_train->add_option("--weights", train.weights, "Weight source for pretrained init");
  s_train->add_option("--arch", train.arch);
  s_train->add_option("--init", train.init, "scratch | pretrained");
  s_train->add_option("--freeze", train.freeze, "train_all | freeze_all_but_last");
  s_train->add_option("--input-size", train.input_size, "Square network input size");
  s_train->add_option("--epochs", train.epochs);
  s_train->add_option("--batch-size", train.batch_size);
  s_train->add_option("--lr", train.lr);
  s_train->add_option("--momentum", train.momentum);
  s_train->add_option("--fraction", train.fraction, "Train fraction when splitting in-process");
  s_train->add_option("--seed", train.seed);
  s_train->add_option("--workers", train.workers, "Data-loading threads");
  s_train->add_option("--prune-threshold", train.prune_threshold);
  s_train->add_flag("--prune", train.prune, "Enable class-count pruning");
  s_train->add_flag("--no-prune", train.no_prune, "Disable class-count pruning");
  s_train->add_flag("--resume", train.resume, "Continue from <out>/checkpoint_last.bin");
  s_train->add_option("--stop-after", train.stop_after, "Stop after this epoch");
  s_train->add_flag("--print-config", train.print_config, "Print the resolved config and exit");
  s_train->callback([&] { action = [&] { return cmd_train(train, out, err); }; });

  EvalArgs ev;
  auto* s_eval = app.add_subcommand("eval", "Top-k evaluation of a checkpoint");
  s_eval->add_option("--checkpoint", ev.checkpoint)->required();
  s_eval->add_option("--manifest", ev.manifest)->required();
  s_eval->add_option("--split", ev.split)->required();
  s_eval->add_option("--side", ev.side)->check(CLI::IsMember({"train", "val"}));
  s_eval->add_option("--k", ev.k_list, "Comma-separated k values")->delimiter(',');
  s_eval->add_option("--out", ev.out_dir, "Output directory");
  s_eval->add_option("--model-id", ev.model_id);
  s_eval->add_option("--data-root", ev.data_root);
  s_eval->add_option("--workers", ev.workers);
  s_eval->add_option("--batch-size", ev.batch_size);
  s_eval->callback([&] { action = [&] { return cmd_eval(ev, out); }; });

  ReportArgs rep;
  auto* s_report = app.add_subcommand("report", "Comparison table from report CSV files");
  s_report->add_option("files", rep.files, "report.csv files")->required();
  s_report->add_option("--out-md", rep.out_md);
  s_report->add_option("--out-csv", rep.out_csv);
  s_report->callback([&] { action = [&] { return cmd_report(rep, out, err); }; });

  auto* s_zoo = app.add_subcommand("zoo", "Architecture registry");
  s_zoo->require_subcommand(1);
  auto* s_zoo_list = s_zoo->add_subcommand("list", "List registered architectures");
  s_zoo_list->callback([&] { action = [&] { return cmd_zoo_list(out); }; });

  SynthArgs synth;
  auto* s_synth = app.add_subcommand("synth-gen", "Generate a seeded long-tailed synthetic dataset");
  s_synth->add_option("--out", synth.out, "Output directory")->required();
  s_synth->add_option("--classes", synth.cfg.num_classes);
  s_synth->add_option("--max-images", synth.cfg.max_images);
  s_synth->add_option("--min-images", synth.cfg.min_images);
  s_synth->add_option("--tail-exponent", synth.cfg.tail_exponent);
  s_synth->add_option("--size", synth.cfg.image_size, "Image side length in pixels");
  s_synth->add_option("--seed", synth.cfg.seed);
  s_synth->add_option("--noise", synth.cfg.noise);
  s_synth->add_flag("--no-images", synth.no_images, "Write the manifest only");
  s_synth->callback([&] { action = [&] { return cmd_synth(synth, out); }; });

  std::vector<std::string> argv_store{"taxon"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    return action ? action() : kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace taxon
