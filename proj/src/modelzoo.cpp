#include "taxon/modelzoo.hpp"

#include <map>
#include <mutex>

#include <fmt/core.h>

#include "taxon/error.hpp"

namespace taxon {

std::string to_string(FreezeMode mode) {
  return mode == FreezeMode::kTrainAll ? "train_all" : "freeze_all_but_last";
}

std::string to_string(InitMode mode) { return mode == InitMode::kScratch ? "scratch" : "pretrained"; }

FreezeMode parse_freeze_mode(const std::string& text) {
  if (text == "train_all") return FreezeMode::kTrainAll;
  if (text == "freeze_all_but_last") return FreezeMode::kFreezeAllButLast;
  throw ArgumentError(fmt::format("unknown freeze mode '{}' (train_all | freeze_all_but_last)", text));
}

InitMode parse_init_mode(const std::string& text) {
  if (text == "scratch") return InitMode::kScratch;
  if (text == "pretrained") return InitMode::kPretrained;
  throw ArgumentError(fmt::format("unknown init mode '{}' (scratch | pretrained)", text));
}

Network build_tiny_cnn(const std::array<std::size_t, 3>& input_dims, int num_classes, Rng& rng) {
  std::vector<std::unique_ptr<Layer>> layers;
  layers.push_back(std::make_unique<Conv2d>("conv1", input_dims[0], 8, 3, 1));
  layers.push_back(std::make_unique<Relu>("relu1"));
  layers.push_back(std::make_unique<MaxPool2>("pool1"));
  layers.push_back(std::make_unique<Conv2d>("conv2", 8, 16, 3, 1));
  layers.push_back(std::make_unique<Relu>("relu2"));
  layers.push_back(std::make_unique<MaxPool2>("pool2"));
  layers.push_back(std::make_unique<GlobalAvgPool>("gap"));
  layers.push_back(std::make_unique<Linear>("head", 16, static_cast<std::size_t>(num_classes)));
  for (auto& l : layers) l->initialize(rng);
  return Network({input_dims[0], input_dims[1], input_dims[2]}, std::move(layers));
}

struct ArchitectureRegistry::Impl {
  mutable std::mutex mu;
  std::map<std::string, RegistryEntry> entries;
};

ArchitectureRegistry::ArchitectureRegistry() : impl_(std::make_shared<Impl>()) {
  auto add = [&](const std::string& name, const std::string& descriptor, BackboneFactory f) {
    impl_->entries[name] = RegistryEntry{name, descriptor, std::move(f)};
  };
  add("tiny-cnn",
      "2 x (3x3 conv -> ReLU -> 2x2 max-pool), global average pool, fully connected head",
      [](const ArchitectureSpec& a, int c, Rng& rng) { return build_tiny_cnn(a.input_dims, c, rng); });
  add("alexnet", "5 convolutional + 3 fully connected layers, ReLU; head = last fully connected layer", {});
  add("densenet", "dense blocks with every layer fed all earlier feature maps; head = final fully connected layer", {});
  add("squeezenet", "fire modules (1x1 squeeze, 1x1/3x3 expand); head = final 1x1 class convolution", {});
  add("shufflenet", "pointwise group convolutions with channel shuffle; head = final fully connected layer", {});
  add("resnext", "residual blocks of aggregated grouped transforms; head = final fully connected layer", {});
}

ArchitectureRegistry& ArchitectureRegistry::global() {
  static ArchitectureRegistry registry;
  return registry;
}

std::vector<RegistryEntry> ArchitectureRegistry::entries() const {
  std::lock_guard lock(impl_->mu);
  std::vector<RegistryEntry> out;
  for (const auto& [name, e] : impl_->entries) out.push_back(e);
  return out;
}

bool ArchitectureRegistry::contains(const std::string& name) const {
  std::lock_guard lock(impl_->mu);
  return impl_->entries.contains(name);
}

RegistryEntry ArchitectureRegistry::lookup(const std::string& name) const {
  std::lock_guard lock(impl_->mu);
  auto it = impl_->entries.find(name);
  if (it == impl_->entries.end()) {
    std::string known;
    for (const auto& [n, e] : impl_->entries) known += (known.empty() ? "" : ", ") + n;
    throw RegistryError(fmt::format("unknown architecture '{}' (registered: {})", name, known));
  }
  return it->second;
}

void ArchitectureRegistry::install_provider(const std::string& name, const std::string& descriptor,
                                            BackboneFactory factory) {
  std::lock_guard lock(impl_->mu);
  auto& e = impl_->entries[name];
  e.name = name;
  if (!descriptor.empty()) e.descriptor = descriptor;
  e.factory = std::move(factory);
}

void ArchitectureRegistry::remove_provider(const std::string& name) {
  std::lock_guard lock(impl_->mu);
  auto it = impl_->entries.find(name);
  if (it != impl_->entries.end()) it->second.factory = nullptr;
}

ArchitectureSpec make_arch(const std::string& name, std::size_t height, std::size_t width) {
  const auto entry = ArchitectureRegistry::global().lookup(name);
  return ArchitectureSpec{name, {3, height, width}, entry.descriptor};
}

void apply_freeze(Model& model, const FreezePolicy& policy) {
  model.freeze = policy;
  for (auto* p : model.net.parameters()) {
    p->trainable = policy.mode == FreezeMode::kTrainAll || model.net.is_head_parameter(p->name);
  }
}

namespace {

/// Fresh head: uniform +-1/sqrt(fan_in), zero bias, whatever the head's kind.
void reinitialize_head(Network& net, Rng& rng) {
  auto& head = net.head();
  if (auto* conv = dynamic_cast<Conv2d*>(&head)) {
    conv->initialize_as_head(rng);
  } else {
    head.initialize(rng);
  }
}

Network construct(const ArchitectureSpec& arch, int num_classes, Rng& rng) {
  const auto entry = ArchitectureRegistry::global().lookup(arch.name);
  if (!entry.available()) {
    throw RegistryError(fmt::format(
        "architecture '{}' is registered but no backbone provider is installed", arch.name));
  }
  Network net = entry.factory(arch, num_classes, rng);
  if (net.num_outputs() != static_cast<std::size_t>(num_classes)) {
    throw RegistryError(fmt::format("provider for '{}' produced {} outputs, expected {}", arch.name,
                                    net.num_outputs(), num_classes));
  }
  return net;
}

}  // namespace

Model build_model(const ArchitectureSpec& arch, int num_classes, const WeightInit& init,
                  const FreezePolicy& freeze, std::uint64_t seed) {
  if (num_classes < 2) throw ArgumentError(fmt::format("num_classes must be >= 2, got {}", num_classes));
  Rng rng(derive_seed(seed, {seed_key("init")}));
  Model model;
  model.arch = arch;
  if (model.arch.structural_descriptor.empty()) {
    model.arch.structural_descriptor = ArchitectureRegistry::global().lookup(arch.name).descriptor;
  }
  model.num_classes = num_classes;
  model.net = construct(arch, num_classes, rng);

  if (init.mode == InitMode::kPretrained) {
    if (!init.weight_source) throw ArgumentError("pretrained initialization requires a weight source");
    const TensorFile source = read_tensor_file(*init.weight_source);
    const auto& meta = source.metadata;
    if (meta.contains("arch") && meta["arch"] != arch.name) {
      model.warnings.push_back(fmt::format("weight source was saved from '{}', loading into '{}'",
                                           meta["arch"].get<std::string>(), arch.name));
    }
    if (meta.contains("normalize_mean") && meta.contains("normalize_std")) {
      model.preprocess.normalize_mean = meta["normalize_mean"].get<std::array<double, 3>>();
      model.preprocess.normalize_std = meta["normalize_std"].get<std::array<double, 3>>();
    }
    bool head_fresh = false;
    for (auto* p : model.net.parameters()) {
      auto it = source.tensors.find(p->name);
      const bool is_head = model.net.is_head_parameter(p->name);
      if (is_head) {
        if (it == source.tensors.end() || it->second.shape != p->value.shape) head_fresh = true;
        continue;
      }
      if (it == source.tensors.end()) {
        throw LoadError(fmt::format("weight source '{}' has no tensor '{}'",
                                    init.weight_source->string(), p->name));
      }
      if (it->second.shape != p->value.shape) {
        throw LoadError(fmt::format("tensor '{}' has shape {} in the weight source, expected {}", p->name,
                                    shape_string(it->second.shape), shape_string(p->value.shape)));
      }
      p->value = it->second;
    }
    if (head_fresh) {
      Rng head_rng(derive_seed(seed, {seed_key("head")}));
      reinitialize_head(model.net, head_rng);
    } else {
      for (auto& p : model.net.head().params()) p.value = source.tensors.at(p.name);
    }
  }
  model.preprocess.target_height = static_cast<int>(arch.input_dims[1]);
  model.preprocess.target_width = static_cast<int>(arch.input_dims[2]);

  if (init.mode == InitMode::kScratch && freeze.mode == FreezeMode::kFreezeAllButLast) {
    model.warnings.push_back(
        "freeze_all_but_last with scratch initialization trains only a head on random features");
  }
  apply_freeze(model, freeze);
  return model;
}

std::vector<ParameterInfo> parameter_inventory(const Model& model) {
  std::vector<ParameterInfo> out;
  for (const auto* p : model.net.parameters()) out.push_back({p->name, p->value.shape, p->trainable});
  return out;
}

TensorMap export_tensors(const Model& model) {
  TensorMap out;
  for (const auto* p : model.net.parameters()) out.emplace(p->name, p->value);
  return out;
}

nlohmann::json model_metadata(const Model& model) {
  std::vector<std::string> head;
  for (const auto& p : model.net.head().params()) head.push_back(p.name);
  return {{"format", "taxon-model"},
          {"arch", model.arch.name},
          {"input_dims", model.arch.input_dims},
          {"num_classes", model.num_classes},
          {"head", head},
          {"normalize_mean", model.preprocess.normalize_mean},
          {"normalize_std", model.preprocess.normalize_std}};
}

void save_weights(const std::filesystem::path& path, const Model& model, TensorDType dtype) {
  TensorFile file;
  file.metadata = model_metadata(model);
  file.tensors = export_tensors(model);
  write_tensor_file(path, file, dtype);
}

Model model_from_file(const TensorFile& file, const FreezePolicy& freeze) {
  const auto& meta = file.metadata;
  Model model;
  try {
    const auto dims = meta.at("input_dims").get<std::array<std::size_t, 3>>();
    model.arch = make_arch(meta.at("arch").get<std::string>(), dims[1], dims[2]);
    model.arch.input_dims = dims;
    model.num_classes = meta.at("num_classes").get<int>();
    model.preprocess.normalize_mean = meta.at("normalize_mean").get<std::array<double, 3>>();
    model.preprocess.normalize_std = meta.at("normalize_std").get<std::array<double, 3>>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(fmt::format("model metadata incomplete: {}", e.what()));
  }
  model.preprocess.target_height = static_cast<int>(model.arch.input_dims[1]);
  model.preprocess.target_width = static_cast<int>(model.arch.input_dims[2]);
  Rng rng(0);
  model.net = construct(model.arch, model.num_classes, rng);
  for (auto* p : model.net.parameters()) {
    auto it = file.tensors.find(p->name);
    if (it == file.tensors.end()) throw LoadError(fmt::format("file has no tensor '{}'", p->name));
    if (it->second.shape != p->value.shape) {
      throw LoadError(fmt::format("tensor '{}' has shape {}, expected {}", p->name,
                                  shape_string(it->second.shape), shape_string(p->value.shape)));
    }
    p->value = it->second;
  }
  apply_freeze(model, freeze);
  return model;
}

Model load_model(const std::filesystem::path& path, const FreezePolicy& freeze) {
  return model_from_file(read_tensor_file(path), freeze);
}

}  // namespace taxon
