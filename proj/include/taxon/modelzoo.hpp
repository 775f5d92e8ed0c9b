#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "taxon/curation.hpp"
#include "taxon/network.hpp"
#include "taxon/tensor_file.hpp"

namespace taxon {

enum class FreezeMode { kTrainAll, kFreezeAllButLast };
enum class InitMode { kScratch, kPretrained };

struct FreezePolicy {
  FreezeMode mode = FreezeMode::kTrainAll;
  bool operator==(const FreezePolicy&) const = default;
};

struct WeightInit {
  InitMode mode = InitMode::kScratch;
  std::optional<std::filesystem::path> weight_source;
  bool operator==(const WeightInit&) const = default;
};

std::string to_string(FreezeMode mode);
std::string to_string(InitMode mode);
FreezeMode parse_freeze_mode(const std::string& text);
InitMode parse_init_mode(const std::string& text);

struct ArchitectureSpec {
  std::string name = "tiny-cnn";
  std::array<std::size_t, 3> input_dims{3, 224, 224};  // channels, height, width
  std::string structural_descriptor;

  bool operator==(const ArchitectureSpec&) const = default;
};

/// Builds an initialized network for (spec, num_classes). The last learnable
/// layer of the returned network must be the class-producing head.
using BackboneFactory = std::function<Network(const ArchitectureSpec&, int num_classes, Rng& rng)>;

struct RegistryEntry {
  std::string name;
  std::string descriptor;
  BackboneFactory factory;  // empty when no provider is installed

  bool available() const { return static_cast<bool>(factory); }
};

/// Process-wide architecture registry. tiny-cnn is built in; the published
/// backbones are listed but need a provider installed at runtime.
class ArchitectureRegistry {
 public:
  static ArchitectureRegistry& global();

  std::vector<RegistryEntry> entries() const;
  bool contains(const std::string& name) const;
  /// Throws RegistryError for unknown names.
  RegistryEntry lookup(const std::string& name) const;
  /// Installs (or replaces) the factory behind an existing or new name.
  void install_provider(const std::string& name, const std::string& descriptor, BackboneFactory factory);
  /// Removes a provider, leaving the name registered but unavailable.
  void remove_provider(const std::string& name);

 private:
  ArchitectureRegistry();
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

/// Architecture spec with the registry's descriptor filled in.
ArchitectureSpec make_arch(const std::string& name, std::size_t height = 224, std::size_t width = 224);

/// The built-in reference backbone:
///   conv1 3->8 3x3 pad 1, relu, maxpool2, conv2 8->16 3x3 pad 1, relu,
///   maxpool2, global average pool, head linear 16->C.
Network build_tiny_cnn(const std::array<std::size_t, 3>& input_dims, int num_classes, Rng& rng);

struct ParameterInfo {
  std::string name;
  std::vector<std::size_t> shape;
  bool trainable = true;

  bool operator==(const ParameterInfo&) const = default;
};

/// A built network together with the contract it was built under.
struct Model {
  ArchitectureSpec arch;
  int num_classes = 0;
  FreezePolicy freeze;
  PreprocessSpec preprocess;  // normalization travels with the weights
  Network net;
  std::vector<std::string> warnings;

  Tensor forward(const Tensor& batch) const { return net.forward(batch); }
};

/// Builds, initializes, optionally loads pretrained weights, and applies the
/// freeze policy. `seed` drives every fresh initialization.
Model build_model(const ArchitectureSpec& arch, int num_classes, const WeightInit& init,
                  const FreezePolicy& freeze, std::uint64_t seed = 0);

/// Marks parameters trainable according to `policy`.
void apply_freeze(Model& model, const FreezePolicy& policy);

std::vector<ParameterInfo> parameter_inventory(const Model& model);

/// Name -> value for every parameter.
TensorMap export_tensors(const Model& model);
/// Metadata block describing the model (arch, C, normalization).
nlohmann::json model_metadata(const Model& model);

/// Saves weights only (no optimizer state).
void save_weights(const std::filesystem::path& path, const Model& model,
                  TensorDType dtype = TensorDType::kFloat64);

/// Rebuilds a model from a weights or checkpoint file, restoring every tensor.
Model load_model(const std::filesystem::path& path, const FreezePolicy& freeze = {});
Model model_from_file(const TensorFile& file, const FreezePolicy& freeze = {});

}  // namespace taxon
