#include <doctest.h>

#include <cmath>
#include <set>
#include <thread>

#include "taxon/error.hpp"
#include "taxon/modelzoo.hpp"
#include "test_util.hpp"

using namespace taxon;
using taxon::testing::random_tensor;
using taxon::testing::TempDir;

namespace {

const FreezePolicy kTrainAll{FreezeMode::kTrainAll};
const FreezePolicy kHeadOnly{FreezeMode::kFreezeAllButLast};

Tensor batch_of(const std::vector<Tensor>& samples) {
  std::vector<std::size_t> shape{samples.size()};
  shape.insert(shape.end(), samples[0].shape.begin(), samples[0].shape.end());
  Tensor b(shape);
  std::size_t off = 0;
  for (const auto& s : samples) {
    std::copy(s.data.begin(), s.data.end(), b.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += s.numel();
  }
  return b;
}

/// SqueezeNet-style stand-in: the class-producing layer is a 1x1 convolution.
Network conv_head_backbone(const ArchitectureSpec& a, int classes, Rng& rng) {
  std::vector<std::unique_ptr<Layer>> layers;
  layers.push_back(std::make_unique<Conv2d>("fire", 3, 4, 3, 1));
  layers.push_back(std::make_unique<Relu>("relu"));
  layers.push_back(std::make_unique<Conv2d>("classifier", 4, static_cast<std::size_t>(classes), 1, 0));
  layers.push_back(std::make_unique<Relu>("relu_out"));
  layers.push_back(std::make_unique<GlobalAvgPool>("gap"));
  for (auto& l : layers) l->initialize(rng);
  return Network({a.input_dims[0], a.input_dims[1], a.input_dims[2]}, std::move(layers));
}

}  // namespace

TEST_CASE("build: tiny-cnn emits C logits for a 3x224x224 input") {
  const auto model = build_model(make_arch("tiny-cnn"), 4, {}, kTrainAll, 1);
  Rng rng(1);
  const auto logits = model.forward(random_tensor({1, 3, 224, 224}, rng));
  CHECK(logits.shape == std::vector<std::size_t>{1, 4});
  for (double v : logits.data) CHECK(std::isfinite(v));
  CHECK(model.warnings.empty());
}

TEST_CASE("inventory: tiny-cnn layout and parameter count") {
  const int C = 7;
  const auto model = build_model(make_arch("tiny-cnn"), C, {}, kTrainAll);
  const auto inv = parameter_inventory(model);
  const std::vector<ParameterInfo> expected{
      {"conv1.weight", {8, 3, 3, 3}, true}, {"conv1.bias", {8}, true},
      {"conv2.weight", {16, 8, 3, 3}, true}, {"conv2.bias", {16}, true},
      {"head.weight", {7, 16}, true},       {"head.bias", {7}, true}};
  CHECK(inv == expected);

  std::size_t from_shapes = 0;
  for (const auto& p : inv) from_shapes += Tensor::count(p.shape);
  // 8*27 + 8 + 16*72 + 16 + 16*C + C
  CHECK(from_shapes == 216 + 8 + 1152 + 16 + 17 * C);
  std::size_t from_values = 0;
  for (const auto& [name, t] : export_tensors(model)) from_values += t.numel();
  CHECK(from_values == from_shapes);
}

TEST_CASE("freeze: freeze_all_but_last marks exactly the head trainable") {
  const auto model = build_model(make_arch("tiny-cnn"), 4, {}, kHeadOnly);
  for (const auto& p : parameter_inventory(model)) {
    CHECK(p.trainable == (p.name.rfind("head.", 0) == 0));
  }
  REQUIRE(model.warnings.size() == 1);  // scratch + head-only training
  CHECK(model.warnings[0].find("random features") != std::string::npos);
}

TEST_CASE("forward: identical rows, batch independence") {
  const auto model = build_model(make_arch("tiny-cnn", 24, 24), 5, {}, kTrainAll, 3);
  Rng rng(2);
  std::vector<Tensor> samples;
  for (int i = 0; i < 8; ++i) samples.push_back(random_tensor({3, 24, 24}, rng));

  const auto twin = model.forward(batch_of({samples[0], samples[0]}));
  for (std::size_t k = 0; k < 5; ++k) CHECK(twin[k] == twin[5 + k]);

  const auto all = model.forward(batch_of(samples));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto single = model.forward(batch_of({samples[i]}));
    for (std::size_t k = 0; k < 5; ++k) CHECK(std::abs(single[k] - all[i * 5 + k]) <= 1e-5);
  }
}

TEST_CASE("forward: zero input through a zero-weight head yields the head bias") {
  auto model = build_model(make_arch("tiny-cnn", 16, 16), 3, {}, kTrainAll);
  auto& head = model.net.head().params();
  std::fill(head[0].value.data.begin(), head[0].value.data.end(), 0.0);
  head[1].value.data = {0.5, -1.25, 2.0};
  const auto logits = model.forward(Tensor({1, 3, 16, 16}));
  CHECK(logits.data == std::vector<double>{0.5, -1.25, 2.0});
}

TEST_CASE("forward: shape mismatch") {
  const auto model = build_model(make_arch("tiny-cnn", 16, 16), 3, {}, kTrainAll);
  CHECK_THROWS_AS(model.forward(Tensor({1, 3, 16, 17})), ShapeError);
  CHECK_THROWS_AS(model.forward(Tensor({3, 16, 16})), ShapeError);
}

TEST_CASE("build: argument and registry errors") {
  CHECK_THROWS_AS(build_model(make_arch("tiny-cnn"), 1, {}, kTrainAll), ArgumentError);
  CHECK_THROWS_AS(make_arch("vgg"), RegistryError);
  ArchitectureSpec unknown;
  unknown.name = "vgg";
  CHECK_THROWS_AS(build_model(unknown, 4, {}, kTrainAll), RegistryError);
  CHECK_THROWS_AS(build_model(make_arch("alexnet"), 4, {}, kTrainAll), RegistryError);
  WeightInit missing{InitMode::kPretrained, std::nullopt};
  CHECK_THROWS_AS(build_model(make_arch("tiny-cnn"), 4, missing, kTrainAll), ArgumentError);
}

TEST_CASE("registry: the published backbones are listed, tiny-cnn is available") {
  const auto entries = ArchitectureRegistry::global().entries();
  std::set<std::string> names;
  for (const auto& e : entries) {
    names.insert(e.name);
    CHECK(!e.descriptor.empty());
    if (e.name == "tiny-cnn") CHECK(e.available());
  }
  CHECK(names == std::set<std::string>{"alexnet", "densenet", "resnext", "shufflenet", "squeezenet", "tiny-cnn"});
}

TEST_CASE("registry closure: every available architecture builds for C in {2, 10, 1010}") {
  ArchitectureRegistry::global().install_provider("squeezenet", "", conv_head_backbone);
  for (const auto& e : ArchitectureRegistry::global().entries()) {
    if (!e.available()) continue;
    for (int C : {2, 10, 1010}) {
      const auto model = build_model(make_arch(e.name, 16, 16), C, {}, kTrainAll);
      CHECK(model.net.num_outputs() == static_cast<std::size_t>(C));
      Rng rng(C);
      CHECK(model.forward(random_tensor({1, 3, 16, 16}, rng)).shape == std::vector<std::size_t>{1, static_cast<std::size_t>(C)});
    }
  }
  ArchitectureRegistry::global().remove_provider("squeezenet");
  CHECK_FALSE(ArchitectureRegistry::global().lookup("squeezenet").available());
}

TEST_CASE("freeze: a convolutional classifier counts as the head") {
  ArchitectureRegistry::global().install_provider("squeezenet", "", conv_head_backbone);
  const auto model = build_model(make_arch("squeezenet", 12, 12), 6, {}, kHeadOnly);
  ArchitectureRegistry::global().remove_provider("squeezenet");
  for (const auto& p : parameter_inventory(model)) {
    CHECK(p.trainable == (p.name.rfind("classifier.", 0) == 0));
  }
}

TEST_CASE("pretrained: C=1000 checkpoint into C=1010 keeps the backbone, refits the head") {
  TempDir dir;
  const auto source = build_model(make_arch("tiny-cnn"), 1000, {}, kTrainAll, 77);
  save_weights(dir / "imagenet.bin", source);

  const auto model = build_model(make_arch("tiny-cnn"), 1010, {InitMode::kPretrained, dir / "imagenet.bin"},
                                 kHeadOnly, 5);
  const auto src = export_tensors(source);
  const auto dst = export_tensors(model);
  for (const auto& name : {"conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias"}) {
    CHECK(dst.at(name) == src.at(name));
  }
  CHECK(dst.at("head.weight").shape == std::vector<std::size_t>{1010, 16});
  for (double v : dst.at("head.weight").data) CHECK(std::abs(v) <= 0.25);  // 1/sqrt(16)
  for (double v : dst.at("head.bias").data) CHECK(v == 0.0);
  CHECK(model.warnings.empty());
}

TEST_CASE("pretrained: matching head is loaded as well") {
  TempDir dir;
  const auto source = build_model(make_arch("tiny-cnn"), 10, {}, kTrainAll, 1);
  save_weights(dir / "w.bin", source);
  const auto model = build_model(make_arch("tiny-cnn"), 10, {InitMode::kPretrained, dir / "w.bin"}, kTrainAll, 2);
  CHECK(export_tensors(model) == export_tensors(source));
}

TEST_CASE("pretrained: load then save reproduces every non-head tensor") {
  TempDir dir;
  const auto source = build_model(make_arch("tiny-cnn"), 12, {}, kTrainAll, 8);
  save_weights(dir / "a.bin", source);
  const auto model = build_model(make_arch("tiny-cnn"), 3, {InitMode::kPretrained, dir / "a.bin"}, kTrainAll, 9);
  save_weights(dir / "b.bin", model);
  const auto a = read_tensor_file(dir / "a.bin").tensors;
  const auto b = read_tensor_file(dir / "b.bin").tensors;
  for (const auto& [name, t] : b) {
    if (name.rfind("head.", 0) == 0) continue;
    CHECK(a.at(name) == t);
  }
}

TEST_CASE("pretrained: missing or mis-shaped backbone tensors name the tensor") {
  TempDir dir;
  const auto source = build_model(make_arch("tiny-cnn"), 4, {}, kTrainAll);
  TensorFile file;
  file.metadata = model_metadata(source);
  file.tensors = export_tensors(source);
  file.tensors.erase("conv2.bias");
  write_tensor_file(dir / "missing.bin", file);
  try {
    build_model(make_arch("tiny-cnn"), 4, {InitMode::kPretrained, dir / "missing.bin"}, kTrainAll);
    FAIL("expected LoadError");
  } catch (const LoadError& e) {
    CHECK(std::string(e.what()).find("conv2.bias") != std::string::npos);
  }

  file.tensors = export_tensors(source);
  file.tensors["conv1.weight"] = Tensor({8, 3, 5, 5});
  write_tensor_file(dir / "shape.bin", file);
  try {
    build_model(make_arch("tiny-cnn"), 4, {InitMode::kPretrained, dir / "shape.bin"}, kTrainAll);
    FAIL("expected LoadError");
  } catch (const LoadError& e) {
    CHECK(std::string(e.what()).find("conv1.weight") != std::string::npos);
  }
}

TEST_CASE("weights: save/load round trip and float32 export") {
  TempDir dir;
  auto model = build_model(make_arch("tiny-cnn", 20, 20), 5, {}, kTrainAll, 4);
  model.preprocess.normalize_mean = {0.1, 0.2, 0.3};
  save_weights(dir / "m.bin", model);
  const auto loaded = load_model(dir / "m.bin");
  CHECK(export_tensors(loaded) == export_tensors(model));
  CHECK(loaded.arch.input_dims == model.arch.input_dims);
  CHECK(loaded.preprocess.normalize_mean == model.preprocess.normalize_mean);
  CHECK(loaded.preprocess.target_height == 20);

  save_weights(dir / "m32.bin", model, TensorDType::kFloat32);
  const auto narrow = load_model(dir / "m32.bin");
  const auto a = export_tensors(model);
  for (const auto& [name, t] : export_tensors(narrow)) {
    for (std::size_t i = 0; i < t.numel(); ++i) {
      CHECK(t[i] == static_cast<double>(static_cast<float>(a.at(name)[i])));
    }
  }
}

TEST_CASE("build: thread-safe concurrent construction") {
  std::vector<std::thread> threads;
  std::vector<TensorMap> out(4);
  for (int i = 0; i < 4; ++i) {
    threads.emplace_back([&, i] { out[i] = export_tensors(build_model(make_arch("tiny-cnn"), 10, {}, kTrainAll, 42)); });
  }
  for (auto& t : threads) t.join();
  for (int i = 1; i < 4; ++i) CHECK(out[i] == out[0]);
}
