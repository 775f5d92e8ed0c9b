#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "taxon/loss.hpp"
#include "taxon/rng.hpp"
#include "taxon/tensor.hpp"

namespace taxon {

struct Parameter {
  std::string name;  // "<layer>.<weight|bias>"
  Tensor value;
  bool trainable = true;
};

/// One stage of a feed-forward network, operating on a single sample.
///
/// Layers are immutable during forward/backward; gradients are written into
/// caller-owned tensors so concurrent forward passes over a shared network
/// are safe.
class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;

  const std::string& name() const { return name_; }
  virtual std::string kind() const = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;

  virtual std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const = 0;
  virtual Tensor forward(const Tensor& x) const = 0;

  /// Accumulates parameter gradients into `param_grads` (one per parameter,
  /// skipped when empty) and returns dL/dx when `need_input_grad`.
  virtual Tensor backward(const Tensor& x, const Tensor& y, const Tensor& dy,
                          std::span<Tensor> param_grads, bool need_input_grad) const = 0;

  virtual void initialize(Rng& /*rng*/) {}

  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }

 protected:
  std::vector<Parameter> params_;

 private:
  std::string name_;
};

/// 2-D convolution, square kernel, stride 1, zero padding. CHW in and out.
class Conv2d final : public Layer {
 public:
  Conv2d(std::string name, std::size_t in_channels, std::size_t out_channels,
         std::size_t kernel, std::size_t padding);

  std::string kind() const override { return "conv2d"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }
  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override;
  Tensor forward(const Tensor& x) const override;
  Tensor backward(const Tensor& x, const Tensor& y, const Tensor& dy,
                  std::span<Tensor> param_grads, bool need_input_grad) const override;
  void initialize(Rng& rng) override;

  /// Uniform +-1/sqrt(fan_in) weights, zero bias (used for class-producing heads).
  void initialize_as_head(Rng& rng);

 private:
  std::size_t in_, out_, k_, pad_;
};

class Relu final : public Layer {
 public:
  using Layer::Layer;
  std::string kind() const override { return "relu"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Relu>(*this); }
  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override { return in; }
  Tensor forward(const Tensor& x) const override;
  Tensor backward(const Tensor& x, const Tensor& y, const Tensor& dy,
                  std::span<Tensor> param_grads, bool need_input_grad) const override;
};

/// 2x2 max pooling, stride 2, odd trailing row/column dropped.
class MaxPool2 final : public Layer {
 public:
  using Layer::Layer;
  std::string kind() const override { return "maxpool2"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool2>(*this); }
  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override;
  Tensor forward(const Tensor& x) const override;
  Tensor backward(const Tensor& x, const Tensor& y, const Tensor& dy,
                  std::span<Tensor> param_grads, bool need_input_grad) const override;
};

/// CHW -> C by spatial mean.
class GlobalAvgPool final : public Layer {
 public:
  using Layer::Layer;
  std::string kind() const override { return "global_avg_pool"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }
  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override;
  Tensor forward(const Tensor& x) const override;
  Tensor backward(const Tensor& x, const Tensor& y, const Tensor& dy,
                  std::span<Tensor> param_grads, bool need_input_grad) const override;
};

/// Fully connected layer; flattens its input.
class Linear final : public Layer {
 public:
  Linear(std::string name, std::size_t in_features, std::size_t out_features);

  std::string kind() const override { return "linear"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Linear>(*this); }
  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override;
  Tensor forward(const Tensor& x) const override;
  Tensor backward(const Tensor& x, const Tensor& y, const Tensor& dy,
                  std::span<Tensor> param_grads, bool need_input_grad) const override;
  /// Uniform +-1/sqrt(fan_in) weights, zero bias.
  void initialize(Rng& rng) override;

 private:
  std::size_t in_, out_;
};

/// Result of one forward+backward pass over a batch.
struct LossAndGradient {
  double mean_loss = 0.0;
  std::vector<double> example_losses;
  /// Aligned with Network::parameters(); empty tensors for frozen parameters.
  std::vector<Tensor> grads;
};

/// A sequential stack of layers. The last layer holding parameters is the
/// classifier head; parameter-free layers (pooling, activations) may follow it.
class Network {
 public:
  Network() = default;
  Network(std::vector<std::size_t> input_shape, std::vector<std::unique_ptr<Layer>> layers);
  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  const std::vector<std::size_t>& input_shape() const { return input_shape_; }
  std::size_t num_outputs() const { return output_shape_.empty() ? 0 : output_shape_.back(); }

  const Layer& head() const { return *layers_[head_index_]; }
  Layer& head() { return *layers_[head_index_]; }
  const std::vector<std::unique_ptr<Layer>>& layers() const { return layers_; }

  /// Every learnable tensor in layer order.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  bool is_head_parameter(const std::string& name) const;

  /// B x input_shape -> B x num_outputs. Rows are computed independently.
  Tensor forward(const Tensor& batch) const;
  Tensor forward_one(const Tensor& sample) const;

  /// Mean cross-entropy over the batch and its gradient w.r.t. every
  /// trainable parameter.
  LossAndGradient loss_and_gradient(const Tensor& batch, std::span<const int> labels) const;

 private:
  void check_batch(const Tensor& batch) const;

  std::vector<std::size_t> input_shape_;
  std::vector<std::size_t> output_shape_;
  std::vector<std::unique_ptr<Layer>> layers_;
  std::size_t head_index_ = 0;
};

}  // namespace taxon
