#include "taxon/network.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/core.h>

#include "taxon/error.hpp"

namespace taxon {

namespace {

void fill_uniform(Tensor& t, Rng& rng, double bound) {
  for (auto& v : t.data) v = rng.uniform(-bound, bound);
}

void expect_rank(const std::vector<std::size_t>& in, std::size_t rank, const std::string& layer) {
  if (in.size() != rank) {
    throw ShapeError(fmt::format("layer '{}' expects a rank-{} input, got {}", layer, rank,
                                 shape_string(in)));
  }
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::string name, std::size_t in_channels, std::size_t out_channels,
               std::size_t kernel, std::size_t padding)
    : Layer(std::move(name)), in_(in_channels), out_(out_channels), k_(kernel), pad_(padding) {
  params_.push_back({this->name() + ".weight", Tensor({out_, in_, k_, k_}), true});
  params_.push_back({this->name() + ".bias", Tensor({out_}), true});
}

std::vector<std::size_t> Conv2d::output_shape(const std::vector<std::size_t>& in) const {
  expect_rank(in, 3, name());
  if (in[0] != in_) {
    throw ShapeError(fmt::format("layer '{}' expects {} channels, got {}", name(), in_, in[0]));
  }
  if (in[1] + 2 * pad_ < k_ || in[2] + 2 * pad_ < k_) {
    throw ShapeError(fmt::format("layer '{}' input {} smaller than kernel", name(), shape_string(in)));
  }
  return {out_, in[1] + 2 * pad_ - k_ + 1, in[2] + 2 * pad_ - k_ + 1};
}

Tensor Conv2d::forward(const Tensor& x) const {
  const auto os = output_shape(x.shape);
  const std::size_t H = x.shape[1], W = x.shape[2];
  const std::size_t OH = os[1], OW = os[2];
  const auto& w = params_[0].value;
  const auto& b = params_[1].value;
  Tensor y(os);
  const auto ipad = static_cast<std::ptrdiff_t>(pad_);
  for (std::size_t o = 0; o < out_; ++o) {
    double* yo = y.data.data() + o * OH * OW;
    std::fill(yo, yo + OH * OW, b[o]);
    for (std::size_t c = 0; c < in_; ++c) {
      const double* xc = x.data.data() + c * H * W;
      for (std::size_t ki = 0; ki < k_; ++ki) {
        for (std::size_t kj = 0; kj < k_; ++kj) {
          const double wv = w[((o * in_ + c) * k_ + ki) * k_ + kj];
          const auto dj = static_cast<std::ptrdiff_t>(kj) - ipad;
          const std::size_t j_lo = dj < 0 ? static_cast<std::size_t>(-dj) : 0;
          const auto j_hi = static_cast<std::size_t>(std::max<std::ptrdiff_t>(
              0, std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(OW), static_cast<std::ptrdiff_t>(W) - dj)));
          for (std::size_t i = 0; i < OH; ++i) {
            const auto si = static_cast<std::ptrdiff_t>(i + ki) - ipad;
            if (si < 0 || si >= static_cast<std::ptrdiff_t>(H)) continue;
            const double* xrow = xc + static_cast<std::size_t>(si) * W;
            double* yrow = yo + i * OW;
            for (std::size_t j = j_lo; j < j_hi; ++j) yrow[j] += wv * xrow[j + dj];
          }
        }
      }
    }
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& x, const Tensor& /*y*/, const Tensor& dy,
                        std::span<Tensor> param_grads, bool need_input_grad) const {
  const std::size_t H = x.shape[1], W = x.shape[2];
  const std::size_t OH = dy.shape[1], OW = dy.shape[2];
  const auto& w = params_[0].value;
  Tensor* dw = param_grads[0].numel() ? &param_grads[0] : nullptr;
  Tensor* db = param_grads[1].numel() ? &param_grads[1] : nullptr;
  Tensor dx;
  if (need_input_grad) dx = Tensor(x.shape);
  const auto ipad = static_cast<std::ptrdiff_t>(pad_);

  for (std::size_t o = 0; o < out_; ++o) {
    const double* dyo = dy.data.data() + o * OH * OW;
    if (db) {
      double s = 0.0;
      for (std::size_t p = 0; p < OH * OW; ++p) s += dyo[p];
      (*db)[o] += s;
    }
    for (std::size_t c = 0; c < in_; ++c) {
      const double* xc = x.data.data() + c * H * W;
      double* dxc = need_input_grad ? dx.data.data() + c * H * W : nullptr;
      for (std::size_t ki = 0; ki < k_; ++ki) {
        for (std::size_t kj = 0; kj < k_; ++kj) {
          const std::size_t widx = ((o * in_ + c) * k_ + ki) * k_ + kj;
          const double wv = w[widx];
          const auto dj = static_cast<std::ptrdiff_t>(kj) - ipad;
          const std::size_t j_lo = dj < 0 ? static_cast<std::size_t>(-dj) : 0;
          const auto j_hi = static_cast<std::size_t>(std::max<std::ptrdiff_t>(
              0, std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(OW), static_cast<std::ptrdiff_t>(W) - dj)));
          double acc = 0.0;
          for (std::size_t i = 0; i < OH; ++i) {
            const auto si = static_cast<std::ptrdiff_t>(i + ki) - ipad;
            if (si < 0 || si >= static_cast<std::ptrdiff_t>(H)) continue;
            const double* xrow = xc + static_cast<std::size_t>(si) * W;
            const double* dyrow = dyo + i * OW;
            if (dw) {
              for (std::size_t j = j_lo; j < j_hi; ++j) acc += dyrow[j] * xrow[j + dj];
            }
            if (dxc) {
              double* dxrow = dxc + static_cast<std::size_t>(si) * W;
              for (std::size_t j = j_lo; j < j_hi; ++j) dxrow[j + dj] += wv * dyrow[j];
            }
          }
          if (dw) (*dw)[widx] += acc;
        }
      }
    }
  }
  return dx;
}

void Conv2d::initialize(Rng& rng) {
  // He-uniform for ReLU stacks.
  const double fan_in = static_cast<double>(in_ * k_ * k_);
  fill_uniform(params_[0].value, rng, std::sqrt(6.0 / fan_in));
  std::fill(params_[1].value.data.begin(), params_[1].value.data.end(), 0.0);
}

void Conv2d::initialize_as_head(Rng& rng) {
  const double fan_in = static_cast<double>(in_ * k_ * k_);
  fill_uniform(params_[0].value, rng, 1.0 / std::sqrt(fan_in));
  std::fill(params_[1].value.data.begin(), params_[1].value.data.end(), 0.0);
}

// ---------------------------------------------------------------- Relu

Tensor Relu::forward(const Tensor& x) const {
  Tensor y = x;
  for (auto& v : y.data) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor Relu::backward(const Tensor& x, const Tensor& /*y*/, const Tensor& dy,
                      std::span<Tensor> /*param_grads*/, bool need_input_grad) const {
  if (!need_input_grad) return {};
  Tensor dx(x.shape);
  for (std::size_t i = 0; i < x.numel(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
  return dx;
}

// ---------------------------------------------------------------- MaxPool2

std::vector<std::size_t> MaxPool2::output_shape(const std::vector<std::size_t>& in) const {
  expect_rank(in, 3, name());
  if (in[1] < 2 || in[2] < 2) {
    throw ShapeError(fmt::format("layer '{}' input {} too small to pool", name(), shape_string(in)));
  }
  return {in[0], in[1] / 2, in[2] / 2};
}

Tensor MaxPool2::forward(const Tensor& x) const {
  const auto os = output_shape(x.shape);
  const std::size_t W = x.shape[2];
  Tensor y(os);
  for (std::size_t c = 0; c < os[0]; ++c) {
    const double* xc = x.data.data() + c * x.shape[1] * W;
    for (std::size_t i = 0; i < os[1]; ++i) {
      for (std::size_t j = 0; j < os[2]; ++j) {
        const double* p = xc + 2 * i * W + 2 * j;
        y[(c * os[1] + i) * os[2] + j] = std::max({p[0], p[1], p[W], p[W + 1]});
      }
    }
  }
  return y;
}

Tensor MaxPool2::backward(const Tensor& x, const Tensor& /*y*/, const Tensor& dy,
                          std::span<Tensor> /*param_grads*/, bool need_input_grad) const {
  if (!need_input_grad) return {};
  const std::size_t W = x.shape[2];
  const std::size_t OH = dy.shape[1], OW = dy.shape[2];
  Tensor dx(x.shape);
  for (std::size_t c = 0; c < dy.shape[0]; ++c) {
    const std::size_t base = c * x.shape[1] * W;
    for (std::size_t i = 0; i < OH; ++i) {
      for (std::size_t j = 0; j < OW; ++j) {
        // First maximum in row-major window order receives the gradient.
        const std::size_t cand[4] = {base + 2 * i * W + 2 * j, base + 2 * i * W + 2 * j + 1,
                                     base + (2 * i + 1) * W + 2 * j,
                                     base + (2 * i + 1) * W + 2 * j + 1};
        std::size_t best = cand[0];
        for (std::size_t k = 1; k < 4; ++k) {
          if (x[cand[k]] > x[best]) best = cand[k];
        }
        dx[best] += dy[(c * OH + i) * OW + j];
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------- GlobalAvgPool

std::vector<std::size_t> GlobalAvgPool::output_shape(const std::vector<std::size_t>& in) const {
  expect_rank(in, 3, name());
  return {in[0]};
}

Tensor GlobalAvgPool::forward(const Tensor& x) const {
  const std::size_t C = x.shape[0];
  const std::size_t n = x.shape[1] * x.shape[2];
  Tensor y({C});
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::size_t p = 0; p < n; ++p) s += x[c * n + p];
    y[c] = s / static_cast<double>(n);
  }
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& x, const Tensor& /*y*/, const Tensor& dy,
                               std::span<Tensor> /*param_grads*/, bool need_input_grad) const {
  if (!need_input_grad) return {};
  const std::size_t C = x.shape[0];
  const std::size_t n = x.shape[1] * x.shape[2];
  Tensor dx(x.shape);
  for (std::size_t c = 0; c < C; ++c) {
    const double g = dy[c] / static_cast<double>(n);
    for (std::size_t p = 0; p < n; ++p) dx[c * n + p] = g;
  }
  return dx;
}

// ---------------------------------------------------------------- Linear

Linear::Linear(std::string name, std::size_t in_features, std::size_t out_features)
    : Layer(std::move(name)), in_(in_features), out_(out_features) {
  params_.push_back({this->name() + ".weight", Tensor({out_, in_}), true});
  params_.push_back({this->name() + ".bias", Tensor({out_}), true});
}

std::vector<std::size_t> Linear::output_shape(const std::vector<std::size_t>& in) const {
  if (Tensor::count(in) != in_) {
    throw ShapeError(fmt::format("layer '{}' expects {} features, got {}", name(), in_, shape_string(in)));
  }
  return {out_};
}

Tensor Linear::forward(const Tensor& x) const {
  output_shape(x.shape);
  const auto& w = params_[0].value;
  const auto& b = params_[1].value;
  Tensor y({out_});
  for (std::size_t o = 0; o < out_; ++o) {
    double s = b[o];
    const double* wr = w.data.data() + o * in_;
    for (std::size_t i = 0; i < in_; ++i) s += wr[i] * x[i];
    y[o] = s;
  }
  return y;
}

Tensor Linear::backward(const Tensor& x, const Tensor& /*y*/, const Tensor& dy,
                        std::span<Tensor> param_grads, bool need_input_grad) const {
  if (param_grads[0].numel()) {
    for (std::size_t o = 0; o < out_; ++o) {
      double* gr = param_grads[0].data.data() + o * in_;
      for (std::size_t i = 0; i < in_; ++i) gr[i] += dy[o] * x[i];
    }
  }
  if (param_grads[1].numel()) {
    for (std::size_t o = 0; o < out_; ++o) param_grads[1][o] += dy[o];
  }
  if (!need_input_grad) return {};
  const auto& w = params_[0].value;
  Tensor dx(x.shape);
  for (std::size_t o = 0; o < out_; ++o) {
    const double* wr = w.data.data() + o * in_;
    for (std::size_t i = 0; i < in_; ++i) dx[i] += wr[i] * dy[o];
  }
  return dx;
}

void Linear::initialize(Rng& rng) {
  fill_uniform(params_[0].value, rng, 1.0 / std::sqrt(static_cast<double>(in_)));
  std::fill(params_[1].value.data.begin(), params_[1].value.data.end(), 0.0);
}

// ---------------------------------------------------------------- Network

Network::Network(std::vector<std::size_t> input_shape, std::vector<std::unique_ptr<Layer>> layers)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
  if (layers_.empty()) throw ArgumentError("network needs at least one layer");
  auto shape = input_shape_;
  for (const auto& l : layers_) shape = l->output_shape(shape);
  if (shape.size() != 1) {
    throw ShapeError(fmt::format("network output must be a vector, got {}", shape_string(shape)));
  }
  output_shape_ = shape;
  head_index_ = layers_.size();
  for (std::size_t i = layers_.size(); i-- > 0;) {
    if (!layers_[i]->params().empty()) {
      head_index_ = i;
      break;
    }
  }
  if (head_index_ == layers_.size()) throw ArgumentError("network has no learnable layer");
}

Network::Network(const Network& other)
    : input_shape_(other.input_shape_), output_shape_(other.output_shape_), head_index_(other.head_index_) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Network& Network::operator=(const Network& other) {
  if (this != &other) *this = Network(other);
  return *this;
}

std::vector<Parameter*> Network::parameters() {
  std::vector<Parameter*> out;
  for (auto& l : layers_) {
    for (auto& p : l->params()) out.push_back(&p);
  }
  return out;
}

std::vector<const Parameter*> Network::parameters() const {
  std::vector<const Parameter*> out;
  for (const auto& l : layers_) {
    for (const auto& p : l->params()) out.push_back(&p);
  }
  return out;
}

bool Network::is_head_parameter(const std::string& name) const {
  for (const auto& p : head().params()) {
    if (p.name == name) return true;
  }
  return false;
}

void Network::check_batch(const Tensor& batch) const {
  const bool ok = batch.shape.size() == input_shape_.size() + 1 &&
                  std::equal(input_shape_.begin(), input_shape_.end(), batch.shape.begin() + 1);
  if (!ok) {
    throw ShapeError(fmt::format("batch shape {} does not match input B x {}",
                                 shape_string(batch.shape), shape_string(input_shape_)));
  }
}

Tensor Network::forward_one(const Tensor& sample) const {
  Tensor a = sample;
  for (const auto& l : layers_) a = l->forward(a);
  return a;
}

Tensor Network::forward(const Tensor& batch) const {
  check_batch(batch);
  const std::size_t B = batch.shape[0];
  const std::size_t per = Tensor::count(input_shape_);
  const std::size_t K = num_outputs();
  Tensor out({B, K});
  Tensor sample(input_shape_);
  for (std::size_t b = 0; b < B; ++b) {
    std::copy_n(batch.data.begin() + static_cast<std::ptrdiff_t>(b * per), per, sample.data.begin());
    const Tensor logits = forward_one(sample);
    std::copy(logits.data.begin(), logits.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(b * K));
  }
  return out;
}

LossAndGradient Network::loss_and_gradient(const Tensor& batch, std::span<const int> labels) const {
  check_batch(batch);
  const std::size_t B = batch.shape[0];
  if (labels.size() != B) {
    throw ShapeError(fmt::format("{} labels for a batch of {}", labels.size(), B));
  }
  if (B == 0) throw ShapeError("empty batch");

  LossAndGradient result;
  const auto params = parameters();
  result.grads.resize(params.size());
  // Per-layer spans into result.grads, and the first layer that needs a gradient.
  std::vector<std::size_t> offset(layers_.size() + 1, 0);
  std::size_t first_trainable = layers_.size();
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    offset[l + 1] = offset[l] + layers_[l]->params().size();
    for (const auto& p : layers_[l]->params()) {
      if (p.trainable && first_trainable == layers_.size()) first_trainable = l;
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->trainable) result.grads[i] = Tensor(params[i]->value.shape);
  }

  const std::size_t per = Tensor::count(input_shape_);
  std::vector<Tensor> acts(layers_.size() + 1);
  acts[0] = Tensor(input_shape_);
  result.example_losses.resize(B);
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    std::copy_n(batch.data.begin() + static_cast<std::ptrdiff_t>(b * per), per, acts[0].data.begin());
    for (std::size_t l = 0; l < layers_.size(); ++l) acts[l + 1] = layers_[l]->forward(acts[l]);
    const auto& logits = acts.back().data;
    const double loss = cross_entropy(logits, labels[b]);
    result.example_losses[b] = loss;
    total += loss;

    if (first_trainable == layers_.size()) continue;
    Tensor grad(acts.back().shape);
    const auto g = cross_entropy_gradient(logits, labels[b]);
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] = g[i] / static_cast<double>(B);
    for (std::size_t l = layers_.size(); l-- > first_trainable;) {
      std::span<Tensor> pg(result.grads.data() + offset[l], offset[l + 1] - offset[l]);
      grad = layers_[l]->backward(acts[l], acts[l + 1], grad, pg, l > first_trainable);
    }
  }
  result.mean_loss = total / static_cast<double>(B);
  return result;
}

}  // namespace taxon
