#pragma once

// Test-only oracles for the training code: central finite differences over
// Network::forward + cross_entropy, independent of the backward pass.

#include <cmath>
#include <span>
#include <vector>

#include "taxon/loss.hpp"
#include "taxon/network.hpp"

namespace taxon::testing {

inline double batch_loss(const Network& net, const Tensor& batch, std::span<const int> labels) {
  const Tensor logits = net.forward(batch);
  const std::size_t K = logits.shape[1];
  double total = 0.0;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    total += cross_entropy(std::span<const double>(logits.data.data() + b * K, K), labels[b]);
  }
  return total / static_cast<double>(labels.size());
}

/// Central-difference gradient for every parameter, flattened in parameter order.
inline std::vector<double> finite_difference_gradient(Network net, const Tensor& batch,
                                                      std::span<const int> labels, double step) {
  std::vector<double> out;
  for (auto* p : net.parameters()) {
    for (auto& v : p->value.data) {
      const double saved = v;
      v = saved + step;
      const double up = batch_loss(net, batch, labels);
      v = saved - step;
      const double down = batch_loss(net, batch, labels);
      v = saved;
      out.push_back((up - down) / (2.0 * step));
    }
  }
  return out;
}

/// ||a - b|| / max(||a||, ||b||), or 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

inline std::vector<double> flatten(const std::vector<Tensor>& grads) {
  std::vector<double> out;
  for (const auto& g : grads) out.insert(out.end(), g.data.begin(), g.data.end());
  return out;
}

}  // namespace taxon::testing
