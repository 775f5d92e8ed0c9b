#include "taxon/loss.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/core.h>

#include "taxon/error.hpp"

namespace taxon {

double log_sum_exp(std::span<const double> logits) {
  if (logits.empty()) throw ArgumentError("log-sum-exp of an empty vector");
  double m = logits[0];
  for (double z : logits) {
    if (!std::isfinite(z)) throw NumericError(fmt::format("non-finite logit {}", z));
    m = std::max(m, z);
  }
  double s = 0.0;
  for (double z : logits) s += std::exp(z - m);
  return m + std::log(s);
}

namespace {

void check_label(std::span<const double> logits, int label) {
  if (logits.size() < 2) {
    throw ArgumentError(fmt::format("cross entropy needs at least 2 classes, got {}", logits.size()));
  }
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    throw ArgumentError(fmt::format("label {} outside [0, {})", label, logits.size()));
  }
}

}  // namespace

double cross_entropy(std::span<const double> logits, int label) {
  check_label(logits, label);
  const double loss = log_sum_exp(logits) - logits[static_cast<std::size_t>(label)];
  // Rounding can leave a tiny negative value when the true class dominates.
  return std::max(loss, 0.0);
}

std::vector<double> cross_entropy_gradient(std::span<const double> logits, int label) {
  check_label(logits, label);
  const double lse = log_sum_exp(logits);
  std::vector<double> g(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) g[i] = std::exp(logits[i] - lse);
  g[static_cast<std::size_t>(label)] -= 1.0;
  return g;
}

}  // namespace taxon
