#pragma once

#include <span>
#include <vector>

namespace taxon {

/// max + log(sum(exp(z - max))). Throws NumericError on non-finite input.
double log_sum_exp(std::span<const double> logits);

/// -log(softmax(logits)[label]) in log-sum-exp form.
///
/// Requires at least two logits and a label in range (ArgumentError);
/// non-finite logits raise NumericError.
double cross_entropy(std::span<const double> logits, int label);

/// softmax(logits) - onehot(label), the gradient of cross_entropy w.r.t. the logits.
std::vector<double> cross_entropy_gradient(std::span<const double> logits, int label);

}  // namespace taxon
