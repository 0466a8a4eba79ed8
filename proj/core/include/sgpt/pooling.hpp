#pragma once

#include <cstddef>
#include <vector>

#include "sgpt/tensor.hpp"

namespace sgpt {

enum class PoolingMethod { WeightedMean, Mean, LastToken };

/// Which hidden-state matrix to pool and how. layer -1 selects the final
/// layer (the post-layer-norm output); otherwise layer must lie in
/// [0, n_layers] following the hidden-state numbering of ForwardOutput.
struct PoolingSpec {
    PoolingMethod method = PoolingMethod::WeightedMean;
    int layer = -1;
};

/// Position weights over a length-S sequence. WeightedMean gives token i
/// (1-indexed) the weight i / sum(1..S), so later tokens - the only ones
/// that have attended to the full prefix - count more. Mean is uniform;
/// LastToken is a one-hot on the final position.
std::vector<double> position_weights(std::size_t seq_len, PoolingMethod method);

/// Reduces an [S x d] hidden-state matrix to a length-d embedding as the
/// weighted sum of rows. Differentiable when hidden participates in a tape.
/// Callers pass only real-token rows; padding is never pooled.
Tensor pool(Tape& tape, const Tensor& hidden, const PoolingSpec& spec);

/// Resolves spec.layer against a model with n_layers blocks, validating the
/// range. Returns an index into ForwardOutput::hidden_states.
std::size_t resolve_pooling_layer(const PoolingSpec& spec, int n_layers);

const char* pooling_method_name(PoolingMethod method);
PoolingMethod pooling_method_from_name(const std::string& name);

}  // namespace sgpt
