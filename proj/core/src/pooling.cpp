#include "sgpt/pooling.hpp"

#include <string>

#include "sgpt/error.hpp"

namespace sgpt {

std::vector<double> position_weights(std::size_t seq_len, PoolingMethod method) {
    if (seq_len == 0) throw InputError("pooling weights over an empty sequence");
    std::vector<double> w(seq_len, 0.0);
    switch (method) {
        case PoolingMethod::WeightedMean: {
            const double denom =
                static_cast<double>(seq_len) * static_cast<double>(seq_len + 1) / 2.0;
            for (std::size_t i = 0; i < seq_len; ++i) {
                w[i] = static_cast<double>(i + 1) / denom;
            }
            break;
        }
        case PoolingMethod::Mean: {
            const double u = 1.0 / static_cast<double>(seq_len);
            for (double& v : w) v = u;
            break;
        }
        case PoolingMethod::LastToken:
            w[seq_len - 1] = 1.0;
            break;
    }
    return w;
}

Tensor pool(Tape& tape, const Tensor& hidden, const PoolingSpec& spec) {
    if (hidden.rank() != 2) {
        throw ShapeError("pool expects [S x d] hidden states, got " +
                         shape_str(hidden.shape()));
    }
    const std::size_t s = hidden.dim(0);
    const std::size_t d = hidden.dim(1);
    if (s == 0) throw InputError("pool over an empty sequence");
    Tensor weights = Tensor::from_data({1, s}, position_weights(s, spec.method));
    return tape.reshape(tape.matmul(weights, hidden), {d});
}

std::size_t resolve_pooling_layer(const PoolingSpec& spec, int n_layers) {
    const int layer = spec.layer < 0 ? n_layers : spec.layer;
    if (layer < 0 || layer > n_layers) {
        throw InputError("pooling layer " + std::to_string(spec.layer) +
                         " outside [0, " + std::to_string(n_layers) + "]");
    }
    return static_cast<std::size_t>(layer);
}

const char* pooling_method_name(PoolingMethod method) {
    switch (method) {
        case PoolingMethod::WeightedMean: return "weightedmean";
        case PoolingMethod::Mean: return "mean";
        case PoolingMethod::LastToken: return "lasttoken";
    }
    return "?";
}

PoolingMethod pooling_method_from_name(const std::string& name) {
    if (name == "weightedmean") return PoolingMethod::WeightedMean;
    if (name == "mean") return PoolingMethod::Mean;
    if (name == "lasttoken") return PoolingMethod::LastToken;
    throw InputError("unknown pooling method: " + name +
                     " (expected weightedmean, mean or lasttoken)");
}

}  // namespace sgpt
