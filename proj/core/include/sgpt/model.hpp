#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sgpt/tensor.hpp"
#include "sgpt/tokenizer.hpp"

namespace sgpt {

struct ModelConfig {
    int vocab_size = kVocabSize;
    int n_layers = 2;
    int n_heads = 2;
    int d_model = 16;
    int d_ff = 0;  // 0 resolves to 4 * d_model
    int max_seq_len = 128;
    bool tie_lm_head = true;
    std::uint64_t seed = 42;

    int ff_dim() const { return d_ff > 0 ? d_ff : 4 * d_model; }
    int head_dim() const { return d_model / n_heads; }
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

/// Per-layer hidden states plus LM logits. hidden_states[0] is the embedding
/// output before the first block; hidden_states[k] for 0 < k < n_layers is
/// the residual stream after block k; hidden_states[n_layers] is the final
/// residual stream after the closing layer norm, the matrix the logits are
/// projected from.
struct ForwardOutput {
    std::vector<Tensor> hidden_states;  // n_layers + 1 entries, each [S x d]
    Tensor logits;                      // [S x vocab]
};

/// Pre-LN causal decoder transformer:
///   x += attn(ln1(x));  x += mlp(ln2(x))
/// with a fused qkv projection, exact-GELU MLP, learned absolute position
/// embeddings and (by default) the LM head tied to the token embedding.
///
/// Parameter count (documented closed form, tie_lm_head=true):
///   V*d + L*d + n_layers * (12*d^2' + 13*d')   [with d' terms expanded below]
/// Precisely: per layer qkv d*3d + 3d, out d*d + d, ff1 d*f + f, ff2 f*d + d,
/// ln1/ln2 gains+biases 4d, plus final layer norm 2d and embeddings
/// (V + L) * d. An untied head adds V*d. parameter_count() evaluates this and
/// is checked against an enumeration of the parameter tree in the tests.
class DecoderModel {
public:
    static DecoderModel init(const ModelConfig& config);

    const ModelConfig& config() const { return config_; }

    /// Runs the decoder over 1..max_seq_len token ids. Longer sequences are
    /// rejected; callers truncate first.
    ForwardOutput forward(const TokenSequence& tokens, Tape& tape) const;
    /// Convenience overload with a throwaway tape (inference).
    ForwardOutput forward(const TokenSequence& tokens) const;

    /// All parameters in canonical order (embeddings, layers 0..n-1 in block
    /// order, final layer norm, untied head last).
    std::vector<NamedTensor> parameters() const;

    /// Exactly the additive-offset tensors updated under bias-only
    /// fine-tuning: per layer the qkv, out-projection, ff1 and ff2 biases and
    /// both layer-norm biases (6 per layer), plus the final layer-norm bias.
    /// Gains, embeddings and weight matrices are excluded.
    std::vector<NamedTensor> bias_parameters() const;

    static std::size_t parameter_count(const ModelConfig& config);

    void set_requires_grad(bool v);
    void zero_grads();

    /// Checkpoint layout: magic "SGPT", version u16, u32-length-prefixed
    /// "key=value\n" config text, then each parameter in canonical order as
    /// {name: u16 length + bytes, rank u8, dims u32 each, f64 little-endian
    /// payload}.
    void save_checkpoint(const std::string& path) const;
    static DecoderModel load_checkpoint(const std::string& path);

    const Tensor& token_embedding() const { return token_embedding_; }

private:
    struct Layer {
        Tensor ln1_gain, ln1_bias;
        Tensor qkv_weight, qkv_bias;  // [d x 3d], [3d]
        Tensor out_weight, out_bias;  // [d x d], [d]
        Tensor ln2_gain, ln2_bias;
        Tensor ff1_weight, ff1_bias;  // [d x f], [f]
        Tensor ff2_weight, ff2_bias;  // [f x d], [d]
    };

    ModelConfig config_;
    Tensor token_embedding_;     // [V x d]
    Tensor position_embedding_;  // [L x d]
    std::vector<Layer> layers_;
    Tensor final_ln_gain_, final_ln_bias_;
    Tensor lm_head_;  // defined only when tie_lm_head is false

    void collect(std::vector<NamedTensor>& out) const;
};

}  // namespace sgpt
