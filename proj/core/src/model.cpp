#include "sgpt/model.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "binio.hpp"
#include "sgpt/error.hpp"

namespace sgpt {

namespace {

constexpr std::uint16_t kCheckpointVersion = 1;
constexpr char kCheckpointMagic[4] = {'S', 'G', 'P', 'T'};

/// Deterministic standard-normal sampler: Box-Muller over mt19937_64 draws,
/// independent of the standard library's distribution internals so the same
/// seed yields the same parameters everywhere.
class GaussianSampler {
public:
    explicit GaussianSampler(std::uint64_t seed) : engine_(seed) {}

    double next(double stddev) {
        if (have_spare_) {
            have_spare_ = false;
            return spare_ * stddev;
        }
        const double u1 = unit_open();
        const double u2 = unit_open();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta) * stddev;
    }

private:
    double unit_open() {
        // (0, 1]: 53 random mantissa bits, shifted away from zero.
        return (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;
    }

    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

constexpr double kInitStddev = 0.02;

Tensor random_weight(Shape shape, GaussianSampler& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.mutable_data()) v = rng.next(kInitStddev);
    return t;
}

}  // namespace

void ModelConfig::validate() const {
    if (vocab_size < 1) throw ConfigError("vocab_size must be >= 1");
    if (n_layers < 1) throw ConfigError("n_layers must be >= 1");
    if (n_heads < 1) throw ConfigError("n_heads must be >= 1");
    if (d_model < 1) throw ConfigError("d_model must be >= 1");
    if (d_model % n_heads != 0) {
        throw ConfigError("d_model (" + std::to_string(d_model) +
                          ") must be divisible by n_heads (" +
                          std::to_string(n_heads) + ")");
    }
    if (d_ff < 0) throw ConfigError("d_ff must be >= 0 (0 selects 4*d_model)");
    if (max_seq_len < 1) throw ConfigError("max_seq_len must be >= 1");
}

DecoderModel DecoderModel::init(const ModelConfig& config) {
    config.validate();
    GaussianSampler rng(config.seed);
    const std::size_t v = static_cast<std::size_t>(config.vocab_size);
    const std::size_t d = static_cast<std::size_t>(config.d_model);
    const std::size_t f = static_cast<std::size_t>(config.ff_dim());
    const std::size_t l = static_cast<std::size_t>(config.max_seq_len);

    DecoderModel m;
    m.config_ = config;
    m.token_embedding_ = random_weight({v, d}, rng);
    m.position_embedding_ = random_weight({l, d}, rng);
    m.layers_.resize(static_cast<std::size_t>(config.n_layers));
    for (auto& layer : m.layers_) {
        layer.ln1_gain = Tensor::full({d}, 1.0);
        layer.ln1_bias = Tensor::zeros({d});
        layer.qkv_weight = random_weight({d, 3 * d}, rng);
        layer.qkv_bias = Tensor::zeros({3 * d});
        layer.out_weight = random_weight({d, d}, rng);
        layer.out_bias = Tensor::zeros({d});
        layer.ln2_gain = Tensor::full({d}, 1.0);
        layer.ln2_bias = Tensor::zeros({d});
        layer.ff1_weight = random_weight({d, f}, rng);
        layer.ff1_bias = Tensor::zeros({f});
        layer.ff2_weight = random_weight({f, d}, rng);
        layer.ff2_bias = Tensor::zeros({d});
    }
    m.final_ln_gain_ = Tensor::full({d}, 1.0);
    m.final_ln_bias_ = Tensor::zeros({d});
    if (!config.tie_lm_head) {
        m.lm_head_ = random_weight({v, d}, rng);
    }
    return m;
}

ForwardOutput DecoderModel::forward(const TokenSequence& tokens, Tape& tape) const {
    const std::size_t s = tokens.ids.size();
    if (s == 0) throw InputError("forward on an empty token sequence");
    if (s > static_cast<std::size_t>(config_.max_seq_len)) {
        throw ContractError("sequence length " + std::to_string(s) +
                            " exceeds max_seq_len " +
                            std::to_string(config_.max_seq_len) +
                            "; truncate before calling forward");
    }
    const std::size_t d = static_cast<std::size_t>(config_.d_model);
    const std::size_t heads = static_cast<std::size_t>(config_.n_heads);
    const std::size_t hd = static_cast<std::size_t>(config_.head_dim());
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    ForwardOutput out;
    Tensor x = tape.embed_sequence(token_embedding_, position_embedding_,
                                   tokens.ids);
    out.hidden_states.push_back(x);

    for (const Layer& layer : layers_) {
        Tensor a = tape.layer_norm(x, layer.ln1_gain, layer.ln1_bias);
        Tensor qkv = tape.add_rowvec(tape.matmul(a, layer.qkv_weight),
                                     layer.qkv_bias);
        std::vector<Tensor> head_ctx;
        head_ctx.reserve(heads);
        for (std::size_t h = 0; h < heads; ++h) {
            Tensor q = tape.slice_cols(qkv, h * hd, hd);
            Tensor k = tape.slice_cols(qkv, d + h * hd, hd);
            Tensor v = tape.slice_cols(qkv, 2 * d + h * hd, hd);
            Tensor scores = tape.mul_scalar(tape.matmul_nt(q, k), scale);
            Tensor probs = tape.softmax_causal(scores);
            head_ctx.push_back(tape.matmul(probs, v));
        }
        Tensor ctx = heads == 1 ? head_ctx[0] : tape.concat_cols(head_ctx);
        Tensor attn = tape.add_rowvec(tape.matmul(ctx, layer.out_weight),
                                      layer.out_bias);
        x = tape.add(x, attn);

        Tensor m = tape.layer_norm(x, layer.ln2_gain, layer.ln2_bias);
        Tensor h1 = tape.gelu(
            tape.add_rowvec(tape.matmul(m, layer.ff1_weight), layer.ff1_bias));
        Tensor h2 = tape.add_rowvec(tape.matmul(h1, layer.ff2_weight),
                                    layer.ff2_bias);
        x = tape.add(x, h2);
        out.hidden_states.push_back(x);
    }

    // The last reported layer carries the closing layer norm, so pooling at
    // the final layer sees the same matrix the logits come from.
    Tensor final_h = tape.layer_norm(x, final_ln_gain_, final_ln_bias_);
    out.hidden_states.back() = final_h;
    const Tensor& head = config_.tie_lm_head ? token_embedding_ : lm_head_;
    out.logits = tape.matmul_nt(final_h, head);
    return out;
}

ForwardOutput DecoderModel::forward(const TokenSequence& tokens) const {
    Tape tape;
    return forward(tokens, tape);
}

void DecoderModel::collect(std::vector<NamedTensor>& out) const {
    out.push_back({"token_embedding", token_embedding_});
    out.push_back({"position_embedding", position_embedding_});
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const std::string p = "layers." + std::to_string(i) + ".";
        const Layer& l = layers_[i];
        out.push_back({p + "ln1.gain", l.ln1_gain});
        out.push_back({p + "ln1.bias", l.ln1_bias});
        out.push_back({p + "attn.qkv.weight", l.qkv_weight});
        out.push_back({p + "attn.qkv.bias", l.qkv_bias});
        out.push_back({p + "attn.out.weight", l.out_weight});
        out.push_back({p + "attn.out.bias", l.out_bias});
        out.push_back({p + "ln2.gain", l.ln2_gain});
        out.push_back({p + "ln2.bias", l.ln2_bias});
        out.push_back({p + "mlp.ff1.weight", l.ff1_weight});
        out.push_back({p + "mlp.ff1.bias", l.ff1_bias});
        out.push_back({p + "mlp.ff2.weight", l.ff2_weight});
        out.push_back({p + "mlp.ff2.bias", l.ff2_bias});
    }
    out.push_back({"final_ln.gain", final_ln_gain_});
    out.push_back({"final_ln.bias", final_ln_bias_});
    if (!config_.tie_lm_head) out.push_back({"lm_head.weight", lm_head_});
}

std::vector<NamedTensor> DecoderModel::parameters() const {
    std::vector<NamedTensor> out;
    collect(out);
    return out;
}

std::vector<NamedTensor> DecoderModel::bias_parameters() const {
    std::vector<NamedTensor> out;
    for (const NamedTensor& p : parameters()) {
        if (p.name.size() >= 5 &&
            p.name.compare(p.name.size() - 5, 5, ".bias") == 0) {
            out.push_back(p);
        }
    }
    return out;
}

std::size_t DecoderModel::parameter_count(const ModelConfig& config) {
    config.validate();
    const std::size_t v = static_cast<std::size_t>(config.vocab_size);
    const std::size_t d = static_cast<std::size_t>(config.d_model);
    const std::size_t f = static_cast<std::size_t>(config.ff_dim());
    const std::size_t l = static_cast<std::size_t>(config.max_seq_len);
    const std::size_t n = static_cast<std::size_t>(config.n_layers);
    const std::size_t per_layer = (d * 3 * d + 3 * d)   // qkv
                                  + (d * d + d)         // out projection
                                  + (d * f + f)         // ff1
                                  + (f * d + d)         // ff2
                                  + 4 * d;              // ln1 + ln2
    std::size_t total = (v + l) * d + n * per_layer + 2 * d;
    if (!config.tie_lm_head) total += v * d;
    return total;
}

void DecoderModel::set_requires_grad(bool v) {
    for (NamedTensor& p : parameters()) p.tensor.set_requires_grad(v);
}

void DecoderModel::zero_grads() {
    for (NamedTensor& p : parameters()) p.tensor.zero_grad();
}

namespace {

std::string config_text(const ModelConfig& c) {
    std::ostringstream os;
    os << "vocab_size=" << c.vocab_size << '\n'
       << "n_layers=" << c.n_layers << '\n'
       << "n_heads=" << c.n_heads << '\n'
       << "d_model=" << c.d_model << '\n'
       << "d_ff=" << c.d_ff << '\n'
       << "max_seq_len=" << c.max_seq_len << '\n'
       << "tie_lm_head=" << (c.tie_lm_head ? 1 : 0) << '\n'
       << "seed=" << c.seed << '\n';
    return os.str();
}

ModelConfig parse_config_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw FormatError("checkpoint config line without '=': " + line);
        }
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto need = [&](const char* key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) {
            throw FormatError(std::string("checkpoint config missing key: ") + key);
        }
        return it->second;
    };
    ModelConfig c;
    c.vocab_size = std::stoi(need("vocab_size"));
    c.n_layers = std::stoi(need("n_layers"));
    c.n_heads = std::stoi(need("n_heads"));
    c.d_model = std::stoi(need("d_model"));
    c.d_ff = std::stoi(need("d_ff"));
    c.max_seq_len = std::stoi(need("max_seq_len"));
    c.tie_lm_head = std::stoi(need("tie_lm_head")) != 0;
    c.seed = std::stoull(need("seed"));
    return c;
}

}  // namespace

void DecoderModel::save_checkpoint(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);
    binio::write_bytes(os, kCheckpointMagic, 4);
    binio::write_uint<std::uint16_t>(os, kCheckpointVersion);
    const std::string cfg = config_text(config_);
    binio::write_uint<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.size()));
    binio::write_bytes(os, cfg.data(), cfg.size());
    for (const NamedTensor& p : parameters()) {
        binio::write_string16(os, p.name);
        const Shape& shape = p.tensor.shape();
        binio::write_uint<std::uint8_t>(os, static_cast<std::uint8_t>(shape.size()));
        for (std::size_t dim : shape) {
            binio::write_uint<std::uint32_t>(os, static_cast<std::uint32_t>(dim));
        }
        for (double v : p.tensor.data()) binio::write_f64(os, v);
    }
    os.flush();
    if (!os) throw IoError("checkpoint write failed: " + path);
}

DecoderModel DecoderModel::load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    binio::expect_magic(is, kCheckpointMagic, "checkpoint");
    const std::uint16_t version = binio::read_uint<std::uint16_t>(is);
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " +
                          std::to_string(version));
    }
    const std::uint32_t cfg_len = binio::read_uint<std::uint32_t>(is);
    std::string cfg_text(cfg_len, '\0');
    if (cfg_len > 0) binio::read_bytes(is, cfg_text.data(), cfg_len);
    const ModelConfig config = parse_config_text(cfg_text);
    config.validate();

    DecoderModel model = DecoderModel::init(config);
    for (NamedTensor& p : model.parameters()) {
        const std::string name = binio::read_string16(is);
        if (name != p.name) {
            throw CorruptionError("checkpoint parameter order mismatch: expected " +
                                  p.name + ", found " + name);
        }
        const std::uint8_t rank = binio::read_uint<std::uint8_t>(is);
        Shape shape(rank);
        for (auto& dim : shape) dim = binio::read_uint<std::uint32_t>(is);
        if (shape != p.tensor.shape()) {
            throw CorruptionError("checkpoint shape mismatch for " + p.name +
                                  ": " + shape_str(shape) + " vs " +
                                  shape_str(p.tensor.shape()));
        }
        auto& data = p.tensor.mutable_data();
        for (double& v : data) v = binio::read_f64(is);
    }
    binio::expect_eof(is, "checkpoint");
    return model;
}

}  // namespace sgpt
