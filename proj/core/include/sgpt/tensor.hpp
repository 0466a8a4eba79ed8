#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace sgpt {

using Shape = std::vector<std::size_t>;

/// Product of all dimensions; 1 for the empty (scalar) shape.
std::size_t shape_size(const Shape& shape);

/// Human-readable form, e.g. "[2x3]" or "[scalar]".
std::string shape_str(const Shape& shape);

/// Dense row-major tensor of 64-bit floats with an optional same-shape
/// gradient buffer. Copies are shallow: a Tensor is a handle to a shared
/// payload, so parameters can appear both in a model and on a tape without
/// duplication. Payloads are treated as immutable after construction except
/// for the gradient buffer and explicit parameter updates via
/// mutable_data().
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor from_data(Shape shape, std::vector<double> data);
    static Tensor scalar(double value);

    bool defined() const { return static_cast<bool>(p_); }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t size() const;
    std::size_t dim(std::size_t axis) const;

    /// Value of a rank-0 or single-element tensor.
    double value() const;
    double at(std::size_t i) const;
    double at(std::size_t i, std::size_t j) const;

    std::span<const double> data() const;
    /// Direct write access, used by parameter initialization and SGD updates.
    std::vector<double>& mutable_data();

    bool requires_grad() const;
    void set_requires_grad(bool v);

    bool has_grad() const;
    std::span<const double> grad() const;
    /// Gradient buffer, allocated as zeros on first use.
    std::vector<double>& grad_buffer();
    void zero_grad();

    /// Tape node id that produced this tensor, or -1 for leaves.
    int node() const;

    /// True when both handles share one payload (identity, not equality).
    bool same_payload(const Tensor& other) const { return p_ == other.p_; }

private:
    friend class Tape;
    struct Payload {
        Shape shape;
        std::vector<double> data;
        std::vector<double> grad;  // empty or data.size()
        bool requires_grad = false;
        int node = -1;
    };
    explicit Tensor(std::shared_ptr<Payload> p) : p_(std::move(p)) {}
    std::shared_ptr<Payload> p_;
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

/// Reverse-mode automatic differentiation tape. Operations compute their
/// result eagerly and, when any input participates in differentiation,
/// append a node that knows how to push gradients back to its inputs. Nodes
/// are appended in execution order, so the sequence is already topologically
/// sorted and backward() is a single reverse sweep that visits each node
/// exactly once. A tape is built per forward pass and consumed by
/// backward(); there is no graph reuse.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Standard matrix product [m x k] * [k x n] -> [m x n].
    Tensor matmul(const Tensor& a, const Tensor& b);
    /// a * b^T for [m x k] and [n x k] -> [m x n].
    Tensor matmul_nt(const Tensor& a, const Tensor& b);

    Tensor add(const Tensor& a, const Tensor& b);
    /// Adds a length-n bias vector to every row of an [m x n] matrix.
    Tensor add_rowvec(const Tensor& x, const Tensor& bias);
    Tensor mul(const Tensor& a, const Tensor& b);
    Tensor mul_scalar(const Tensor& x, double c);

    /// Exact GELU, x * Phi(x) with Phi from erf (not the tanh approximation).
    Tensor gelu(const Tensor& x);

    /// Row-wise normalization to zero mean and unit variance followed by the
    /// affine map gain * xhat + bias. Variance is the population variance.
    Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                      double eps = 1e-5);

    /// Numerically stable log-softmax along the last axis.
    Tensor log_softmax(const Tensor& x);

    /// Row-wise softmax over an [S x S] score matrix where row i only sees
    /// columns j <= i; masked columns get probability zero.
    Tensor softmax_causal(const Tensor& scores);

    Tensor slice_cols(const Tensor& x, std::size_t first, std::size_t count);
    Tensor concat_cols(std::span<const Tensor> parts);
    /// Stacks rank-1 tensors of equal length into an [m x n] matrix.
    Tensor stack_rows(std::span<const Tensor> rows);
    Tensor reshape(const Tensor& x, Shape shape);

    /// Token embedding lookup plus positional embeddings:
    /// out[i, :] = tok[ids[i], :] + pos[i, :].
    Tensor embed_sequence(const Tensor& tok, const Tensor& pos,
                          std::span<const int> ids);

    /// Rows scaled to unit L2 norm; errors on a zero row.
    Tensor normalize_rows(const Tensor& x);

    Tensor sum(const Tensor& x);
    Tensor mean(const Tensor& x);
    /// -(1/M) * trace of an [M x M] matrix, the InfoNCE reduction.
    Tensor neg_mean_diag(const Tensor& x);
    /// y[i] = x[i, cols[i]] for an [m x n] input.
    Tensor gather_rows(const Tensor& x, std::span<const std::size_t> cols);

    /// Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse, accumulating
    /// gradients into every participating tensor. The loss must be a scalar
    /// produced by this tape. The tape is cleared afterwards.
    void backward(const Tensor& loss);

    std::size_t node_count() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    int push(std::function<void()> backward_fn);
    bool tracked(const Tensor& t) const;

    std::vector<std::function<void()>> nodes_;
};

}  // namespace sgpt
