#include "sgpt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "sgpt/error.hpp"

namespace sgpt {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    if (shape.empty()) return "[scalar]";
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor Tensor::zeros(Shape shape) {
    auto p = std::make_shared<Payload>();
    p->data.assign(shape_size(shape), 0.0);
    p->shape = std::move(shape);
    return Tensor(std::move(p));
}

Tensor Tensor::full(Shape shape, double value) {
    auto p = std::make_shared<Payload>();
    p->data.assign(shape_size(shape), value);
    p->shape = std::move(shape);
    return Tensor(std::move(p));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
    if (shape_size(shape) != data.size()) {
        throw ShapeError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    }
    auto p = std::make_shared<Payload>();
    p->shape = std::move(shape);
    p->data = std::move(data);
    return Tensor(std::move(p));
}

Tensor Tensor::scalar(double value) {
    auto p = std::make_shared<Payload>();
    p->data.assign(1, value);
    return Tensor(std::move(p));
}

const Shape& Tensor::shape() const {
    static const Shape empty;
    return p_ ? p_->shape : empty;
}

std::size_t Tensor::size() const { return p_ ? p_->data.size() : 0; }

std::size_t Tensor::dim(std::size_t axis) const {
    if (!p_ || axis >= p_->shape.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                         shape_str(shape()));
    }
    return p_->shape[axis];
}

double Tensor::value() const {
    if (!p_ || p_->data.size() != 1) {
        throw ContractError("value() requires a scalar tensor, got " +
                            shape_str(shape()));
    }
    return p_->data[0];
}

double Tensor::at(std::size_t i) const {
    if (!p_ || p_->shape.size() != 1 || i >= p_->shape[0]) {
        throw ShapeError("bad rank-1 access into " + shape_str(shape()));
    }
    return p_->data[i];
}

double Tensor::at(std::size_t i, std::size_t j) const {
    if (!p_ || p_->shape.size() != 2 || i >= p_->shape[0] || j >= p_->shape[1]) {
        throw ShapeError("bad rank-2 access into " + shape_str(shape()));
    }
    return p_->data[i * p_->shape[1] + j];
}

std::span<const double> Tensor::data() const {
    if (!p_) return {};
    return {p_->data.data(), p_->data.size()};
}

std::vector<double>& Tensor::mutable_data() {
    if (!p_) throw ContractError("mutable_data() on an undefined tensor");
    return p_->data;
}

bool Tensor::requires_grad() const { return p_ && p_->requires_grad; }

void Tensor::set_requires_grad(bool v) {
    if (!p_) throw ContractError("set_requires_grad() on an undefined tensor");
    p_->requires_grad = v;
}

bool Tensor::has_grad() const { return p_ && !p_->grad.empty(); }

std::span<const double> Tensor::grad() const {
    if (!has_grad()) return {};
    return {p_->grad.data(), p_->grad.size()};
}

std::vector<double>& Tensor::grad_buffer() {
    if (!p_) throw ContractError("grad_buffer() on an undefined tensor");
    if (p_->grad.empty()) p_->grad.assign(p_->data.size(), 0.0);
    return p_->grad;
}

void Tensor::zero_grad() {
    if (p_ && !p_->grad.empty()) std::fill(p_->grad.begin(), p_->grad.end(), 0.0);
}

int Tensor::node() const { return p_ ? p_->node : -1; }

namespace {

void require_rank2(const Tensor& t, const char* what) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(what) + " requires a rank-2 tensor, got " +
                         shape_str(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + " shape mismatch: " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

}  // namespace

bool Tape::tracked(const Tensor& t) const {
    return t.requires_grad() || t.node() >= 0;
}

int Tape::push(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
    return static_cast<int>(nodes_.size()) - 1;
}

// Gradient flow helper: accumulation targets are payloads, reached through
// copies of the Tensor handles captured by each closure.
namespace {
std::span<const double> out_grad(const Tensor& out) {
    return out.grad();  // empty means no gradient reached this node
}
}  // namespace

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2) {
        throw ShapeError("matmul inner dimensions disagree: " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    Tensor out = Tensor::zeros({m, n});
    auto& y = out.mutable_data();
    auto av = a.data();
    auto bv = b.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            if (aip == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) {
                y[i * n + j] += aip * bv[p * n + j];
            }
        }
    }
    if (tracked(a) || tracked(b)) {
        Tensor ac = a, bc = b, oc = out;
        out.p_->node = push([ac, bc, oc, m, k, n]() mutable {
            auto gy = out_grad(oc);
            if (gy.empty()) return;
            if (ac.requires_grad() || ac.node() >= 0) {
                auto& ga = ac.grad_buffer();
                auto bv2 = bc.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        const double g = gy[i * n + j];
                        if (g == 0.0) continue;
                        for (std::size_t p = 0; p < k; ++p)
                            ga[i * k + p] += g * bv2[p * n + j];
                    }
            }
            if (bc.requires_grad() || bc.node() >= 0) {
                auto& gb = bc.grad_buffer();
                auto av2 = ac.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const double apv = av2[i * k + p];
                        if (apv == 0.0) continue;
                        for (std::size_t j = 0; j < n; ++j)
                            gb[p * n + j] += apv * gy[i * n + j];
                    }
            }
        });
    }
    return out;
}

Tensor Tape::matmul_nt(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul_nt");
    require_rank2(b, "matmul_nt");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (k != b.dim(1)) {
        throw ShapeError("matmul_nt inner dimensions disagree: " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()) +
                         "^T");
    }
    Tensor out = Tensor::zeros({m, n});
    auto& y = out.mutable_data();
    auto av = a.data();
    auto bv = b.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += av[i * k + p] * bv[j * k + p];
            y[i * n + j] = acc;
        }
    }
    if (tracked(a) || tracked(b)) {
        Tensor ac = a, bc = b, oc = out;
        out.p_->node = push([ac, bc, oc, m, k, n]() mutable {
            auto gy = out_grad(oc);
            if (gy.empty()) return;
            if (ac.requires_grad() || ac.node() >= 0) {
                auto& ga = ac.grad_buffer();
                auto bv2 = bc.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        const double g = gy[i * n + j];
                        if (g == 0.0) continue;
                        for (std::size_t p = 0; p < k; ++p)
                            ga[i * k + p] += g * bv2[j * k + p];
                    }
            }
            if (bc.requires_grad() || bc.node() >= 0) {
                auto& gb = bc.grad_buffer();
                auto av2 = ac.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        const double g = gy[i * n + j];
                        if (g == 0.0) continue;
                        for (std::size_t p = 0; p < k; ++p)
                            gb[j * k + p] += g * av2[i * k + p];
                    }
            }
        });
    }
    return out;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    auto& y = out.mutable_data();
    auto av = a.data();
    auto bv = b.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
    if (tracked(a) || tracked(b)) {
        Tensor ac = a, bc = b, oc = out;
        out.p_->node = push([ac, bc, oc]() mutable {
            auto gy = out_grad(oc);
            if (gy.empty()) return;
            if (ac.requires_grad() || ac.node() >= 0) {
                auto& ga = ac.grad_buffer();
                for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
            }
            if (bc.requires_grad() || bc.node() >= 0) {
                auto& gb = bc.grad_buffer();
                for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
            }
        });
    }
    return out;
}

Tensor Tape::add_rowvec(const Tensor& x, const Tensor& bias) {
    require_rank2(x, "add_rowvec");
    if (bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
        throw ShapeError("add_rowvec bias " + shape_str(bias.shape()) +
                         " does not match row width of " + shape_str(x.shape()));
    }
    const std::size_t m = x.dim(0), n = x.dim(1);
    Tensor out = Tensor::zeros({m, n});
    auto& y = out.mutable_data();
    auto xv = x.data();
    auto bv = bias.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) y[i * n + j] = xv[i * n + j] + bv[j];
    if (tracked(x) || tracked(bias)) {
        Tensor xc = x, bc = bias, oc = out;
        out.p_->node = push([xc, bc, oc, m, n]() mutable {
            auto gy = out_grad(oc);
            if (gy.empty()) return;
            if (xc.requires_grad() || xc.node() >= 0) {
                auto& gx = xc.grad_buffer();
                for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
            }
            if (bc.requires_grad() || bc.node() >= 0) {
                auto& gb = bc.grad_buffer();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gb[j] += gy[i * n + j];
            }
        });
    }
    return out;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    auto& y = out.mutable_data();
    auto av = a.data();
    auto bv = b.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
    if (tracked(a) || tracked(b)) {
        Tensor ac = a, bc = b, oc = out;
        out.p_->node = push([ac, bc, oc]() mutable {
            auto gy = out_grad(oc);
            if (gy.empty()) return;
            if (ac.requires_grad() || ac.node() >= 0) {
                auto& ga = ac.grad_buffer();
                auto bv2 = bc.data();
                for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bv2[i];
            }
            if (bc.requires_grad() || bc.node() >= 0) {
                auto& gb = bc.grad_buffer();
                auto av2 = ac.data();
                for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * av2[i];
            }
        });
    }
    return out;
}

Tensor Tape::mul_scalar(const Tensor& x, double c) {
    Tensor out = Tensor::zeros(x.shape());
    auto& y = out.mutable_data();
    auto xv = x.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] * c;
    if (tracked(x)) {
        Tensor xc = x, oc = out;
        out.p_->node = push([xc, oc, c]() mutable {
            auto gy = out_grad(oc);
            if (gy.empty()) return;
            auto& gx = xc.grad_buffer();
            for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * c;
        });
    }
    return out;
}

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

double std_normal_cdf(double x) { return 0.5 * (1.0 + std::erf(x * kInvSqrt2)); }
double std_normal_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }
}  // namespace

Tensor Tape::gelu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    auto& y = out.mutable_data();
    auto xv = x.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] * std_normal_cdf(xv[i]);
    if (tracked(x)) {
        Tensor xc = x, oc = out;
        out.p_->node = push([xc, oc]() mutable {
            auto gy = out_grad(oc);
            if (gy.empty()) return;
            auto& gx = xc.grad_buffer();
            auto xv2 = xc.data();
            for (std::size_t i = 0; i < gy.size(); ++i) {
                const double v = xv2[i];
                gx[i] += gy[i] * (std_normal_cdf(v) + v * std_normal_pdf(v));
            }
        });
    }
    return out;
}

Tensor Tape::layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                        double eps) {
    require_rank2(x, "layer_norm");
    const std::size_t m = x.dim(0), n = x.dim(1);
    if (n < 1) throw ShapeError("layer_norm requires row width >= 1");
    if (gain.rank() != 1 || gain.dim(0) != n || bias.rank() != 1 ||
        bias.dim(0) != n) {
        throw ShapeError("layer_norm gain/bias must be rank-1 of width " +
                         std::to_string(n));
    }
    Tensor out = Tensor::zeros({m, n});
    auto& y = out.mutable_data();
    auto xv = x.data();
    auto gv = gain.data();
    auto bv = bias.data();
    std::vector<double> inv_sigma(m), means(m);
    for (std::size_t i = 0; i < m; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += xv[i * n + j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = xv[i * n + j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(var + eps);
        means[i] = mu;
        inv_sigma[i] = is;
        for (std::size_t j = 0; j < n; ++j)
            y[i * n + j] = gv[j] * ((xv[i * n + j] - mu) * is) + bv[j];
    }
    if (tracked(x) || tracked(gain) || tracked(bias)) {
        Tensor xc = x, gc = gain, bc = bias, oc = out;
        out.p_->node = push([xc, gc, bc, oc, m, n, means, inv_sigma]() mutable {
            auto gy = out_grad(oc);
            if (gy.empty()) return;
            auto xv2 = xc.data();
            auto gv2 = gc.data();
            const bool want_x = xc.requires_grad() || xc.node() >= 0;
            const bool want_g = gc.requires_grad() || gc.node() >= 0;
            const bool want_b = bc.requires_grad() || bc.node() >= 0;
            for (std::size_t i = 0; i < m; ++i) {
                const double is = inv_sigma[i];
                const double mu = means[i];
                if (want_g) {
                    auto& gg = gc.grad_buffer();
                    for (std::size_t j = 0; j < n; ++j)
                        gg[j] += gy[i * n + j] * ((xv2[i * n + j] - mu) * is);
                }
                if (want_b) {
                    auto& gb = bc.grad_buffer();
                    for (std::size_t j = 0; j < n; ++j) gb[j] += gy[i * n + j];
                }
                if (want_x) {
                    // dxhat = gy * gain; dx distributes through mean/variance.
                    auto& gx = xc.grad_buffer();
                    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double xhat = (xv2[i * n + j] - mu) * is;
                        const double dxhat = gy[i * n + j] * gv2[j];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                    }
                    const double inv_n = 1.0 / static_cast<double>(n);
                    for (std::size_t j = 0; j < n; ++j) {
                        const double xhat = (xv2[i * n + j] - mu) * is;
                        const double dxhat = gy[i * n + j] * gv2[j];
                        gx[i * n + j] += is * (dxhat - inv_n * sum_dxhat -
                                               xhat * inv_n * sum_dxhat_xhat);
                    }
                }
            }
        });
    }
    return out;
}

Tensor Tape::log_softmax(const Tensor& x) {
    if (x.rank() == 0 || x.shape().back() == 0) {
        throw ShapeError("log_softmax requires a non-empty last axis, got " +
                         shape_str(x.shape()));
    }
    const std::size_t n = x.shape().back();
    const std::size_t rows = x.size() / n;
    Tensor out = Tensor::zeros(x.shape());
    auto& y = out.mutable_data();
    auto xv = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * n;
        double mx = row[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
        const double lz = std::log(z);
        for (std::size_t j = 0; j < n; ++j) y[r * n + j] = row[j] - mx - lz;
    }
    if (tracked(x)) {
        Tensor xc = x, oc = out;
        out.p_->node = push([xc, oc, rows, n]() mutable {
            auto gy = out_grad(oc);
            if (gy.empty()) return;
            auto& gx = xc.grad_buffer();
            auto yv = oc.data();
            for (std::size_t r = 0; r < rows; ++r) {
                double gsum = 0.0;
                for (std::size_t j = 0; j < n; ++j) gsum += gy[r * n + j];
                for (std::size_t j = 0; j < n; ++j)
                    gx[r * n + j] += gy[r * n + j] - std::exp(yv[r * n + j]) * gsum;
            }
        });
    }
    return out;
}

Tensor Tape::softmax_causal(const Tensor& scores) {
    require_rank2(scores, "softmax_causal");
    const std::size_t s = scores.dim(0);
    if (scores.dim(1) != s) {
        throw ShapeError("softmax_causal requires a square matrix, got " +
                         shape_str(scores.shape()));
    }
    Tensor out = Tensor::zeros({s, s});
    auto& y = out.mutable_data();
    auto xv = scores.data();
    for (std::size_t i = 0; i < s; ++i) {
        double mx = xv[i * s];
        for (std::size_t j = 1; j <= i; ++j) mx = std::max(mx, xv[i * s + j]);
        double z = 0.0;
        for (std::size_t j = 0; j <= i; ++j) z += std::exp(xv[i * s + j] - mx);
        for (std::size_t j = 0; j <= i; ++j) y[i * s + j] = std::exp(xv[i * s + j] - mx) / z;
    }
    if (tracked(scores)) {
        Tensor xc = scores, oc = out;
        out.p_->node = push([xc, oc, s]() mutable {
            auto gy = out_grad(oc);
            if (gy.empty()) return;
            auto& gx = xc.grad_buffer();
            auto yv = oc.data();
            for (std::size_t i = 0; i < s; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j <= i; ++j) dot += gy[i * s + j] * yv[i * s + j];
                for (std::size_t j = 0; j <= i; ++j)
                    gx[i * s + j] += yv[i * s + j] * (gy[i * s + j] - dot);
            }
        });
    }
    return out;
}

Tensor Tape::slice_cols(const Tensor& x, std::size_t first, std::size_t count) {
    require_rank2(x, "slice_cols");
    const std::size_t m = x.dim(0), n = x.dim(1);
    if (first + count > n) {
        throw ShapeError("slice_cols [" + std::to_string(first) + ", " +
                         std::to_string(first + count) + ") out of range for " +
                         shape_str(x.shape()));
    }
    Tensor out = Tensor::zeros({m, count});
    auto& y = out.mutable_data();
    auto xv = x.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j) y[i * count + j] = xv[i * n + first + j];
    if (tracked(x)) {
        Tensor xc = x, oc = out;
        out.p_->node = push([xc, oc, m, n, first, count]() mutable {
            auto gy = out_grad(oc);
            if (gy.empty()) return;
            auto& gx = xc.grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < count; ++j)
                    gx[i * n + first + j] += gy[i * count + j];
        });
    }
    return out;
}

Tensor Tape::concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeError("concat_cols of zero parts");
    const std::size_t m = parts[0].dim(0);
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        require_rank2(p, "concat_cols");
        if (p.dim(0) != m) {
            throw ShapeError("concat_cols row count mismatch: " +
                             shape_str(parts[0].shape()) + " vs " +
                             shape_str(p.shape()));
        }
        total += p.dim(1);
    }
    Tensor out = Tensor::zeros({m, total});
    auto& y = out.mutable_data();
    std::size_t off = 0;
    bool any = false;
    for (const Tensor& p : parts) {
        const std::size_t w = p.dim(1);
        auto pv = p.data();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) y[i * total + off + j] = pv[i * w + j];
        off += w;
        any = any || tracked(p);
    }
    if (any) {
        std::vector<Tensor> copies(parts.begin(), parts.end());
        Tensor oc = out;
        out.p_->node = push([copies, oc, m, total]() mutable {
            auto gy = out_grad(oc);
            if (gy.empty()) return;
            std::size_t off2 = 0;
            for (Tensor& p : copies) {
                const std::size_t w = p.dim(1);
                if (p.requires_grad() || p.node() >= 0) {
                    auto& gp = p.grad_buffer();
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < w; ++j)
                            gp[i * w + j] += gy[i * total + off2 + j];
                }
                off2 += w;
            }
        });
    }
    return out;
}

Tensor Tape::stack_rows(std::span<const Tensor> rows) {
    if (rows.empty()) throw ShapeError("stack_rows of zero rows");
    const std::size_t n = rows[0].size();
    for (const Tensor& r : rows) {
        if (r.rank() != 1 || r.size() != n) {
            throw ShapeError("stack_rows requires equal-length rank-1 tensors");
        }
    }
    const std::size_t m = rows.size();
    Tensor out = Tensor::zeros({m, n});
    auto& y = out.mutable_data();
    bool any = false;
    for (std::size_t i = 0; i < m; ++i) {
        auto rv = rows[i].data();
        for (std::size_t j = 0; j < n; ++j) y[i * n + j] = rv[j];
        any = any || tracked(rows[i]);
    }
    if (any) {
        std::vector<Tensor> copies(rows.begin(), rows.end());
        Tensor oc = out;
        out.p_->node = push([copies, oc, n]() mutable {
            auto gy = out_grad(oc);
            if (gy.empty()) return;
            for (std::size_t i = 0; i < copies.size(); ++i) {
                Tensor& r = copies[i];
                if (r.requires_grad() || r.node() >= 0) {
                    auto& gr = r.grad_buffer();
                    for (std::size_t j = 0; j < n; ++j) gr[j] += gy[i * n + j];
                }
            }
        });
    }
    return out;
}

Tensor Tape::reshape(const Tensor& x, Shape shape) {
    if (shape_size(shape) != x.size()) {
        throw ShapeError("reshape to " + shape_str(shape) + " from " +
                         shape_str(x.shape()) + " changes element count");
    }
    Tensor out = Tensor::zeros(shape);
    auto& y = out.mutable_data();
    auto xv = x.data();
    std::copy(xv.begin(), xv.end(), y.begin());
    if (tracked(x)) {
        Tensor xc = x, oc = out;
        out.p_->node = push([xc, oc]() mutable {
            auto gy = out_grad(oc);
            if (gy.empty()) return;
            auto& gx = xc.grad_buffer();
            for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
        });
    }
    return out;
}

Tensor Tape::embed_sequence(const Tensor& tok, const Tensor& pos,
                            std::span<const int> ids) {
    require_rank2(tok, "embed_sequence");
    require_rank2(pos, "embed_sequence");
    const std::size_t d = tok.dim(1);
    if (pos.dim(1) != d) {
        throw ShapeError("token and position embedding widths disagree: " +
                         shape_str(tok.shape()) + " vs " + shape_str(pos.shape()));
    }
    const std::size_t s = ids.size();
    if (s == 0) throw InputError("embed_sequence on an empty id sequence");
    if (s > pos.dim(0)) {
        throw ShapeError("sequence length " + std::to_string(s) +
                         " exceeds position table " + shape_str(pos.shape()));
    }
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= tok.dim(0)) {
            throw ShapeError("token id " + std::to_string(id) +
                             " out of range for " + shape_str(tok.shape()));
        }
    }
    Tensor out = Tensor::zeros({s, d});
    auto& y = out.mutable_data();
    auto tv = tok.data();
    auto pv = pos.data();
    for (std::size_t i = 0; i < s; ++i) {
        const std::size_t row = static_cast<std::size_t>(ids[i]);
        for (std::size_t j = 0; j < d; ++j)
            y[i * d + j] = tv[row * d + j] + pv[i * d + j];
    }
    if (tracked(tok) || tracked(pos)) {
        std::vector<int> idv(ids.begin(), ids.end());
        Tensor tc = tok, pc = pos, oc = out;
        out.p_->node = push([tc, pc, oc, idv, d]() mutable {
            auto gy = out_grad(oc);
            if (gy.empty()) return;
            if (tc.requires_grad() || tc.node() >= 0) {
                auto& gt = tc.grad_buffer();
                for (std::size_t i = 0; i < idv.size(); ++i) {
                    const std::size_t row = static_cast<std::size_t>(idv[i]);
                    for (std::size_t j = 0; j < d; ++j)
                        gt[row * d + j] += gy[i * d + j];
                }
            }
            if (pc.requires_grad() || pc.node() >= 0) {
                auto& gp = pc.grad_buffer();
                for (std::size_t i = 0; i < idv.size(); ++i)
                    for (std::size_t j = 0; j < d; ++j)
                        gp[i * d + j] += gy[i * d + j];
            }
        });
    }
    return out;
}

Tensor Tape::normalize_rows(const Tensor& x) {
    require_rank2(x, "normalize_rows");
    const std::size_t m = x.dim(0), n = x.dim(1);
    Tensor out = Tensor::zeros({m, n});
    auto& y = out.mutable_data();
    auto xv = x.data();
    std::vector<double> norms(m);
    for (std::size_t i = 0; i < m; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < n; ++j) sq += xv[i * n + j] * xv[i * n + j];
        const double nr = std::sqrt(sq);
        if (nr == 0.0) {
            throw InputError("normalize_rows: row " + std::to_string(i) +
                             " has zero norm");
        }
        norms[i] = nr;
        for (std::size_t j = 0; j < n; ++j) y[i * n + j] = xv[i * n + j] / nr;
    }
    if (tracked(x)) {
        Tensor xc = x, oc = out;
        out.p_->node = push([xc, oc, m, n, norms]() mutable {
            auto gy = out_grad(oc);
            if (gy.empty()) return;
            auto& gx = xc.grad_buffer();
            auto yv = oc.data();
            for (std::size_t i = 0; i < m; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += gy[i * n + j] * yv[i * n + j];
                for (std::size_t j = 0; j < n; ++j)
                    gx[i * n + j] += (gy[i * n + j] - dot * yv[i * n + j]) / norms[i];
            }
        });
    }
    return out;
}

Tensor Tape::sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    Tensor out = Tensor::scalar(acc);
    if (tracked(x)) {
        Tensor xc = x, oc = out;
        out.p_->node = push([xc, oc]() mutable {
            auto gy = out_grad(oc);
            if (gy.empty()) return;
            auto& gx = xc.grad_buffer();
            for (double& g : gx) g += gy[0];
        });
    }
    return out;
}

Tensor Tape::mean(const Tensor& x) {
    if (x.size() == 0) throw InputError("mean of an empty tensor");
    return mul_scalar(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor Tape::neg_mean_diag(const Tensor& x) {
    require_rank2(x, "neg_mean_diag");
    const std::size_t m = x.dim(0);
    if (x.dim(1) != m) {
        throw ShapeError("neg_mean_diag requires a square matrix, got " +
                         shape_str(x.shape()));
    }
    double acc = 0.0;
    auto xv = x.data();
    for (std::size_t i = 0; i < m; ++i) acc += xv[i * m + i];
    Tensor out = Tensor::scalar(-acc / static_cast<double>(m));
    if (tracked(x)) {
        Tensor xc = x, oc = out;
        out.p_->node = push([xc, oc, m]() mutable {
            auto gy = out_grad(oc);
            if (gy.empty()) return;
            auto& gx = xc.grad_buffer();
            const double g = -gy[0] / static_cast<double>(m);
            for (std::size_t i = 0; i < m; ++i) gx[i * m + i] += g;
        });
    }
    return out;
}

Tensor Tape::gather_rows(const Tensor& x, std::span<const std::size_t> cols) {
    require_rank2(x, "gather_rows");
    const std::size_t m = x.dim(0), n = x.dim(1);
    if (cols.size() != m) {
        throw ShapeError("gather_rows needs one column index per row");
    }
    Tensor out = Tensor::zeros({m});
    auto& y = out.mutable_data();
    auto xv = x.data();
    for (std::size_t i = 0; i < m; ++i) {
        if (cols[i] >= n) {
            throw ShapeError("gather_rows column " + std::to_string(cols[i]) +
                             " out of range for " + shape_str(x.shape()));
        }
        y[i] = xv[i * n + cols[i]];
    }
    if (tracked(x)) {
        std::vector<std::size_t> cv(cols.begin(), cols.end());
        Tensor xc = x, oc = out;
        out.p_->node = push([xc, oc, cv, n]() mutable {
            auto gy = out_grad(oc);
            if (gy.empty()) return;
            auto& gx = xc.grad_buffer();
            for (std::size_t i = 0; i < cv.size(); ++i) gx[i * n + cv[i]] += gy[i];
        });
    }
    return out;
}

void Tape::backward(const Tensor& loss) {
    if (loss.size() != 1) {
        throw ContractError("backward requires a scalar loss, got " +
                            shape_str(loss.shape()));
    }
    if (loss.node() < 0 || static_cast<std::size_t>(loss.node()) >= nodes_.size()) {
        throw ContractError("backward: loss was not produced by this tape");
    }
    Tensor seed = loss;
    seed.grad_buffer()[0] = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        nodes_[i]();
    }
    clear();
}

}  // namespace sgpt
