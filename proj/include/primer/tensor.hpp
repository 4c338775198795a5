#pragma once

// Dense float64 tensors with tape-free reverse-mode autodiff.
//
// A Tensor is a shared handle onto a graph node. Ops record their parents and a
// backward closure when grad mode is on and at least one input requires grad.
// Leaf gradients accumulate across backward() calls until zero_grad()/clear_grad().

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <unordered_map>
#include <string>
#include <utility>
#include <vector>

#include "primer/error.hpp"

namespace primer {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until populated
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != data.size()) {
            grad.assign(data.size(), 0.0);
        }
    }
};

inline thread_local bool grad_mode = true;

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode; }

/// Disables graph recording for its lifetime (evaluation, decoding, optimizer updates).
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_mode) { detail::grad_mode = false; }
    ~NoGradGuard() { detail::grad_mode = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        detail::require(numel(shape) == data.size(),
                        "Tensor: shape " + shape_str(shape) + " does not match " +
                            std::to_string(data.size()) + " elements");
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        const auto n = numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        return Tensor(Shape{}, {value}, requires_grad);
    }

    static Tensor randn(Shape shape, double stddev, std::mt19937_64& rng, bool requires_grad = false) {
        std::normal_distribution<double> dist(0.0, stddev);
        std::vector<double> data(numel(shape));
        for (auto& v : data) {
            v = dist(rng);
        }
        return Tensor(std::move(shape), std::move(data), requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->data.size(); }

    std::span<const double> data() const { return node_->data; }
    /// In-place access. Mutating a tensor that an unevaluated graph still references
    /// invalidates that graph's gradients.
    std::span<double> data_mut() { return node_->data; }

    double item() const {
        detail::require(size() == 1, "item: tensor of shape " + shape_str(shape()) + " is not a scalar");
        return node_->data[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool value) {
        detail::require(node_->is_leaf, "set_requires_grad: only leaf tensors can change requires_grad");
        node_->requires_grad = value;
    }
    bool is_leaf() const { return node_->is_leaf; }

    bool has_grad() const { return !node_->grad.empty() || node_->data.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> grad_mut() { return node_->grad; }
    /// Populates the gradient with zeros (allocating if needed).
    void zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }
    /// Drops the gradient entirely; has_grad() becomes false.
    void clear_grad() { std::vector<double>().swap(node_->grad); }

    /// Deep copy as a fresh leaf with the same requires_grad flag and no gradient.
    Tensor clone() const { return Tensor(shape(), node_->data, requires_grad()); }
    /// Deep copy as a leaf that does not require grad.
    Tensor detach() const { return Tensor(shape(), node_->data, false); }

    bool same_node(const Tensor& other) const { return node_ == other.node_; }

    detail::Node* node() const { return node_.get(); }
    const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

private:
    std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) {
        return false;
    }
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

/// Builds an op result; parents/closure are kept only when a gradient can flow.
inline Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward_fn) {
    Tensor out(std::move(shape), std::move(data));
    bool needs = false;
    if (grad_mode) {
        for (const auto& t : inputs) {
            needs = needs || t.requires_grad();
        }
    }
    auto* node = out.node();
    node->is_leaf = false;
    if (needs) {
        node->requires_grad = true;
        node->parents.reserve(inputs.size());
        for (const auto& t : inputs) {
            node->parents.push_back(t.node_ptr());
        }
        node->backward_fn = std::move(backward_fn);
    }
    return out;
}

inline Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

/// Shared implementation of broadcast elementwise ops: b broadcasts over a's leading dims.
enum class BinaryKind { Add, Sub, Mul };

inline Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* name) {
    detail::require(a.defined() && b.defined(), std::string(name) + ": undefined tensor");
    const bool b_bcast = a.shape() != b.shape() && (is_suffix(b.shape(), a.shape()) || b.size() == 1);
    detail::require(a.shape() == b.shape() || b_bcast,
                    std::string(name) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                        shape_str(b.shape()));
    const std::size_t inner = b.size();
    const std::size_t outer = inner == 0 ? 0 : a.size() / inner;
    const auto ad = a.data();
    const auto bd = b.data();
    std::vector<double> out(a.size());
    for (std::size_t o = 0; o < outer; ++o) {
        const double* ap = ad.data() + o * inner;
        double* op = out.data() + o * inner;
        switch (kind) {
            case BinaryKind::Add:
                for (std::size_t j = 0; j < inner; ++j) op[j] = ap[j] + bd[j];
                break;
            case BinaryKind::Sub:
                for (std::size_t j = 0; j < inner; ++j) op[j] = ap[j] - bd[j];
                break;
            case BinaryKind::Mul:
                for (std::size_t j = 0; j < inner; ++j) op[j] = ap[j] * bd[j];
                break;
        }
    }
    return make_result(a.shape(), std::move(out), {a, b}, [inner, outer, kind](Node& self) {
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        const double* g = self.grad.data();
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t o = 0; o < outer; ++o) {
                double* ga = pa.grad.data() + o * inner;
                const double* go = g + o * inner;
                if (kind == BinaryKind::Mul) {
                    for (std::size_t j = 0; j < inner; ++j) ga[j] += go[j] * pb.data[j];
                } else {
                    for (std::size_t j = 0; j < inner; ++j) ga[j] += go[j];
                }
            }
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            double* gb = pb.grad.data();
            for (std::size_t o = 0; o < outer; ++o) {
                const double* go = g + o * inner;
                switch (kind) {
                    case BinaryKind::Add:
                        for (std::size_t j = 0; j < inner; ++j) gb[j] += go[j];
                        break;
                    case BinaryKind::Sub:
                        for (std::size_t j = 0; j < inner; ++j) gb[j] -= go[j];
                        break;
                    case BinaryKind::Mul: {
                        const double* ap = pa.data.data() + o * inner;
                        for (std::size_t j = 0; j < inner; ++j) gb[j] += go[j] * ap[j];
                        break;
                    }
                }
            }
        }
    });
}

}  // namespace detail

/// a + b; b may broadcast over a's leading dims (its shape a suffix of a's), or vice versa.
inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape() && (detail::is_suffix(a.shape(), b.shape()) || a.size() == 1) &&
        b.size() > a.size()) {
        return detail::binary(b, a, detail::BinaryKind::Add, "add");
    }
    return detail::binary(a, b, detail::BinaryKind::Add, "add");
}

/// a - b; b may broadcast over a's leading dims.
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinaryKind::Sub, "sub"); }

/// Elementwise product with the same broadcasting rule as add.
inline Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape() && (detail::is_suffix(a.shape(), b.shape()) || a.size() == 1) &&
        b.size() > a.size()) {
        return detail::binary(b, a, detail::BinaryKind::Mul, "mul");
    }
    return detail::binary(a, b, detail::BinaryKind::Mul, "mul");
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.data().begin(), a.data().end());
    for (auto& v : out) v *= c;
    return detail::make_result(a.shape(), std::move(out), {a}, [c](detail::Node& self) {
        auto& p = detail::parent(self, 0);
        p.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += c * self.grad[i];
    });
}

/// Matrix product over the last two axes.
///  - b rank 2 [K,N]: a [...,K] -> [...,N] (a linear map applied to every row of a)
///  - a [...,M,K], b [...,K,N] with identical leading dims: batched product
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require(a.rank() >= 1 && b.rank() >= 2, "matmul: ranks " + shape_str(a.shape()) + " x " +
                                                        shape_str(b.shape()));
    const std::size_t K = b.shape()[b.rank() - 2];
    const std::size_t N = b.shape()[b.rank() - 1];
    detail::require(a.shape().back() == K,
                    "matmul: inner dims differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    std::size_t batches = 1;
    std::size_t M = 0;
    Shape out_shape = a.shape();
    out_shape.back() = N;
    if (b.rank() == 2) {
        M = a.size() / (K == 0 ? 1 : K);
    } else {
        detail::require(a.rank() == b.rank() && std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()),
                        "matmul: batch dims differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
        M = a.shape()[a.rank() - 2];
        batches = a.size() / (M * K == 0 ? 1 : M * K);
    }
    const std::size_t b_stride = b.rank() == 2 ? 0 : K * N;
    std::vector<double> out(batches * M * N, 0.0);
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    for (std::size_t bt = 0; bt < batches; ++bt) {
        const double* ab = ad + bt * M * K;
        const double* bb = bd + bt * b_stride;
        double* ob = out.data() + bt * M * N;
        for (std::size_t i = 0; i < M; ++i) {
            double* orow = ob + i * N;
            for (std::size_t k = 0; k < K; ++k) {
                const double av = ab[i * K + k];
                const double* brow = bb + k * N;
                for (std::size_t j = 0; j < N; ++j) orow[j] += av * brow[j];
            }
        }
    }
    return detail::make_result(std::move(out_shape), std::move(out), {a, b},
                               [batches, M, K, N, b_stride](detail::Node& self) {
        auto& pa = detail::parent(self, 0);
        auto& pb = detail::parent(self, 1);
        const double* g = self.grad.data();
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t bt = 0; bt < batches; ++bt) {
                const double* bb = pb.data.data() + bt * b_stride;
                for (std::size_t i = 0; i < M; ++i) {
                    const double* grow = g + (bt * M + i) * N;
                    double* garow = pa.grad.data() + (bt * M + i) * K;
                    for (std::size_t k = 0; k < K; ++k) {
                        const double* brow = bb + k * N;
                        double acc = 0.0;
                        for (std::size_t j = 0; j < N; ++j) acc += grow[j] * brow[j];
                        garow[k] += acc;
                    }
                }
            }
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t bt = 0; bt < batches; ++bt) {
                double* gb = pb.grad.data() + bt * b_stride;
                for (std::size_t i = 0; i < M; ++i) {
                    const double* grow = g + (bt * M + i) * N;
                    const double* arow = pa.data.data() + (bt * M + i) * K;
                    for (std::size_t k = 0; k < K; ++k) {
                        const double av = arow[k];
                        double* gbrow = gb + k * N;
                        for (std::size_t j = 0; j < N; ++j) gbrow[j] += av * grow[j];
                    }
                }
            }
        }
    });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    detail::require(numel(shape) == a.size(),
                    "reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape) + " changes element count");
    std::vector<double> out(a.data().begin(), a.data().end());
    return detail::make_result(std::move(shape), std::move(out), {a}, [](detail::Node& self) {
        auto& p = detail::parent(self, 0);
        p.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
    });
}

/// Reorders axes: output axis i is input axis axes[i].
inline Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
    const std::size_t r = a.rank();
    detail::require(axes.size() == r, "permute: axis count mismatch");
    std::vector<bool> seen(r, false);
    for (auto ax : axes) {
        detail::require(ax < r && !seen[ax], "permute: axes are not a permutation");
        seen[ax] = true;
    }
    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = a.shape()[axes[i]];
    std::vector<std::size_t> in_strides(r, 1);
    for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * a.shape()[i];
    // src_index[o] = flat input index of flat output position o
    std::vector<std::size_t> src_index(a.size());
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t o = 0; o < src_index.size(); ++o) {
        std::size_t s = 0;
        for (std::size_t i = 0; i < r; ++i) s += idx[i] * in_strides[axes[i]];
        src_index[o] = s;
        for (std::size_t i = r; i-- > 0;) {
            if (++idx[i] < out_shape[i]) break;
            idx[i] = 0;
        }
    }
    std::vector<double> out(a.size());
    const auto ad = a.data();
    for (std::size_t o = 0; o < out.size(); ++o) out[o] = ad[src_index[o]];
    return detail::make_result(std::move(out_shape), std::move(out), {a},
                               [src_index = std::move(src_index)](detail::Node& self) {
        auto& p = detail::parent(self, 0);
        p.ensure_grad();
        for (std::size_t o = 0; o < src_index.size(); ++o) p.grad[src_index[o]] += self.grad[o];
    });
}

/// Swaps the last two axes.
inline Tensor transpose(const Tensor& a) {
    detail::require(a.rank() >= 2, "transpose: rank < 2");
    std::vector<std::size_t> axes(a.rank());
    std::iota(axes.begin(), axes.end(), std::size_t{0});
    std::swap(axes[a.rank() - 1], axes[a.rank() - 2]);
    return permute(a, axes);
}

/// Repeats `a` over new leading dims; a's shape must be a suffix of `shape`.
inline Tensor broadcast_to(const Tensor& a, Shape shape) {
    detail::require(detail::is_suffix(a.shape(), shape),
                    "broadcast_to: " + shape_str(a.shape()) + " is not a suffix of " + shape_str(shape));
    const std::size_t inner = a.size();
    const std::size_t outer = inner == 0 ? 0 : numel(shape) / inner;
    std::vector<double> out(numel(shape));
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy(a.data().begin(), a.data().end(), out.begin() + static_cast<std::ptrdiff_t>(o * inner));
    }
    return detail::make_result(std::move(shape), std::move(out), {a}, [inner, outer](detail::Node& self) {
        auto& p = detail::parent(self, 0);
        p.ensure_grad();
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t j = 0; j < inner; ++j) p.grad[j] += self.grad[o * inner + j];
        }
    });
}

/// Concatenates along `axis`; all other dims must match.
inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    detail::require(!parts.empty(), "concat: no inputs");
    const auto& first = parts.front().shape();
    detail::require(axis < first.size(), "concat: axis out of range");
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const auto& t : parts) {
        detail::require(t.rank() == first.size(), "concat: rank mismatch");
        for (std::size_t i = 0; i < first.size(); ++i) {
            detail::require(i == axis || t.shape()[i] == first[i],
                            "concat: shape mismatch " + shape_str(t.shape()) + " vs " + shape_str(first));
        }
        out_shape[axis] += t.shape()[axis];
    }
    std::size_t outer = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
    std::size_t inner = 1;
    for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
    const std::size_t out_row = out_shape[axis] * inner;
    std::vector<std::size_t> chunk(parts.size());
    std::vector<std::size_t> offset(parts.size());
    std::size_t off = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        chunk[p] = parts[p].shape()[axis] * inner;
        offset[p] = off;
        off += chunk[p];
    }
    std::vector<double> out(numel(out_shape));
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const auto d = parts[p].data();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(d.data() + o * chunk[p], chunk[p], out.data() + o * out_row + offset[p]);
        }
    }
    return detail::make_result(std::move(out_shape), std::move(out), parts,
                               [outer, out_row, chunk, offset](detail::Node& self) {
        for (std::size_t p = 0; p < chunk.size(); ++p) {
            auto& par = detail::parent(self, p);
            if (!par.requires_grad) continue;
            par.ensure_grad();
            for (std::size_t o = 0; o < outer; ++o) {
                const double* g = self.grad.data() + o * out_row + offset[p];
                double* gp = par.grad.data() + o * chunk[p];
                for (std::size_t j = 0; j < chunk[p]; ++j) gp[j] += g[j];
            }
        }
    });
}

/// Softmax over the last axis.
inline Tensor softmax(const Tensor& x) {
    detail::require(x.rank() >= 1, "softmax: rank 0 input");
    const std::size_t D = x.shape().back();
    const std::size_t rows = D == 0 ? 0 : x.size() / D;
    std::vector<double> out(x.size());
    const double* xd = x.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xd + r * D;
        double* yr = out.data() + r * D;
        const double mx = *std::max_element(xr, xr + D);
        double s = 0.0;
        for (std::size_t j = 0; j < D; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            s += yr[j];
        }
        const double inv = 1.0 / s;
        for (std::size_t j = 0; j < D; ++j) yr[j] *= inv;
    }
    return detail::make_result(x.shape(), std::move(out), {x}, [rows, D](detail::Node& self) {
        auto& p = detail::parent(self, 0);
        p.ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.data.data() + r * D;
            const double* g = self.grad.data() + r * D;
            double dot = 0.0;
            for (std::size_t j = 0; j < D; ++j) dot += g[j] * y[j];
            double* gp = p.grad.data() + r * D;
            for (std::size_t j = 0; j < D; ++j) gp[j] += y[j] * (g[j] - dot);
        }
    });
}

/// Layer normalization over the last axis with affine gamma/beta of shape [D].
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
    detail::require(x.rank() >= 1, "layer_norm: rank 0 input");
    const std::size_t D = x.shape().back();
    detail::require(gamma.shape() == Shape{D} && beta.shape() == Shape{D},
                    "layer_norm: affine params must have shape [" + std::to_string(D) + "]");
    const std::size_t rows = D == 0 ? 0 : x.size() / D;
    std::vector<double> out(x.size());
    std::vector<double> xhat(x.size());
    std::vector<double> rstd(rows);
    const double* xd = x.data().data();
    const double* gd = gamma.data().data();
    const double* bd = beta.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xd + r * D;
        double mean = 0.0;
        for (std::size_t j = 0; j < D; ++j) mean += xr[j];
        mean /= static_cast<double>(D);
        double var = 0.0;
        for (std::size_t j = 0; j < D; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= static_cast<double>(D);
        const double rs = 1.0 / std::sqrt(var + eps);
        rstd[r] = rs;
        for (std::size_t j = 0; j < D; ++j) {
            const double h = (xr[j] - mean) * rs;
            xhat[r * D + j] = h;
            out[r * D + j] = h * gd[j] + bd[j];
        }
    }
    return detail::make_result(x.shape(), std::move(out), {x, gamma, beta},
                               [rows, D, xhat = std::move(xhat), rstd = std::move(rstd)](detail::Node& self) {
        auto& px = detail::parent(self, 0);
        auto& pg = detail::parent(self, 1);
        auto& pb = detail::parent(self, 2);
        const double* g = self.grad.data();
        if (pg.requires_grad) {
            pg.ensure_grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < D; ++j) pg.grad[j] += g[r * D + j] * xhat[r * D + j];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < D; ++j) pb.grad[j] += g[r * D + j];
        }
        if (px.requires_grad) {
            px.ensure_grad();
            const double inv_d = 1.0 / static_cast<double>(D);
            for (std::size_t r = 0; r < rows; ++r) {
                double m1 = 0.0;
                double m2 = 0.0;
                for (std::size_t j = 0; j < D; ++j) {
                    const double gh = g[r * D + j] * pg.data[j];
                    m1 += gh;
                    m2 += gh * xhat[r * D + j];
                }
                m1 *= inv_d;
                m2 *= inv_d;
                for (std::size_t j = 0; j < D; ++j) {
                    const double gh = g[r * D + j] * pg.data[j];
                    px.grad[r * D + j] += rstd[r] * (gh - m1 - xhat[r * D + j] * m2);
                }
            }
        }
    });
}

/// Exact (erf) GELU.
inline Tensor gelu(const Tensor& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    std::vector<double> out(x.size());
    const auto xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * xd[i] * (1.0 + std::erf(xd[i] * inv_sqrt2));
    return detail::make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
        constexpr double inv_sqrt2 = 0.70710678118654752440;
        constexpr double inv_sqrt2pi = 0.39894228040143267794;
        auto& p = detail::parent(self, 0);
        p.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double v = p.data[i];
            const double d = 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(-0.5 * v * v);
            p.grad[i] += self.grad[i] * d;
        }
    });
}

inline Tensor relu(const Tensor& x) {
    std::vector<double> out(x.size());
    const auto xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > 0.0 ? xd[i] : 0.0;
    return detail::make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
        auto& p = detail::parent(self, 0);
        p.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (p.data[i] > 0.0) p.grad[i] += self.grad[i];
        }
    });
}

/// Row lookup: table [V,D], ids (flattened over `prefix`) -> prefix + [D].
inline Tensor embedding(const Tensor& table, std::span<const int> ids, Shape prefix) {
    detail::require(table.rank() == 2, "embedding: table must be rank 2");
    detail::require(numel(prefix) == ids.size(), "embedding: id count does not match prefix shape");
    const std::size_t V = table.shape()[0];
    const std::size_t D = table.shape()[1];
    std::vector<int> rows(ids.begin(), ids.end());
    for (int id : rows) {
        detail::require(id >= 0 && static_cast<std::size_t>(id) < V,
                        "embedding: id " + std::to_string(id) + " outside vocabulary of " + std::to_string(V));
    }
    std::vector<double> out(rows.size() * D);
    const double* td = table.data().data();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy_n(td + static_cast<std::size_t>(rows[i]) * D, D, out.data() + i * D);
    }
    prefix.push_back(D);
    return detail::make_result(std::move(prefix), std::move(out), {table},
                               [rows = std::move(rows), D](detail::Node& self) {
        auto& p = detail::parent(self, 0);
        p.ensure_grad();
        for (std::size_t i = 0; i < rows.size(); ++i) {
            double* gp = p.grad.data() + static_cast<std::size_t>(rows[i]) * D;
            const double* g = self.grad.data() + i * D;
            for (std::size_t j = 0; j < D; ++j) gp[j] += g[j];
        }
    });
}

/// Mean token negative log-likelihood over the last axis of `logits`, counting only
/// positions where mask is nonzero. Throws InputError when every position is masked.
inline Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, std::span<const unsigned char> mask) {
    detail::require(logits.rank() >= 1, "cross_entropy: rank 0 logits");
    const std::size_t V = logits.shape().back();
    const std::size_t rows = V == 0 ? 0 : logits.size() / V;
    detail::require(targets.size() == rows && mask.size() == rows,
                    "cross_entropy: targets/mask must have one entry per logit row");
    std::size_t count = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (!mask[r]) continue;
        ++count;
        detail::require(targets[r] >= 0 && static_cast<std::size_t>(targets[r]) < V,
                        "cross_entropy: target id out of range");
    }
    detail::require_input(count > 0, "cross_entropy: every target position is padding");
    std::vector<double> probs(logits.size());
    const double* ld = logits.data().data();
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (!mask[r]) continue;
        const double* lr = ld + r * V;
        double* pr = probs.data() + r * V;
        const double mx = *std::max_element(lr, lr + V);
        double s = 0.0;
        for (std::size_t j = 0; j < V; ++j) {
            pr[j] = std::exp(lr[j] - mx);
            s += pr[j];
        }
        for (std::size_t j = 0; j < V; ++j) pr[j] /= s;
        total += -(lr[targets[r]] - mx - std::log(s));
    }
    const double inv_count = 1.0 / static_cast<double>(count);
    std::vector<int> tg(targets.begin(), targets.end());
    std::vector<unsigned char> mk(mask.begin(), mask.end());
    return detail::make_result(Shape{}, {total * inv_count}, {logits},
                               [rows, V, inv_count, probs = std::move(probs), tg = std::move(tg),
                                mk = std::move(mk)](detail::Node& self) {
        auto& p = detail::parent(self, 0);
        p.ensure_grad();
        const double g = self.grad[0] * inv_count;
        for (std::size_t r = 0; r < rows; ++r) {
            if (!mk[r]) continue;
            double* gp = p.grad.data() + r * V;
            const double* pr = probs.data() + r * V;
            for (std::size_t j = 0; j < V; ++j) gp[j] += g * pr[j];
            gp[tg[r]] -= g;
        }
    });
}

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return detail::make_result(Shape{}, {s}, {a}, [](detail::Node& self) {
        auto& p = detail::parent(self, 0);
        p.ensure_grad();
        for (auto& g : p.grad) g += self.grad[0];
    });
}

inline Tensor mean(const Tensor& a) {
    detail::require(a.size() > 0, "mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    return add(matmul(x, weight), bias);
}

/// Populates grad on every requires_grad leaf reachable from `loss`.
inline void backward(const Tensor& loss) {
    detail::require(loss.defined(), "backward: undefined loss");
    detail::require(loss.size() == 1, "backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
    if (!loss.requires_grad()) {
        return;
    }
    // Iterative post-order DFS. State 1 = on the current path, 2 = finished.
    std::vector<detail::Node*> order;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    std::unordered_map<detail::Node*, int> state;
    stack.emplace_back(loss.node(), 0);
    state[loss.node()] = 1;
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* child = node->parents[next++].get();
            if (!child->requires_grad) continue;
            auto it = state.find(child);
            if (it == state.end()) {
                state[child] = 1;
                stack.emplace_back(child, 0);
            } else if (it->second == 1) {
                throw ContractViolation("backward: computation graph contains a cycle");
            }
        } else {
            state[node] = 2;
            order.push_back(node);
            stack.pop_back();
        }
    }
    // Each pass sums into fresh buffers; leaves then add the pass total to their
    // previous gradient so repeated passes accumulate as exact pairwise sums.
    std::vector<std::pair<detail::Node*, std::vector<double>>> previous;
    for (auto* node : order) {
        if (node->is_leaf && !node->grad.empty()) {
            previous.emplace_back(node, std::move(node->grad));
        }
        node->grad.assign(node->data.size(), 0.0);
    }
    detail::Node* root = loss.node();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        if (!node->is_leaf && node->backward_fn) {
            node->backward_fn(*node);
            std::vector<double>().swap(node->grad);
        }
    }
    for (auto& [node, prev] : previous) {
        for (std::size_t i = 0; i < prev.size(); ++i) node->grad[i] = prev[i] + node->grad[i];
    }
}

}  // namespace primer
