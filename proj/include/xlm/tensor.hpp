#pragma once

// Dense 64-bit tensors with reverse-mode automatic differentiation.
//
// Design: every operation eagerly computes its value and records a backward
// closure on a graph node. Nodes carry monotonically increasing creation ids;
// backward() walks the nodes reachable from the root in reverse creation
// order, which is a valid topological order by construction. Gradients
// accumulate additively across backward() calls; call zero_grad() to reset.
//
// Storage is dense row-major only. Shapes are rank-1 or rank-2; that is all
// the model needs and it keeps the backward rules small enough to audit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "xlm/common.hpp"

namespace xlm {

namespace detail {

struct Node {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::uint64_t id = 0;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::size_t numel() const { return data.size(); }

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
    }
};

inline std::uint64_t next_node_id() {
    static std::uint64_t counter = 0;
    return ++counter;
}

inline bool& no_grad_flag() {
    static bool flag = false;
    return flag;
}

}  // namespace detail

// Suppresses graph construction in scope: values are computed, but nodes get
// no parents, no closures and no gradients. Used for inference passes.
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::no_grad_flag()) { detail::no_grad_flag() = true; }
    ~NoGradGuard() { detail::no_grad_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

class Tensor {
public:
    Tensor() = default;

    static Tensor from(std::vector<std::size_t> shape, std::vector<double> data, bool requires_grad = false) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        if (n != data.size())
            throw shape_error("tensor data length " + std::to_string(data.size()) +
                              " does not match shape product " + std::to_string(n));
        auto node = std::make_shared<detail::Node>();
        node->shape = std::move(shape);
        node->data = std::move(data);
        node->requires_grad = requires_grad && !detail::no_grad_flag();
        node->id = detail::next_node_id();
        return Tensor(std::move(node));
    }

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    static Tensor full(std::vector<std::size_t> shape, double v, bool requires_grad = false) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return from(std::move(shape), std::vector<double>(n, v), requires_grad);
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    static Tensor randn(std::vector<std::size_t> shape, Rng& rng, double stddev = 1.0,
                        bool requires_grad = false) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        std::vector<double> data(n);
        for (double& x : data) x = rng.normal(0.0, stddev);
        return from(std::move(shape), std::move(data), requires_grad);
    }

    static Tensor identity(std::size_t n, bool requires_grad = false) {
        Tensor t = zeros({n, n}, requires_grad);
        for (std::size_t i = 0; i < n; ++i) t.node_->data[i * n + i] = 1.0;
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->data.size(); }
    std::size_t rows() const { return node_->shape.size() == 2 ? node_->shape[0] : 1; }
    std::size_t cols() const { return node_->shape.size() == 2 ? node_->shape[1] : node_->shape[0]; }

    std::vector<double>& data() { return node_->data; }
    const std::vector<double>& data() const { return node_->data; }

    double value() const {
        if (numel() != 1) throw contract_error("value() requires a scalar tensor");
        return node_->data[0];
    }

    bool requires_grad() const { return node_->requires_grad; }

    const std::vector<double>& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }

    void zero_grad() {
        if (node_) node_->grad.assign(node_->data.size(), 0.0);
    }

    std::uint64_t node_id() const { return node_->id; }
    std::shared_ptr<detail::Node> node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;

    friend Tensor make_op(std::vector<std::size_t> shape, std::vector<double> data,
                          std::vector<Tensor> parents, std::function<void(detail::Node&)> backward);
};

// Builds an op node. The backward closure receives the op node itself (whose
// grad holds dRoot/dSelf) and must accumulate into parent grads.
inline Tensor make_op(std::vector<std::size_t> shape, std::vector<double> data,
                      std::vector<Tensor> parents, std::function<void(detail::Node&)> backward) {
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->id = detail::next_node_id();
    if (!detail::no_grad_flag()) {
        bool needs = false;
        for (const Tensor& p : parents)
            if (p.requires_grad()) needs = true;
        if (needs) {
            node->requires_grad = true;
            node->parents.reserve(parents.size());
            for (const Tensor& p : parents) node->parents.push_back(p.node());
            node->backward_fn = std::move(backward);
        }
    }
    return Tensor(std::move(node));
}

namespace detail {

inline void check_2d(const Tensor& t, const char* what) {
    if (t.shape().size() != 2) throw shape_error(std::string(what) + " requires a rank-2 tensor");
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        auto fmt = [](const Tensor& t) {
            std::string s = "[";
            for (std::size_t i = 0; i < t.shape().size(); ++i)
                s += (i ? "x" : "") + std::to_string(t.shape()[i]);
            return s + "]";
        };
        throw shape_error(std::string(what) + ": shape mismatch " + fmt(a) + " vs " + fmt(b));
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Arithmetic
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
    auto an = a.node();
    auto bn = b.node();
    return make_op(a.shape(), std::move(out), {a, b}, [an, bn](detail::Node& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
    auto an = a.node();
    auto bn = b.node();
    return make_op(a.shape(), std::move(out), {a, b}, [an, bn](detail::Node& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
    auto an = a.node();
    auto bn = b.node();
    return make_op(a.shape(), std::move(out), {a, b}, [an, bn](detail::Node& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * bn->data[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i] * an->data[i];
        }
    });
}

inline Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.numel());
    const auto& ad = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * s;
    auto an = a.node();
    return make_op(a.shape(), std::move(out), {a}, [an, s](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * s;
    });
}

// x scaled by a graph scalar (e.g. a learnable gate after sigmoid).
inline Tensor scale_by(const Tensor& x, const Tensor& s) {
    if (s.numel() != 1) throw shape_error("scale_by: scale must be a scalar tensor");
    const double sv = s.data()[0];
    std::vector<double> out(x.numel());
    const auto& xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * sv;
    auto xn = x.node();
    auto sn = s.node();
    return make_op(x.shape(), std::move(out), {x, s}, [xn, sn, sv](detail::Node& self) {
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i] * sv;
        }
        if (sn->requires_grad) {
            sn->ensure_grad();
            double acc = 0.0;
            for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * xn->data[i];
            sn->grad[0] += acc;
        }
    });
}

// Adds a non-learnable constant vector elementwise (Gumbel offsets, masks).
inline Tensor add_values(const Tensor& x, const std::vector<double>& c) {
    if (c.size() != x.numel()) throw shape_error("add_values: constant size mismatch");
    std::vector<double> out(x.numel());
    const auto& xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] + c[i];
    auto xn = x.node();
    return make_op(x.shape(), std::move(out), {x}, [xn](detail::Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
    });
}

// mat {r,c} + row {1,c} or {c}, broadcast over rows.
inline Tensor add_rowvec(const Tensor& mat, const Tensor& row) {
    detail::check_2d(mat, "add_rowvec");
    const std::size_t r = mat.shape()[0], c = mat.shape()[1];
    if (row.numel() != c) throw shape_error("add_rowvec: row width mismatch");
    std::vector<double> out(mat.numel());
    const auto& md = mat.data();
    const auto& vd = row.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = md[i * c + j] + vd[j];
    auto mn = mat.node();
    auto vn = row.node();
    return make_op(mat.shape(), std::move(out), {mat, row}, [mn, vn, r, c](detail::Node& self) {
        if (mn->requires_grad) {
            mn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) mn->grad[i] += self.grad[i];
        }
        if (vn->requires_grad) {
            vn->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) vn->grad[j] += self.grad[i * c + j];
        }
    });
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

namespace detail {

// C(m,n) += A(m,k) * B(k,n); ikj order for cache locality.
inline void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                     std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C(m,n) += A(m,k) * B(n,k)^T
inline void gemm_nt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                        std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// C(m,n) += A(k,m)^T * B(k,n)
inline void gemm_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                        std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a + p * m;
        const double* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::check_2d(a, "matmul");
    detail::check_2d(b, "matmul");
    const std::size_t m = a.shape()[0], k = a.shape()[1];
    const std::size_t k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2)
        throw shape_error("matmul: inner dimensions disagree: [" + std::to_string(m) + "x" +
                          std::to_string(k) + "] vs [" + std::to_string(k2) + "x" + std::to_string(n) + "]");
    std::vector<double> out(m * n, 0.0);
    detail::gemm_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
    auto an = a.node();
    auto bn = b.node();
    return make_op({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](detail::Node& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            // dA += dC * B^T
            detail::gemm_nt_acc(self.grad.data(), bn->data.data(), an->grad.data(), m, n, k);
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            // dB += A^T * dC
            detail::gemm_tn_acc(an->data.data(), self.grad.data(), bn->grad.data(), k, m, n);
        }
    });
}

// A(m,k) * B(n,k)^T -> (m,n). Used for linear layers stored row-major and the
// tied output projection.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    detail::check_2d(a, "matmul_nt");
    detail::check_2d(b, "matmul_nt");
    const std::size_t m = a.shape()[0], k = a.shape()[1];
    const std::size_t n = b.shape()[0], k2 = b.shape()[1];
    if (k != k2)
        throw shape_error("matmul_nt: inner dimensions disagree: [" + std::to_string(m) + "x" +
                          std::to_string(k) + "] vs [" + std::to_string(n) + "x" + std::to_string(k2) +
                          "]^T");
    std::vector<double> out(m * n, 0.0);
    detail::gemm_nt_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
    auto an = a.node();
    auto bn = b.node();
    return make_op({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](detail::Node& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            // dA += dC * B
            detail::gemm_acc(self.grad.data(), bn->data.data(), an->grad.data(), m, n, k);
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            // dB += dC^T * A
            detail::gemm_tn_acc(self.grad.data(), an->data.data(), bn->grad.data(), n, m, k);
        }
    });
}

inline Tensor transpose(const Tensor& a) {
    detail::check_2d(a, "transpose");
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    std::vector<double> out(a.numel());
    const auto& ad = a.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = ad[i * c + j];
    auto an = a.node();
    return make_op({c, r}, std::move(out), {a}, [an, r, c](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) an->grad[i * c + j] += self.grad[j * r + i];
    });
}

// ---------------------------------------------------------------------------
// Reductions, nonlinearities
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.data()) acc += v;
    auto an = a.node();
    return make_op({1}, {acc}, {a}, [an](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (double& g : an->grad) g += self.grad[0];
    });
}

inline Tensor mean_rows(const Tensor& a) {
    detail::check_2d(a, "mean_rows");
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    std::vector<double> out(c, 0.0);
    const auto& ad = a.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j] += ad[i * c + j];
    for (double& v : out) v /= static_cast<double>(r);
    auto an = a.node();
    return make_op({1, c}, std::move(out), {a}, [an, r, c](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        const double inv = 1.0 / static_cast<double>(r);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) an->grad[i * c + j] += self.grad[j] * inv;
    });
}

inline Tensor relu(const Tensor& a) {
    std::vector<double> out(a.numel());
    const auto& ad = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] > 0.0 ? ad[i] : 0.0;
    auto an = a.node();
    return make_op(a.shape(), std::move(out), {a}, [an](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (an->data[i] > 0.0) an->grad[i] += self.grad[i];
    });
}

// tanh-form GELU; smooth everywhere, which keeps finite-difference checks of
// the full model clean of kink artifacts.
inline Tensor gelu(const Tensor& a) {
    constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
    std::vector<double> out(a.numel());
    const auto& ad = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = ad[i];
        out[i] = 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
    }
    auto an = a.node();
    return make_op(a.shape(), std::move(out), {a}, [an, k](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double x = an->data[i];
            const double u = k * (x + 0.044715 * x * x * x);
            const double t = std::tanh(u);
            const double du = k * (1.0 + 3.0 * 0.044715 * x * x);
            const double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
            an->grad[i] += self.grad[i] * d;
        }
    });
}

inline Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(a.numel());
    const auto& ad = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-ad[i]));
    auto an = a.node();
    auto on = out;  // keep values for the backward rule
    return make_op(a.shape(), std::move(out), {a}, [an, on = std::move(on)](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            an->grad[i] += self.grad[i] * on[i] * (1.0 - on[i]);
    });
}

// Numerically stabilized softmax. axis: for rank-2, 1 = along rows (each row
// sums to one), 0 = along columns; rank-1 tensors use axis 0.
inline Tensor softmax(const Tensor& x, int axis = -1) {
    for (double v : x.data())
        if (std::isnan(v)) throw numeric_error("softmax: NaN input");
    const bool is2d = x.shape().size() == 2;
    if (!is2d && x.shape().size() != 1) throw shape_error("softmax: rank-1 or rank-2 only");
    if (axis == -1) axis = is2d ? 1 : 0;

    std::size_t groups, len, gstride, estride;
    if (!is2d || axis == 1) {
        groups = is2d ? x.shape()[0] : 1;
        len = is2d ? x.shape()[1] : x.shape()[0];
        gstride = len;
        estride = 1;
    } else if (axis == 0) {
        groups = x.shape()[1];
        len = x.shape()[0];
        gstride = 1;
        estride = x.shape()[1];
    } else {
        throw contract_error("softmax: axis must be 0 or 1");
    }

    std::vector<double> out(x.numel());
    const auto& xd = x.data();
    for (std::size_t g = 0; g < groups; ++g) {
        const std::size_t base = g * gstride;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, xd[base + i * estride]);
        double denom = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
            const double e = std::exp(xd[base + i * estride] - mx);
            out[base + i * estride] = e;
            denom += e;
        }
        for (std::size_t i = 0; i < len; ++i) out[base + i * estride] /= denom;
    }
    auto xn = x.node();
    auto vals = out;
    return make_op(x.shape(), std::move(out), {x},
                   [xn, vals = std::move(vals), groups, len, gstride, estride](detail::Node& self) {
                       if (!xn->requires_grad) return;
                       xn->ensure_grad();
                       for (std::size_t g = 0; g < groups; ++g) {
                           const std::size_t base = g * gstride;
                           double dot = 0.0;
                           for (std::size_t i = 0; i < len; ++i) {
                               const std::size_t idx = base + i * estride;
                               dot += self.grad[idx] * vals[idx];
                           }
                           for (std::size_t i = 0; i < len; ++i) {
                               const std::size_t idx = base + i * estride;
                               xn->grad[idx] += vals[idx] * (self.grad[idx] - dot);
                           }
                       }
                   });
}

// ---------------------------------------------------------------------------
// Structure ops
// ---------------------------------------------------------------------------

inline Tensor gather_rows(const Tensor& table, const std::vector<std::uint32_t>& ids) {
    detail::check_2d(table, "gather_rows");
    const std::size_t rows = table.shape()[0], c = table.shape()[1];
    std::vector<double> out(ids.size() * c);
    const auto& td = table.data();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= rows)
            throw bounds_error("gather_rows: id " + std::to_string(ids[i]) + " out of range " +
                               std::to_string(rows));
        std::copy_n(td.data() + static_cast<std::size_t>(ids[i]) * c, c, out.data() + i * c);
    }
    auto tn = table.node();
    return make_op({ids.size(), c}, std::move(out), {table}, [tn, ids, c](detail::Node& self) {
        if (!tn->requires_grad) return;
        tn->ensure_grad();
        for (std::size_t i = 0; i < ids.size(); ++i) {
            double* dst = tn->grad.data() + static_cast<std::size_t>(ids[i]) * c;
            const double* src = self.grad.data() + i * c;
            for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
        }
    });
}

inline Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1) {
    detail::check_2d(x, "slice_cols");
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    if (c0 >= c1 || c1 > c) throw bounds_error("slice_cols: bad column range");
    const std::size_t w = c1 - c0;
    std::vector<double> out(r * w);
    const auto& xd = x.data();
    for (std::size_t i = 0; i < r; ++i)
        std::copy_n(xd.data() + i * c + c0, w, out.data() + i * w);
    auto xn = x.node();
    return make_op({r, w}, std::move(out), {x}, [xn, r, c, c0, w](detail::Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
            double* dst = xn->grad.data() + i * c + c0;
            const double* src = self.grad.data() + i * w;
            for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
        }
    });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw contract_error("concat_cols: empty input");
    const std::size_t r = parts[0].shape()[0];
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        detail::check_2d(p, "concat_cols");
        if (p.shape()[0] != r) throw shape_error("concat_cols: row count mismatch");
        total += p.shape()[1];
    }
    std::vector<double> out(r * total);
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        const std::size_t w = p.shape()[1];
        for (std::size_t i = 0; i < r; ++i)
            std::copy_n(p.data().data() + i * w, w, out.data() + i * total + off);
        off += w;
    }
    std::vector<std::pair<std::shared_ptr<detail::Node>, std::size_t>> sources;
    sources.reserve(parts.size());
    for (const Tensor& p : parts) sources.emplace_back(p.node(), p.shape()[1]);
    return make_op({r, total}, std::move(out), parts,
                   [sources = std::move(sources), r, total](detail::Node& self) {
                       std::size_t off = 0;
                       for (auto& [pn, w] : sources) {
                           if (pn->requires_grad) {
                               pn->ensure_grad();
                               for (std::size_t i = 0; i < r; ++i) {
                                   const double* src = self.grad.data() + i * total + off;
                                   double* dst = pn->grad.data() + i * w;
                                   for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
                               }
                           }
                           off += w;
                       }
                   });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw contract_error("concat_rows: empty input");
    const std::size_t c = parts[0].cols();
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        if (p.cols() != c) throw shape_error("concat_rows: column count mismatch");
        total += p.rows();
    }
    std::vector<double> out;
    out.reserve(total * c);
    for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    std::vector<std::pair<std::shared_ptr<detail::Node>, std::size_t>> sources;
    sources.reserve(parts.size());
    for (const Tensor& p : parts) sources.emplace_back(p.node(), p.numel());
    return make_op({total, c}, std::move(out), parts,
                   [sources = std::move(sources)](detail::Node& self) {
                       std::size_t off = 0;
                       for (auto& [pn, n] : sources) {
                           if (pn->requires_grad) {
                               pn->ensure_grad();
                               for (std::size_t i = 0; i < n; ++i) pn->grad[i] += self.grad[off + i];
                           }
                           off += n;
                       }
                   });
}

// Collects scalar nodes into a {1,k} row.
inline Tensor stack_scalars(const std::vector<Tensor>& scalars) {
    if (scalars.empty()) throw contract_error("stack_scalars: empty input");
    std::vector<double> out(scalars.size());
    for (std::size_t i = 0; i < scalars.size(); ++i) out[i] = scalars[i].value();
    std::vector<std::shared_ptr<detail::Node>> nodes;
    nodes.reserve(scalars.size());
    for (const Tensor& s : scalars) nodes.push_back(s.node());
    return make_op({1, scalars.size()}, std::move(out), scalars,
                   [nodes = std::move(nodes)](detail::Node& self) {
                       for (std::size_t i = 0; i < nodes.size(); ++i) {
                           if (!nodes[i]->requires_grad) continue;
                           nodes[i]->ensure_grad();
                           nodes[i]->grad[0] += self.grad[i];
                       }
                   });
}

// Identity forward, no gradient flow.
inline Tensor stop_gradient(const Tensor& x) {
    return Tensor::from(x.shape(), x.data(), false);
}

// ---------------------------------------------------------------------------
// Fused layers
// ---------------------------------------------------------------------------

inline Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                              double eps = 1e-5) {
    detail::check_2d(x, "layer_norm_rows");
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    if (gain.numel() != c || bias.numel() != c) throw shape_error("layer_norm_rows: param width mismatch");
    std::vector<double> out(x.numel());
    std::vector<double> xhat(x.numel());
    std::vector<double> inv_std(r);
    const auto& xd = x.data();
    const auto& gd = gain.data();
    const auto& bd = bias.data();
    for (std::size_t i = 0; i < r; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < c; ++j) mean += xd[i * c + j];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = xd[i * c + j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(c);
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_std[i] = inv;
        for (std::size_t j = 0; j < c; ++j) {
            const double h = (xd[i * c + j] - mean) * inv;
            xhat[i * c + j] = h;
            out[i * c + j] = h * gd[j] + bd[j];
        }
    }
    auto xn = x.node();
    auto gn = gain.node();
    auto bn = bias.node();
    return make_op(x.shape(), std::move(out), {x, gain, bias},
                   [xn, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std), r,
                    c](detail::Node& self) {
                       if (bn->requires_grad) {
                           bn->ensure_grad();
                           for (std::size_t i = 0; i < r; ++i)
                               for (std::size_t j = 0; j < c; ++j) bn->grad[j] += self.grad[i * c + j];
                       }
                       if (gn->requires_grad) {
                           gn->ensure_grad();
                           for (std::size_t i = 0; i < r; ++i)
                               for (std::size_t j = 0; j < c; ++j)
                                   gn->grad[j] += self.grad[i * c + j] * xhat[i * c + j];
                       }
                       if (xn->requires_grad) {
                           xn->ensure_grad();
                           for (std::size_t i = 0; i < r; ++i) {
                               double mean_dy = 0.0, mean_dyx = 0.0;
                               for (std::size_t j = 0; j < c; ++j) {
                                   const double dy = self.grad[i * c + j] * gn->data[j];
                                   mean_dy += dy;
                                   mean_dyx += dy * xhat[i * c + j];
                               }
                               mean_dy /= static_cast<double>(c);
                               mean_dyx /= static_cast<double>(c);
                               for (std::size_t j = 0; j < c; ++j) {
                                   const double dy = self.grad[i * c + j] * gn->data[j];
                                   xn->grad[i * c + j] +=
                                       inv_std[i] * (dy - mean_dy - xhat[i * c + j] * mean_dyx);
                               }
                           }
                       }
                   });
}

// Mean cross-entropy of row-wise softmax against integer targets.
inline Tensor cross_entropy_rows(const Tensor& logits, const std::vector<std::uint32_t>& targets) {
    detail::check_2d(logits, "cross_entropy_rows");
    const std::size_t r = logits.shape()[0], c = logits.shape()[1];
    if (targets.size() != r) throw shape_error("cross_entropy_rows: one target per row required");
    for (std::uint32_t t : targets)
        if (t >= c) throw bounds_error("cross_entropy_rows: target id out of range");
    const auto& xd = logits.data();
    std::vector<double> probs(logits.numel());
    double loss = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, xd[i * c + j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double e = std::exp(xd[i * c + j] - mx);
            probs[i * c + j] = e;
            denom += e;
        }
        for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= denom;
        loss -= std::log(probs[i * c + targets[i]]);
    }
    loss /= static_cast<double>(r);
    auto xn = logits.node();
    return make_op({1}, {loss}, {logits},
                   [xn, probs = std::move(probs), targets, r, c](detail::Node& self) {
                       if (!xn->requires_grad) return;
                       xn->ensure_grad();
                       const double g = self.grad[0] / static_cast<double>(r);
                       for (std::size_t i = 0; i < r; ++i) {
                           for (std::size_t j = 0; j < c; ++j)
                               xn->grad[i * c + j] += g * probs[i * c + j];
                           xn->grad[i * c + targets[i]] -= g;
                       }
                   });
}

inline Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel()) throw shape_error("cosine_similarity: length mismatch");
    const auto& ad = a.data();
    const auto& bd = b.data();
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < ad.size(); ++i) {
        dot += ad[i] * bd[i];
        na += ad[i] * ad[i];
        nb += bd[i] * bd[i];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (na == 0.0 || nb == 0.0) throw numeric_error("cosine_similarity: zero-norm vector");
    const double cosv = dot / (na * nb);
    auto an = a.node();
    auto bn = b.node();
    return make_op({1}, {cosv}, {a, b}, [an, bn, na, nb, cosv](detail::Node& self) {
        const double g = self.grad[0];
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < an->data.size(); ++i)
                an->grad[i] += g * (bn->data[i] / (na * nb) - cosv * an->data[i] / (na * na));
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < bn->data.size(); ++i)
                bn->grad[i] += g * (an->data[i] / (na * nb) - cosv * bn->data[i] / (nb * nb));
        }
    });
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

// Reverse-mode sweep from a scalar root. Each call contributes one full
// gradient additively to every requires_grad ancestor (including ancestors
// that already hold gradients from earlier calls).
inline void backward(const Tensor& root) {
    if (root.numel() != 1) throw contract_error("backward: root must be a scalar");
    if (!root.requires_grad()) return;

    // Gather reachable grad-requiring nodes (iterative DFS).
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<detail::Node*> stack{root.node().get()};
    seen.insert(root.node().get());
    while (!stack.empty()) {
        detail::Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (auto& p : n->parents) {
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(order.begin(), order.end(),
              [](const detail::Node* a, const detail::Node* b) { return a->id > b->id; });

    // Set aside pre-existing gradients so this pass computes a clean dRoot/d*
    // that is then added back (additive accumulation contract).
    std::vector<std::pair<detail::Node*, std::vector<double>>> saved;
    for (detail::Node* n : order) {
        if (!n->grad.empty()) {
            saved.emplace_back(n, std::move(n->grad));
            n->grad.clear();
        }
        n->ensure_grad();
    }

    root.node()->grad[0] = 1.0;
    for (detail::Node* n : order) {
        if (n->backward_fn) n->backward_fn(*n);
    }

    for (auto& [n, g] : saved) {
        for (std::size_t i = 0; i < g.size(); ++i) n->grad[i] += g[i];
    }
}

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

// Max over coordinates of |analytic - central difference| /
// (|analytic| + |numeric| + 1e-12). f must be deterministic and must read the
// tensor it is given (the same leaf is perturbed in place).
inline double finite_difference_check(const std::function<Tensor(Tensor&)>& f, Tensor& x,
                                      double epsilon = 1e-5) {
    Tensor y = f(x);
    if (y.numel() != 1) throw contract_error("finite_difference_check: f must return a scalar");
    x.zero_grad();
    backward(y);
    const std::vector<double> analytic = x.grad();

    double max_err = 0.0;
    auto& xd = x.data();
    for (std::size_t i = 0; i < xd.size(); ++i) {
        const double saved = xd[i];
        xd[i] = saved + epsilon;
        const double up = f(x).value();
        xd[i] = saved - epsilon;
        const double down = f(x).value();
        xd[i] = saved;
        const double numeric = (up - down) / (2.0 * epsilon);
        const double err = std::abs(analytic[i] - numeric) /
                           (std::abs(analytic[i]) + std::abs(numeric) + 1e-12);
        max_err = std::max(max_err, err);
    }
    return max_err;
}

}  // namespace xlm
