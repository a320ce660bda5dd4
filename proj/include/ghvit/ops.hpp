#pragma once

// Primitive differentiable operations. Each returns a fresh tensor whose
// lineage node holds the backward closure; closures work on raw buffers
// and never build graph nodes of their own.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "ghvit/tensor.hpp"

namespace ghvit {

namespace detail {

// ---- raw matmul kernels (row-major, accumulate into c) ----

// c[m,n] += a[m,k] * b[k,n]
template <typename T>
void mm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T s = arow[p];
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += s * brow[j];
        }
    }
}

// c[m,n] += a[m,k] * b[n,k]^T
template <typename T>
void mm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T acc{0};
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// c[k,n] += a[m,k]^T * b[m,n]
template <typename T>
void mm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        const T* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T s = arow[p];
            T* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += s * brow[j];
        }
    }
}

[[noreturn]] inline void shape_error(const std::string& op, const std::string& detail) {
    throw std::invalid_argument(op + ": " + detail);
}

}  // namespace detail

// ---- arithmetic ----

// Elementwise a + b. b may also be a suffix of a's shape, in which case it
// broadcasts over the leading axes (bias rows, positional tables).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    const bool same = sa == sb;
    if (!same) {
        if (sb.size() > sa.size() || !std::equal(sb.begin(), sb.end(), sa.end() - sb.size())) {
            detail::shape_error("add", "cannot broadcast " + shape_str(sb) + " onto " + shape_str(sa));
        }
    }
    const std::size_t inner = b.numel();
    const std::size_t outer = a.numel() / std::max<std::size_t>(inner, 1);
    std::vector<T> out(a.values());
    const auto& bv = b.values();
    for (std::size_t o = 0; o < outer; ++o) {
        T* row = out.data() + o * inner;
        for (std::size_t i = 0; i < inner; ++i) row[i] += bv[i];
    }
    return make_op<T>(
        "add", sa, std::move(out), {a, b}, [inner, outer](const Tensor<T>& y) {
            const auto& n = *y.node();
            const auto& g = y.grad();
            if (n.inputs[0].requires_grad()) {
                auto& ga = n.inputs[0].grad_accum();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (n.inputs[1].requires_grad()) {
                auto& gb = n.inputs[1].grad_accum();
                for (std::size_t o = 0; o < outer; ++o) {
                    const T* row = g.data() + o * inner;
                    for (std::size_t i = 0; i < inner; ++i) gb[i] += row[i];
                }
            }
        });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        detail::shape_error("mul", "shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    std::vector<T> out(a.numel());
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return make_op<T>(
        "mul", a.shape(), std::move(out), {a, b}, [](const Tensor<T>& y) {
            const auto& n = *y.node();
            const auto& g = y.grad();
            const auto& av = n.inputs[0].values();
            const auto& bv = n.inputs[1].values();
            if (n.inputs[0].requires_grad()) {
                auto& ga = n.inputs[0].grad_accum();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
            }
            if (n.inputs[1].requires_grad()) {
                auto& gb = n.inputs[1].grad_accum();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
            }
        });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T c) {
    std::vector<T> out(a.numel());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
    return make_op<T>(
        "mul_scalar", a.shape(), std::move(out), {a}, [c](const Tensor<T>& y) {
            const auto& n = *y.node();
            if (!n.inputs[0].requires_grad()) return;
            const auto& g = y.grad();
            auto& ga = n.inputs[0].grad_accum();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T acc{0};
    for (T v : a.values()) acc += v;
    return make_op<T>(
        "sum", {}, {acc}, {a}, [](const Tensor<T>& y) {
            const auto& n = *y.node();
            if (!n.inputs[0].requires_grad()) return;
            const T g = y.grad()[0];
            auto& ga = n.inputs[0].grad_accum();
            for (auto& v : ga) v += g;
        });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    const T inv = T{1} / static_cast<T>(a.numel());
    T acc{0};
    for (T v : a.values()) acc += v;
    return make_op<T>(
        "mean", {}, {acc * inv}, {a}, [inv](const Tensor<T>& y) {
            const auto& n = *y.node();
            if (!n.inputs[0].requires_grad()) return;
            const T g = y.grad()[0] * inv;
            auto& ga = n.inputs[0].grad_accum();
            for (auto& v : ga) v += g;
        });
}

// ---- matrix products ----

// Fault-injection knob for harness self-tests: scales the gradients that
// matmul's backward pass produces. 1.0 (the default) means no fault.
namespace test_hooks {
inline double& matmul_backward_scale() {
    static double scale = 1.0;
    return scale;
}
}  // namespace test_hooks

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
        detail::shape_error("matmul", "incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    std::vector<T> out(m * n, T{0});
    detail::mm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
    return make_op<T>(
        "matmul", {m, n}, std::move(out), {a, b}, [m, k, n](const Tensor<T>& y) {
            const auto& node = *y.node();
            const T scale = static_cast<T>(test_hooks::matmul_backward_scale());
            std::vector<T> g = y.grad();
            if (scale != T{1}) {
                for (auto& v : g) v *= scale;
            }
            const auto& av = node.inputs[0].values();
            const auto& bv = node.inputs[1].values();
            if (node.inputs[0].requires_grad()) {
                detail::mm_nt(g.data(), bv.data(), node.inputs[0].grad_accum().data(), m, n, k);
            }
            if (node.inputs[1].requires_grad()) {
                detail::mm_tn(av.data(), g.data(), node.inputs[1].grad_accum().data(), m, k, n);
            }
        });
}

/// Batched matmul over equal leading axes: [...,m,k] x [...,k,n] -> [...,m,n].
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() < 3 || a.rank() != b.rank() ||
        !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()) ||
        a.extent(a.rank() - 1) != b.extent(b.rank() - 2)) {
        detail::shape_error("bmm", "incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const std::size_t m = a.extent(a.rank() - 2), k = a.extent(a.rank() - 1), n = b.extent(b.rank() - 1);
    std::size_t batch = 1;
    for (std::size_t i = 0; i + 2 < a.rank(); ++i) batch *= a.extent(i);
    Shape out_shape(a.shape());
    out_shape[out_shape.size() - 1] = n;
    std::vector<T> out(batch * m * n, T{0});
    for (std::size_t g = 0; g < batch; ++g) {
        detail::mm_nn(a.values().data() + g * m * k, b.values().data() + g * k * n,
                      out.data() + g * m * n, m, k, n);
    }
    return make_op<T>(
        "bmm", std::move(out_shape), std::move(out), {a, b},
        [batch, m, k, n](const Tensor<T>& y) {
            const auto& node = *y.node();
            const auto& g = y.grad();
            const auto& av = node.inputs[0].values();
            const auto& bv = node.inputs[1].values();
            if (node.inputs[0].requires_grad()) {
                auto& ga = node.inputs[0].grad_accum();
                for (std::size_t i = 0; i < batch; ++i) {
                    detail::mm_nt(g.data() + i * m * n, bv.data() + i * k * n,
                                  ga.data() + i * m * k, m, n, k);
                }
            }
            if (node.inputs[1].requires_grad()) {
                auto& gb = node.inputs[1].grad_accum();
                for (std::size_t i = 0; i < batch; ++i) {
                    detail::mm_tn(av.data() + i * m * k, g.data() + i * m * n,
                                  gb.data() + i * k * n, m, k, n);
                }
            }
        });
}

// ---- data movement ----

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
    if (shape_numel(new_shape) != a.numel()) {
        detail::shape_error("reshape", "cannot view " + shape_str(a.shape()) + " as " + shape_str(new_shape));
    }
    return make_op<T>(
        "reshape", std::move(new_shape), std::vector<T>(a.values()), {a},
        [](const Tensor<T>& y) {
            const auto& n = *y.node();
            if (!n.inputs[0].requires_grad()) return;
            const auto& g = y.grad();
            auto& ga = n.inputs[0].grad_accum();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& axes) {
    const std::size_t r = a.rank();
    if (axes.size() != r) {
        detail::shape_error("permute", "axes count " + std::to_string(axes.size()) +
                                           " does not match rank " + std::to_string(r));
    }
    Shape out_shape(r);
    std::vector<bool> seen(r, false);
    for (std::size_t i = 0; i < r; ++i) {
        if (axes[i] >= r || seen[axes[i]]) detail::shape_error("permute", "invalid axis permutation");
        seen[axes[i]] = true;
        out_shape[i] = a.extent(axes[i]);
    }
    // strides of the input, gathered in output-axis order
    std::vector<std::size_t> in_strides(r, 1);
    for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * a.extent(i);
    std::vector<std::size_t> gather(r);
    for (std::size_t i = 0; i < r; ++i) gather[i] = in_strides[axes[i]];

    const auto& av = a.values();
    std::vector<T> out(a.numel());
    std::vector<std::size_t> idx(r, 0);
    std::size_t src = 0;
    for (std::size_t o = 0; o < out.size(); ++o) {
        out[o] = av[src];
        for (std::size_t ax = r; ax-- > 0;) {
            if (++idx[ax] < out_shape[ax]) {
                src += gather[ax];
                break;
            }
            idx[ax] = 0;
            src -= gather[ax] * (out_shape[ax] - 1);
        }
    }
    return make_op<T>(
        "permute", std::move(out_shape), std::move(out), {a},
        [gather](const Tensor<T>& y) {
            const auto& n = *y.node();
            if (!n.inputs[0].requires_grad()) return;
            const auto& g = y.grad();
            auto& ga = n.inputs[0].grad_accum();
            const Shape& os = y.shape();
            const std::size_t r = os.size();
            std::vector<std::size_t> idx(r, 0);
            std::size_t src = 0;
            for (std::size_t o = 0; o < g.size(); ++o) {
                ga[src] += g[o];
                for (std::size_t ax = r; ax-- > 0;) {
                    if (++idx[ax] < os[ax]) {
                        src += gather[ax];
                        break;
                    }
                    idx[ax] = 0;
                    src -= gather[ax] * (os[ax] - 1);
                }
            }
        });
}

// Tile a tensor along a new leading axis: [s...] -> [count, s...].
template <typename T>
Tensor<T> expand_leading(const Tensor<T>& a, std::size_t count) {
    if (count == 0) detail::shape_error("expand_leading", "count must be positive");
    const std::size_t inner = a.numel();
    Shape out_shape;
    out_shape.reserve(a.rank() + 1);
    out_shape.push_back(count);
    out_shape.insert(out_shape.end(), a.shape().begin(), a.shape().end());
    std::vector<T> out(count * inner);
    const auto& av = a.values();
    for (std::size_t c = 0; c < count; ++c) {
        std::copy(av.begin(), av.end(), out.begin() + c * inner);
    }
    return make_op<T>(
        "expand_leading", std::move(out_shape), std::move(out), {a},
        [count, inner](const Tensor<T>& y) {
            const auto& n = *y.node();
            if (!n.inputs[0].requires_grad()) return;
            const auto& g = y.grad();
            auto& ga = n.inputs[0].grad_accum();
            for (std::size_t c = 0; c < count; ++c) {
                const T* row = g.data() + c * inner;
                for (std::size_t i = 0; i < inner; ++i) ga[i] += row[i];
            }
        });
}

// Concatenate two [B,N,D] sequences along the token axis.
template <typename T>
Tensor<T> concat_tokens(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.extent(0) != b.extent(0) || a.extent(2) != b.extent(2)) {
        detail::shape_error("concat_tokens", "incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    const std::size_t batch = a.extent(0), na = a.extent(1), nb = b.extent(1), d = a.extent(2);
    std::vector<T> out(batch * (na + nb) * d);
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < batch; ++i) {
        std::copy(av.begin() + i * na * d, av.begin() + (i + 1) * na * d,
                  out.begin() + i * (na + nb) * d);
        std::copy(bv.begin() + i * nb * d, bv.begin() + (i + 1) * nb * d,
                  out.begin() + i * (na + nb) * d + na * d);
    }
    return make_op<T>(
        "concat_tokens", {batch, na + nb, d}, std::move(out), {a, b},
        [batch, na, nb, d](const Tensor<T>& y) {
            const auto& n = *y.node();
            const auto& g = y.grad();
            if (n.inputs[0].requires_grad()) {
                auto& ga = n.inputs[0].grad_accum();
                for (std::size_t i = 0; i < batch; ++i) {
                    const T* src = g.data() + i * (na + nb) * d;
                    T* dst = ga.data() + i * na * d;
                    for (std::size_t j = 0; j < na * d; ++j) dst[j] += src[j];
                }
            }
            if (n.inputs[1].requires_grad()) {
                auto& gb = n.inputs[1].grad_accum();
                for (std::size_t i = 0; i < batch; ++i) {
                    const T* src = g.data() + i * (na + nb) * d + na * d;
                    T* dst = gb.data() + i * nb * d;
                    for (std::size_t j = 0; j < nb * d; ++j) dst[j] += src[j];
                }
            }
        });
}

// Select one token from a [B,N,D] sequence -> [B,D].
template <typename T>
Tensor<T> select_token(const Tensor<T>& a, std::size_t index) {
    if (a.rank() != 3 || index >= a.extent(1)) {
        detail::shape_error("select_token", "index " + std::to_string(index) + " out of range for " + shape_str(a.shape()));
    }
    const std::size_t batch = a.extent(0), ntok = a.extent(1), d = a.extent(2);
    std::vector<T> out(batch * d);
    const auto& av = a.values();
    for (std::size_t i = 0; i < batch; ++i) {
        std::copy(av.begin() + (i * ntok + index) * d, av.begin() + (i * ntok + index + 1) * d,
                  out.begin() + i * d);
    }
    return make_op<T>(
        "select_token", {batch, d}, std::move(out), {a},
        [index, ntok, d](const Tensor<T>& y) {
            const auto& n = *y.node();
            if (!n.inputs[0].requires_grad()) return;
            const auto& g = y.grad();
            auto& ga = n.inputs[0].grad_accum();
            const std::size_t batch = y.extent(0);
            for (std::size_t i = 0; i < batch; ++i) {
                const T* src = g.data() + i * d;
                T* dst = ga.data() + (i * ntok + index) * d;
                for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
}

// ---- nonlinearities ----

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    std::vector<T> out(a.numel());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > T{0} ? av[i] : T{0};
    return make_op<T>(
        "relu", a.shape(), std::move(out), {a}, [](const Tensor<T>& y) {
            const auto& n = *y.node();
            if (!n.inputs[0].requires_grad()) return;
            const auto& g = y.grad();
            const auto& av = n.inputs[0].values();
            auto& ga = n.inputs[0].grad_accum();
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (av[i] > T{0}) ga[i] += g[i];
            }
        });
}

// Exact GELU: x * Phi(x), with Phi the standard normal CDF via erf.
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    constexpr T inv_sqrt2 = T{0.7071067811865475244008443621048490393};
    std::vector<T> out(a.numel());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T x = av[i];
        out[i] = x * T{0.5} * (T{1} + std::erf(x * inv_sqrt2));
    }
    return make_op<T>(
        "gelu", a.shape(), std::move(out), {a}, [](const Tensor<T>& y) {
            constexpr T inv_sqrt2 = T{0.7071067811865475244008443621048490393};
            const T inv_sqrt2pi = T{1} / std::sqrt(T{2} * std::numbers::pi_v<T>);
            const auto& n = *y.node();
            if (!n.inputs[0].requires_grad()) return;
            const auto& g = y.grad();
            const auto& av = n.inputs[0].values();
            auto& ga = n.inputs[0].grad_accum();
            for (std::size_t i = 0; i < g.size(); ++i) {
                const T x = av[i];
                const T cdf = T{0.5} * (T{1} + std::erf(x * inv_sqrt2));
                const T pdf = inv_sqrt2pi * std::exp(T{-0.5} * x * x);
                ga[i] += g[i] * (cdf + x * pdf);
            }
        });
}

// Softmax along the last axis, shift-stable. Non-finite input is rejected.
template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& a) {
    if (a.rank() == 0 || a.extent(a.rank() - 1) == 0) {
        detail::shape_error("softmax", "needs a non-empty last axis, got " + shape_str(a.shape()));
    }
    const auto& av = a.values();
    for (std::size_t i = 0; i < av.size(); ++i) {
        if (!std::isfinite(static_cast<double>(av[i]))) {
            throw std::invalid_argument("softmax: non-finite input at flat index " + std::to_string(i));
        }
    }
    const std::size_t width = a.extent(a.rank() - 1);
    const std::size_t rows = a.numel() / width;
    std::vector<T> out(a.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* x = av.data() + r * width;
        T* y = out.data() + r * width;
        T mx = x[0];
        for (std::size_t j = 1; j < width; ++j) mx = std::max(mx, x[j]);
        T denom{0};
        for (std::size_t j = 0; j < width; ++j) {
            y[j] = std::exp(x[j] - mx);
            denom += y[j];
        }
        const T inv = T{1} / denom;
        for (std::size_t j = 0; j < width; ++j) y[j] *= inv;
    }
    return make_op<T>(
        "softmax", a.shape(), std::move(out), {a},
        [width, rows](const Tensor<T>& y) {
            const auto& n = *y.node();
            if (!n.inputs[0].requires_grad()) return;
            const auto& g = y.grad();
            const auto& yv = y.values();
            auto& ga = n.inputs[0].grad_accum();
            for (std::size_t r = 0; r < rows; ++r) {
                const T* gr = g.data() + r * width;
                const T* yr = yv.data() + r * width;
                T dot{0};
                for (std::size_t j = 0; j < width; ++j) dot += gr[j] * yr[j];
                T* dst = ga.data() + r * width;
                for (std::size_t j = 0; j < width; ++j) dst[j] += yr[j] * (gr[j] - dot);
            }
        });
}

// Layer normalization over the last axis with affine gamma/beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    const std::size_t width = x.extent(x.rank() - 1);
    if (gamma.numel() != width || beta.numel() != width) {
        detail::shape_error("layer_norm", "gamma/beta size must match last axis of " + shape_str(x.shape()));
    }
    const std::size_t rows = x.numel() / width;
    const auto& xv = x.values();
    const auto& gv = gamma.values();
    const auto& bv = beta.values();
    std::vector<T> out(x.numel());
    std::vector<T> means(rows), inv_stds(rows);
    const T invw = T{1} / static_cast<T>(width);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = xv.data() + r * width;
        T mu{0};
        for (std::size_t j = 0; j < width; ++j) mu += row[j];
        mu *= invw;
        T var{0};
        for (std::size_t j = 0; j < width; ++j) {
            const T dv = row[j] - mu;
            var += dv * dv;
        }
        var *= invw;
        const T inv_std = T{1} / std::sqrt(var + eps);
        means[r] = mu;
        inv_stds[r] = inv_std;
        T* dst = out.data() + r * width;
        for (std::size_t j = 0; j < width; ++j) {
            dst[j] = (row[j] - mu) * inv_std * gv[j] + bv[j];
        }
    }
    return make_op<T>(
        "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
        [width, rows, invw, means = std::move(means), inv_stds = std::move(inv_stds)](const Tensor<T>& y) {
            const auto& n = *y.node();
            const auto& g = y.grad();
            const auto& xv = n.inputs[0].values();
            const auto& gv = n.inputs[1].values();
            const bool need_x = n.inputs[0].requires_grad();
            const bool need_gamma = n.inputs[1].requires_grad();
            const bool need_beta = n.inputs[2].requires_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const T* xr = xv.data() + r * width;
                const T* gr = g.data() + r * width;
                const T mu = means[r];
                const T istd = inv_stds[r];
                if (need_gamma) {
                    auto& gg = n.inputs[1].grad_accum();
                    for (std::size_t j = 0; j < width; ++j) gg[j] += gr[j] * (xr[j] - mu) * istd;
                }
                if (need_beta) {
                    auto& gb = n.inputs[2].grad_accum();
                    for (std::size_t j = 0; j < width; ++j) gb[j] += gr[j];
                }
                if (need_x) {
                    // dx = istd*(gy*gamma - mean(gy*gamma) - xhat*mean(gy*gamma*xhat))
                    auto& gx = n.inputs[0].grad_accum();
                    T mean_gg{0}, mean_ggx{0};
                    for (std::size_t j = 0; j < width; ++j) {
                        const T t = gr[j] * gv[j];
                        mean_gg += t;
                        mean_ggx += t * (xr[j] - mu) * istd;
                    }
                    mean_gg *= invw;
                    mean_ggx *= invw;
                    T* dst = gx.data() + r * width;
                    for (std::size_t j = 0; j < width; ++j) {
                        const T xhat = (xr[j] - mu) * istd;
                        dst[j] += istd * (gr[j] * gv[j] - mean_gg - xhat * mean_ggx);
                    }
                }
            }
        });
}

// ---- patch embedding ----

// Non-overlapping PxP convolution (kernel size == stride): the patch
// embedding of both hierarchy levels. x:[B,H,W,C], kernel:[P,P,C,D],
// bias:[D] -> [B,H/P,W/P,D].
template <typename T>
Tensor<T> conv2d_patchify(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias) {
    if (x.rank() != 4 || kernel.rank() != 4 || bias.rank() != 1) {
        detail::shape_error("conv2d_patchify", "expected x[B,H,W,C], kernel[P,P,C,D], bias[D]; got " +
                                                   shape_str(x.shape()) + ", " + shape_str(kernel.shape()) +
                                                   ", " + shape_str(bias.shape()));
    }
    const std::size_t B = x.extent(0), H = x.extent(1), W = x.extent(2), C = x.extent(3);
    const std::size_t P = kernel.extent(0), D = kernel.extent(3);
    if (kernel.extent(1) != P || kernel.extent(2) != C || bias.extent(0) != D) {
        detail::shape_error("conv2d_patchify", "kernel " + shape_str(kernel.shape()) +
                                                   " inconsistent with input " + shape_str(x.shape()));
    }
    if (P == 0 || H % P != 0 || W % P != 0) {
        detail::shape_error("conv2d_patchify", "image " + std::to_string(H) + "x" + std::to_string(W) +
                                                   " not divisible by patch size " + std::to_string(P));
    }
    const std::size_t Ho = H / P, Wo = W / P;
    const auto& xv = x.values();
    const auto& kv = kernel.values();
    const auto& bv = bias.values();
    std::vector<T> out(B * Ho * Wo * D);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t oi = 0; oi < Ho; ++oi) {
            for (std::size_t oj = 0; oj < Wo; ++oj) {
                T* dst = out.data() + ((b * Ho + oi) * Wo + oj) * D;
                for (std::size_t d = 0; d < D; ++d) dst[d] = bv[d];
                for (std::size_t pi = 0; pi < P; ++pi) {
                    const T* xrow = xv.data() + ((b * H + oi * P + pi) * W + oj * P) * C;
                    const T* krow = kv.data() + pi * P * C * D;
                    for (std::size_t pj = 0; pj < P; ++pj) {
                        for (std::size_t c = 0; c < C; ++c) {
                            const T s = xrow[pj * C + c];
                            const T* kd = krow + (pj * C + c) * D;
                            for (std::size_t d = 0; d < D; ++d) dst[d] += s * kd[d];
                        }
                    }
                }
            }
        }
    }
    return make_op<T>(
        "conv2d_patchify", {B, Ho, Wo, D}, std::move(out), {x, kernel, bias},
        [B, H, W, C, P, D, Ho, Wo](const Tensor<T>& y) {
            const auto& n = *y.node();
            const auto& g = y.grad();
            const auto& xv = n.inputs[0].values();
            const auto& kv = n.inputs[1].values();
            const bool need_x = n.inputs[0].requires_grad();
            const bool need_k = n.inputs[1].requires_grad();
            const bool need_b = n.inputs[2].requires_grad();
            if (need_b) {
                auto& gb = n.inputs[2].grad_accum();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i % D] += g[i];
            }
            for (std::size_t b = 0; b < B && (need_x || need_k); ++b) {
                for (std::size_t oi = 0; oi < Ho; ++oi) {
                    for (std::size_t oj = 0; oj < Wo; ++oj) {
                        const T* grow = g.data() + ((b * Ho + oi) * Wo + oj) * D;
                        for (std::size_t pi = 0; pi < P; ++pi) {
                            const std::size_t xbase = ((b * H + oi * P + pi) * W + oj * P) * C;
                            for (std::size_t pj = 0; pj < P; ++pj) {
                                for (std::size_t c = 0; c < C; ++c) {
                                    const std::size_t xi = xbase + pj * C + c;
                                    const std::size_t kbase = ((pi * P + pj) * C + c) * D;
                                    if (need_k) {
                                        auto& gk = n.inputs[1].grad_accum();
                                        const T s = xv[xi];
                                        for (std::size_t d = 0; d < D; ++d) gk[kbase + d] += s * grow[d];
                                    }
                                    if (need_x) {
                                        auto& gx = n.inputs[0].grad_accum();
                                        T acc{0};
                                        for (std::size_t d = 0; d < D; ++d) acc += kv[kbase + d] * grow[d];
                                        gx[xi] += acc;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
}

// Affine map over the last axis: reshape to rows, matmul, add bias.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    const std::size_t in = x.extent(x.rank() - 1);
    if (w.rank() != 2 || w.extent(0) != in) {
        detail::shape_error("linear", "weight " + shape_str(w.shape()) + " does not accept input " + shape_str(x.shape()));
    }
    const std::size_t rows = x.numel() / in;
    Tensor<T> flat = reshape(x, {rows, in});
    Tensor<T> y = add(matmul(flat, w), b);
    Shape out_shape(x.shape());
    out_shape.back() = w.extent(1);
    return reshape(y, std::move(out_shape));
}

}  // namespace ghvit
