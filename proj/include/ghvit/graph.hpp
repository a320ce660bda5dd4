#pragma once

// Patch-grid adjacency and the graph-convolutional positional embedding.
//
// Patches of an r x c grid are numbered row-major (node = row*c + col).
// One-way mode connects each patch to the patch on its right and the patch
// below it; bidirectional mode is the symmetric closure. Normalization adds
// self-loops and divides each row by its degree, so every row of the
// normalized matrix is a weighted average over {self, neighbors}.

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "ghvit/ops.hpp"
#include "ghvit/tensor.hpp"

namespace ghvit {

enum class AdjacencyMode { kOneWay, kBidirectional };

inline const char* adjacency_mode_name(AdjacencyMode m) {
    return m == AdjacencyMode::kOneWay ? "one-way" : "bidirectional";
}

struct AdjacencyMatrix {
    std::size_t rows{0};
    std::size_t cols{0};
    AdjacencyMode mode{AdjacencyMode::kOneWay};
    std::vector<std::uint8_t> entries;  // n*n, row-major, values in {0,1}

    std::size_t n() const { return rows * cols; }
    std::uint8_t at(std::size_t i, std::size_t j) const { return entries[i * n() + j]; }

    std::size_t edge_count() const {
        std::size_t c = 0;
        for (auto v : entries) c += v;
        return c;
    }
};

struct NormalizedAdjacency {
    std::size_t n{0};
    std::vector<double> entries;  // n*n row-stochastic

    double at(std::size_t i, std::size_t j) const { return entries[i * n + j]; }

    template <typename T>
    Tensor<T> to_tensor() const {
        std::vector<T> data(entries.size());
        for (std::size_t i = 0; i < entries.size(); ++i) data[i] = static_cast<T>(entries[i]);
        return Tensor<T>::from_vector({n, n}, std::move(data));
    }
};

inline AdjacencyMatrix build_grid_adjacency(std::size_t rows, std::size_t cols, AdjacencyMode mode) {
    if (rows < 1 || cols < 1) {
        throw std::invalid_argument("build_grid_adjacency: grid dims must be positive, got " +
                                    std::to_string(rows) + "x" + std::to_string(cols));
    }
    AdjacencyMatrix a;
    a.rows = rows;
    a.cols = cols;
    a.mode = mode;
    const std::size_t n = rows * cols;
    a.entries.assign(n * n, 0);
    auto connect = [&](std::size_t i, std::size_t j) {
        a.entries[i * n + j] = 1;
        if (mode == AdjacencyMode::kBidirectional) a.entries[j * n + i] = 1;
    };
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            if (c + 1 < cols) connect(i, i + 1);        // right neighbor
            if (r + 1 < rows) connect(i, i + cols);     // below neighbor
        }
    }
    return a;
}

// Row-normalized adjacency with self-loops: D^-1 (A + I). Row normalization
// stays well defined for the asymmetric one-way matrix.
inline NormalizedAdjacency normalize_adjacency(const AdjacencyMatrix& a) {
    const std::size_t n = a.n();
    NormalizedAdjacency out;
    out.n = n;
    out.entries.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double degree = 1.0;  // self-loop
        for (std::size_t j = 0; j < n; ++j) degree += a.entries[i * n + j];
        const double w = 1.0 / degree;
        for (std::size_t j = 0; j < n; ++j) {
            if (a.entries[i * n + j]) out.entries[i * n + j] = w;
        }
        out.entries[i * n + i] = w;
    }
    return out;
}

// One graph-convolution layer: ReLU(A_hat x W). Accepts features either as
// [N,D] or batched [B,N,D]; W is a learned [D,D] parameter.
template <typename T>
Tensor<T> gcn_positional_embedding(const Tensor<T>& x, const NormalizedAdjacency& a_hat,
                                   const Tensor<T>& w) {
    const std::size_t d = x.extent(x.rank() - 1);
    if (w.rank() != 2 || w.extent(0) != d || w.extent(1) != d) {
        throw std::invalid_argument("gcn_positional_embedding: weight " + shape_str(w.shape()) +
                                    " must be square of side " + std::to_string(d));
    }
    Tensor<T> a = a_hat.to_tensor<T>();
    if (x.rank() == 2) {
        if (x.extent(0) != a_hat.n) {
            throw std::invalid_argument("gcn_positional_embedding: features " + shape_str(x.shape()) +
                                        " do not match adjacency of " + std::to_string(a_hat.n) + " nodes");
        }
        return relu(matmul(matmul(a, x), w));
    }
    if (x.rank() == 3) {
        if (x.extent(1) != a_hat.n) {
            throw std::invalid_argument("gcn_positional_embedding: features " + shape_str(x.shape()) +
                                        " do not match adjacency of " + std::to_string(a_hat.n) + " nodes");
        }
        const std::size_t batch = x.extent(0);
        Tensor<T> agg = bmm(expand_leading(a, batch), x);               // [B,N,D]
        Tensor<T> proj = matmul(reshape(agg, {batch * a_hat.n, d}), w); // [B*N,D]
        return relu(reshape(proj, {batch, a_hat.n, d}));
    }
    throw std::invalid_argument("gcn_positional_embedding: features must be [N,D] or [B,N,D], got " +
                                shape_str(x.shape()));
}

}  // namespace ghvit
