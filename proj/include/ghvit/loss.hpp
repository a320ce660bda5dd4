#pragma once

// Mean cross-entropy over a batch of logits, computed through log-sum-exp
// so large logits cannot overflow. Its gradient w.r.t. the logits is
// (softmax(logits) - one_hot(label)) / B.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "ghvit/tensor.hpp"

namespace ghvit {

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) {
        throw std::invalid_argument("cross_entropy: logits must be [B,K], got " +
                                    shape_str(logits.shape()));
    }
    const std::size_t b = logits.extent(0), k = logits.extent(1);
    if (labels.size() != b) {
        throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(b) + " logit rows");
    }
    for (std::size_t i = 0; i < b; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
            throw std::invalid_argument("cross_entropy: label " + std::to_string(labels[i]) +
                                        " at row " + std::to_string(i) + " outside [0," +
                                        std::to_string(k) + ")");
        }
    }

    const auto& x = logits.values();
    T total{0};
    for (std::size_t i = 0; i < b; ++i) {
        const T* row = x.data() + i * k;
        T m = row[0];
        for (std::size_t j = 1; j < k; ++j) m = std::max(m, row[j]);
        T s{0};
        for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - m);
        total += m + std::log(s) - row[static_cast<std::size_t>(labels[i])];
    }
    const T loss = total / static_cast<T>(b);

    return make_op<T>(
        "cross_entropy", {}, {loss}, {logits}, [labels, b, k](const Tensor<T>& y) {
            const T gy = y.grad()[0];
            const auto& in = y.node()->inputs[0];
            if (!in.requires_grad()) return;
            const auto& xv = in.values();
            auto& gx = in.grad_accum();
            const T inv_b = T{1} / static_cast<T>(b);
            for (std::size_t i = 0; i < b; ++i) {
                const T* row = xv.data() + i * k;
                T m = row[0];
                for (std::size_t j = 1; j < k; ++j) m = std::max(m, row[j]);
                T s{0};
                for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - m);
                for (std::size_t j = 0; j < k; ++j) {
                    T p = std::exp(row[j] - m) / s;
                    if (j == static_cast<std::size_t>(labels[i])) p -= T{1};
                    gx[i * k + j] += gy * inv_b * p;
                }
            }
        });
}

}  // namespace ghvit
