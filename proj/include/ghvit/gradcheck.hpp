#pragma once

// Central finite-difference verification of the autodiff engine, run in
// float64. Each check builds a scalar loss from a set of leaf tensors,
// backpropagates once, then perturbs every leaf element by +/-h and
// compares the analytic gradient against (f(x+h) - f(x-h)) / 2h.
//
// The error metric is |analytic - numeric| / max(1, |analytic|, |numeric|):
// relative for large gradients, absolute for small ones, so finite-
// difference roundoff on near-zero gradients does not drown the signal.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ghvit/graph.hpp"
#include "ghvit/loss.hpp"
#include "ghvit/model.hpp"
#include "ghvit/nn.hpp"
#include "ghvit/ops.hpp"
#include "ghvit/rng.hpp"
#include "ghvit/tensor.hpp"

namespace ghvit {

struct GradCheckReport {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    bool pass(double tol) const { return checked > 0 && max_rel_err < tol; }
};

namespace detail {

inline Tensor<double> random_leaf(Shape shape, Rng& rng, double scale = 1.0) {
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = rng.normal() * scale;
    return Tensor<double>::from_vector(std::move(shape), std::move(data), true);
}

// Random values bounded away from zero, for ops with a kink there (ReLU).
inline Tensor<double> random_leaf_off_kink(Shape shape, Rng& rng, double min_abs = 0.1) {
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) {
        double z;
        do {
            z = rng.normal();
        } while (std::fabs(z) < min_abs);
        v = z;
    }
    return Tensor<double>::from_vector(std::move(shape), std::move(data), true);
}

}  // namespace detail

// `make_loss` must rebuild the scalar loss from the leaves' current values
// on every call; leaves are perturbed in place between calls.
inline GradCheckReport check_gradients(const std::string& name,
                                       const std::function<Tensor<double>()>& make_loss,
                                       const std::vector<Tensor<double>>& leaves,
                                       double h = 1e-5) {
    GradCheckReport report;
    report.name = name;

    for (const auto& leaf : leaves) leaf.zero_grad();
    Tensor<double> loss = make_loss();
    if (loss.numel() != 1) {
        throw std::invalid_argument("check_gradients(" + name + "): loss must be scalar, got " +
                                    shape_str(loss.shape()));
    }
    loss.backward();

    std::vector<std::vector<double>> analytic;
    analytic.reserve(leaves.size());
    for (const auto& leaf : leaves) analytic.push_back(leaf.grad_accum());

    NoGradGuard no_grad;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& values = leaves[li].mutable_values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + h;
            const double up = make_loss().item();
            values[i] = saved - h;
            const double down = make_loss().item();
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[li][i];
            const double denom = std::max({1.0, std::fabs(a), std::fabs(numeric)});
            const double err = std::fabs(a - numeric) / denom;
            if (err > report.max_rel_err) report.max_rel_err = err;
            ++report.checked;
        }
    }
    return report;
}

// One finite-difference check per differentiable op (plus the composite
// blocks built from them), each on small random instances.
inline std::vector<GradCheckReport> run_op_suite(std::uint64_t seed) {
    std::vector<GradCheckReport> reports;
    Rng rng(seed);

    auto scalarize = [](const Tensor<double>& t) { return sum(mul(t, t)); };

    {
        Tensor<double> a = detail::random_leaf({3, 4}, rng);
        Tensor<double> b = detail::random_leaf({3, 4}, rng);
        reports.push_back(check_gradients(
            "add", [&] { return scalarize(add(a, b)); }, {a, b}));
    }
    {
        Tensor<double> a = detail::random_leaf({2, 3, 4}, rng);
        Tensor<double> b = detail::random_leaf({4}, rng);
        reports.push_back(check_gradients(
            "add-broadcast", [&] { return scalarize(add(a, b)); }, {a, b}));
    }
    {
        Tensor<double> a = detail::random_leaf({3, 5}, rng);
        Tensor<double> b = detail::random_leaf({3, 5}, rng);
        reports.push_back(check_gradients(
            "mul", [&] { return scalarize(mul(a, b)); }, {a, b}));
    }
    {
        Tensor<double> a = detail::random_leaf({4, 3}, rng);
        reports.push_back(check_gradients(
            "mul_scalar", [&] { return scalarize(mul_scalar(a, 0.37)); }, {a}));
    }
    {
        Tensor<double> a = detail::random_leaf({2, 3, 2}, rng);
        reports.push_back(check_gradients(
            "sum", [&] { return sum(a); }, {a}));
    }
    {
        Tensor<double> a = detail::random_leaf({3, 4}, rng);
        reports.push_back(check_gradients(
            "mean", [&] { return mean(a); }, {a}));
    }
    {
        Tensor<double> a = detail::random_leaf({3, 4}, rng);
        Tensor<double> b = detail::random_leaf({4, 5}, rng);
        reports.push_back(check_gradients(
            "matmul", [&] { return scalarize(matmul(a, b)); }, {a, b}));
    }
    {
        Tensor<double> a = detail::random_leaf({2, 3, 4}, rng);
        Tensor<double> b = detail::random_leaf({2, 4, 2}, rng);
        reports.push_back(check_gradients(
            "bmm", [&] { return scalarize(bmm(a, b)); }, {a, b}));
    }
    {
        Tensor<double> a = detail::random_leaf({2, 6}, rng);
        reports.push_back(check_gradients(
            "reshape", [&] { return scalarize(reshape(a, {3, 2, 2})); }, {a}));
    }
    {
        Tensor<double> a = detail::random_leaf({2, 3, 4, 5}, rng);
        reports.push_back(check_gradients(
            "permute", [&] { return scalarize(permute(a, {0, 2, 1, 3})); }, {a}));
    }
    {
        Tensor<double> a = detail::random_leaf({3, 4}, rng);
        reports.push_back(check_gradients(
            "expand_leading", [&] { return scalarize(expand_leading(a, 5)); }, {a}));
    }
    {
        Tensor<double> a = detail::random_leaf({2, 3, 4}, rng);
        Tensor<double> b = detail::random_leaf({2, 2, 4}, rng);
        reports.push_back(check_gradients(
            "concat_tokens", [&] { return scalarize(concat_tokens(a, b)); }, {a, b}));
    }
    {
        Tensor<double> a = detail::random_leaf({2, 5, 3}, rng);
        reports.push_back(check_gradients(
            "select_token", [&] { return scalarize(select_token(a, 2)); }, {a}));
    }
    {
        Tensor<double> a = detail::random_leaf_off_kink({4, 5}, rng);
        reports.push_back(check_gradients(
            "relu", [&] { return scalarize(relu(a)); }, {a}));
    }
    {
        Tensor<double> a = detail::random_leaf({4, 5}, rng);
        reports.push_back(check_gradients(
            "gelu", [&] { return scalarize(gelu(a)); }, {a}));
    }
    {
        Tensor<double> a = detail::random_leaf({3, 6}, rng);
        reports.push_back(check_gradients(
            "softmax_lastdim", [&] { return scalarize(softmax_lastdim(a)); }, {a}));
    }
    {
        Tensor<double> x = detail::random_leaf({2, 3, 8}, rng);
        Tensor<double> gamma = detail::random_leaf({8}, rng);
        Tensor<double> beta = detail::random_leaf({8}, rng);
        reports.push_back(check_gradients(
            "layer_norm", [&] { return scalarize(layer_norm(x, gamma, beta, 1e-5)); },
            {x, gamma, beta}));
    }
    {
        Tensor<double> x = detail::random_leaf({2, 4, 4, 2}, rng);
        Tensor<double> w = detail::random_leaf({2, 2, 2, 3}, rng);
        Tensor<double> b = detail::random_leaf({3}, rng);
        reports.push_back(check_gradients(
            "conv2d_patchify", [&] { return scalarize(conv2d_patchify(x, w, b)); }, {x, w, b}));
    }
    {
        Tensor<double> x = detail::random_leaf({2, 3, 4}, rng);
        Tensor<double> w = detail::random_leaf({4, 5}, rng);
        Tensor<double> b = detail::random_leaf({5}, rng);
        reports.push_back(check_gradients(
            "linear", [&] { return scalarize(linear(x, w, b)); }, {x, w, b}));
    }
    {
        const NormalizedAdjacency a_hat =
            normalize_adjacency(build_grid_adjacency(3, 3, AdjacencyMode::kOneWay));
        Tensor<double> x = detail::random_leaf({2, 9, 4}, rng);
        Tensor<double> w = detail::random_leaf({4, 4}, rng);
        reports.push_back(check_gradients(
            "gcn_positional_embedding",
            [&] { return scalarize(gcn_positional_embedding(x, a_hat, w)); }, {x, w}));
    }
    {
        AttentionParams<double> p;
        p.heads = 2;
        p.w_q = detail::random_leaf({6, 6}, rng, 0.5);
        p.w_k = detail::random_leaf({6, 6}, rng, 0.5);
        p.w_v = detail::random_leaf({6, 6}, rng, 0.5);
        p.w_o = detail::random_leaf({6, 6}, rng, 0.5);
        p.b_q = detail::random_leaf({6}, rng, 0.1);
        p.b_k = detail::random_leaf({6}, rng, 0.1);
        p.b_v = detail::random_leaf({6}, rng, 0.1);
        p.b_o = detail::random_leaf({6}, rng, 0.1);
        Tensor<double> x = detail::random_leaf({2, 4, 6}, rng, 0.5);
        reports.push_back(check_gradients(
            "mhsa", [&] { return scalarize(mhsa(x, p)); },
            {x, p.w_q, p.w_k, p.w_v, p.w_o, p.b_q, p.b_k, p.b_v, p.b_o}));
    }
    {
        EncoderLayerParams<double> p;
        p.attention.heads = 2;
        p.attention.w_q = detail::random_leaf({4, 4}, rng, 0.5);
        p.attention.w_k = detail::random_leaf({4, 4}, rng, 0.5);
        p.attention.w_v = detail::random_leaf({4, 4}, rng, 0.5);
        p.attention.w_o = detail::random_leaf({4, 4}, rng, 0.5);
        p.attention.b_q = detail::random_leaf({4}, rng, 0.1);
        p.attention.b_k = detail::random_leaf({4}, rng, 0.1);
        p.attention.b_v = detail::random_leaf({4}, rng, 0.1);
        p.attention.b_o = detail::random_leaf({4}, rng, 0.1);
        p.ln1.gamma = detail::random_leaf({4}, rng, 0.2);
        p.ln1.beta = detail::random_leaf({4}, rng, 0.1);
        p.ln2.gamma = detail::random_leaf({4}, rng, 0.2);
        p.ln2.beta = detail::random_leaf({4}, rng, 0.1);
        p.mlp_w1 = detail::random_leaf({4, 16}, rng, 0.3);
        p.mlp_b1 = detail::random_leaf({16}, rng, 0.1);
        p.mlp_w2 = detail::random_leaf({16, 4}, rng, 0.3);
        p.mlp_b2 = detail::random_leaf({4}, rng, 0.1);
        Tensor<double> x = detail::random_leaf({2, 3, 4}, rng, 0.5);
        std::vector<Tensor<double>> leaves = {x,
                                              p.attention.w_q,
                                              p.attention.w_k,
                                              p.attention.w_v,
                                              p.attention.w_o,
                                              p.attention.b_q,
                                              p.attention.b_k,
                                              p.attention.b_v,
                                              p.attention.b_o,
                                              p.ln1.gamma,
                                              p.ln1.beta,
                                              p.ln2.gamma,
                                              p.ln2.beta,
                                              p.mlp_w1,
                                              p.mlp_b1,
                                              p.mlp_w2,
                                              p.mlp_b2};
        reports.push_back(check_gradients(
            "encoder_layer", [&] { return scalarize(encoder_layer(x, p, 1e-5)); }, leaves));
    }
    {
        Tensor<double> logits = detail::random_leaf({3, 5}, rng);
        const std::vector<int> labels = {1, 4, 0};
        reports.push_back(check_gradients(
            "cross_entropy", [&] { return cross_entropy(logits, labels); }, {logits}));
    }
    return reports;
}

// Finite differences through the whole model: cross-entropy loss against
// every parameter, on a tiny configuration (D=8, L=1, heads=2, 8x8 input).
inline std::vector<GradCheckReport> run_model_suite(std::uint64_t seed) {
    std::vector<GradCheckReport> reports;
    const std::vector<std::string> variants = {"vit4", "vit16", "hvit", "gcn_hvit_1", "gcn_hvit_2"};
    for (const auto& name : variants) {
        ModelConfig cfg = build_variant(name, 8, 8, 1);
        cfg.embed_dim = 8;
        cfg.layers_per_level = 1;
        cfg.heads = 2;
        cfg.num_classes = 10;
        Rng rng(seed);
        ModelParams<double> params = init_params<double>(cfg, rng);
        // The head starts at zero, which would leave most of the graph with
        // zero gradient; give every parameter a small random value instead.
        for (auto& [pname, t] : params.named) {
            for (auto& v : t.mutable_values()) v = rng.normal() * 0.05;
        }
        const std::size_t batch = 2;
        std::vector<double> pixels(batch * 8 * 8);
        for (auto& v : pixels) v = rng.uniform();
        Tensor<double> images = Tensor<double>::from_vector({batch, 8, 8, 1}, std::move(pixels));
        std::vector<int> labels(batch);
        for (auto& l : labels) l = static_cast<int>(rng.rand_below(cfg.num_classes));

        std::vector<Tensor<double>> leaves;
        for (auto& [pname, t] : params.named) leaves.push_back(t);
        reports.push_back(check_gradients(
            "model:" + name, [&] { return cross_entropy(forward(cfg, params, images), labels); },
            leaves));
    }
    return reports;
}

}  // namespace ghvit
