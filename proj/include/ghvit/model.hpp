#pragma once

// The five model variants, assembled end to end from an image batch to
// class logits.
//
//   vit4, vit16   single-level ViT: patchify (P = H/2 or H/4), prepend the
//                 class token, add a learnable positional table over all
//                 tokens, L encoder layers, head on token 0. The head
//                 layer-norms the class token before its affine map (the
//                 usual ViT arrangement; the pre-LN encoder otherwise hands
//                 the head an unnormalized residual stream).
//   hvit          two levels: 16 small-patch tokens -> L encoder layers ->
//                 reshape to the 4x4 token grid -> 2x2 patchify -> 4 tokens
//                 -> class token -> L encoder layers -> head. Learnable
//                 positional tables at both levels.
//   gcn_hvit_1/2  hvit with both positional tables replaced by one-layer
//                 graph convolutions over the patch grid (one-way /
//                 bidirectional adjacency).
//
// Pipeline shapes (28x28 input, embed dim D):
//   images [B,28,28,1] -> f1 [B,4,4,D] -> x_p [B,16,D] -> k [B,16,D]
//   -> z [B,4,4,D] -> f2 [B,2,2,D] -> z_p [B,4,D] -> h [B,5,D]
//   -> logits [B,10]

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ghvit/graph.hpp"
#include "ghvit/nn.hpp"
#include "ghvit/ops.hpp"
#include "ghvit/rng.hpp"
#include "ghvit/tensor.hpp"

namespace ghvit {

enum class Variant { kVit4, kVit16, kHvit, kGcnHvit1, kGcnHvit2 };
enum class PosMode { kLearnable1d, kGcn };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::kVit4: return "vit4";
        case Variant::kVit16: return "vit16";
        case Variant::kHvit: return "hvit";
        case Variant::kGcnHvit1: return "gcn_hvit_1";
        case Variant::kGcnHvit2: return "gcn_hvit_2";
    }
    return "?";
}

inline Variant parse_variant(const std::string& name) {
    for (Variant v : {Variant::kVit4, Variant::kVit16, Variant::kHvit, Variant::kGcnHvit1,
                      Variant::kGcnHvit2}) {
        if (name == variant_name(v)) return v;
    }
    throw std::invalid_argument("unknown variant '" + name +
                                "' (valid: vit4, vit16, hvit, gcn_hvit_1, gcn_hvit_2)");
}

struct ModelConfig {
    Variant variant{Variant::kGcnHvit1};
    std::size_t image_h{28}, image_w{28}, channels{1};
    std::size_t embed_dim{64};
    std::size_t layers_per_level{4};
    std::size_t heads{4};
    std::size_t num_classes{10};
    PosMode pos_mode{PosMode::kGcn};
    AdjacencyMode adjacency_mode{AdjacencyMode::kOneWay};
    float ln_eps{1e-5f};

    bool hierarchical() const { return variant != Variant::kVit4 && variant != Variant::kVit16; }

    // Level-1 patch size; for vit4 the single level uses H/2.
    std::size_t patch_size() const { return variant == Variant::kVit4 ? image_h / 2 : image_h / 4; }
    std::size_t grid_side() const { return image_h / patch_size(); }
    std::size_t tokens_level1() const { return grid_side() * grid_side(); }
    std::size_t tokens_level2() const { return 4; }

    void validate() const {
        if (image_h != image_w) {
            throw std::invalid_argument("config: image must be square, got " + std::to_string(image_h) +
                                        "x" + std::to_string(image_w));
        }
        const std::size_t div = variant == Variant::kVit4 ? 2 : 4;
        if (image_h == 0 || image_h % div != 0) {
            throw std::invalid_argument("config: image side " + std::to_string(image_h) +
                                        " not divisible by " + std::to_string(div) + " for variant " +
                                        variant_name(variant));
        }
        if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) {
            throw std::invalid_argument("config: embed dim " + std::to_string(embed_dim) +
                                        " not divisible by heads " + std::to_string(heads));
        }
        if (layers_per_level == 0) throw std::invalid_argument("config: layers_per_level must be >= 1");
        if (num_classes == 0) throw std::invalid_argument("config: num_classes must be >= 1");
    }
};

// Populates variant-dependent fields; hyperparameters keep their defaults
// and can be adjusted afterwards.
inline ModelConfig build_variant(const std::string& name, std::size_t image_h, std::size_t image_w,
                                 std::size_t channels = 1) {
    ModelConfig cfg;
    cfg.variant = parse_variant(name);
    cfg.image_h = image_h;
    cfg.image_w = image_w;
    cfg.channels = channels;
    switch (cfg.variant) {
        case Variant::kVit4:
        case Variant::kVit16:
        case Variant::kHvit:
            cfg.pos_mode = PosMode::kLearnable1d;
            break;
        case Variant::kGcnHvit1:
            cfg.pos_mode = PosMode::kGcn;
            cfg.adjacency_mode = AdjacencyMode::kOneWay;
            break;
        case Variant::kGcnHvit2:
            cfg.pos_mode = PosMode::kGcn;
            cfg.adjacency_mode = AdjacencyMode::kBidirectional;
            break;
    }
    cfg.validate();
    return cfg;
}

// Named parameter set. `named` lists every tensor in registration order,
// which is also the initialization draw order and the checkpoint order.
template <typename T>
struct ModelParams {
    std::vector<std::pair<std::string, Tensor<T>>> named;

    Tensor<T> conv1_w, conv1_b;
    Tensor<T> pos_embed;         // vit*: [N+1,D]
    Tensor<T> pos1, pos2;        // hvit: [16,D],[4,D]
    Tensor<T> gcn_w1, gcn_w2;    // gcn variants: [D,D]
    std::vector<EncoderLayerParams<T>> level1;
    Tensor<T> conv2_w, conv2_b;  // hierarchical
    Tensor<T> class_token;       // [1,D]
    std::vector<EncoderLayerParams<T>> level2;
    LayerNormParams<T> head_ln;  // pre-head norm, ViT convention
    Tensor<T> head_w, head_b;

    Tensor<T>& find(const std::string& name) {
        for (auto& [n, t] : named) {
            if (n == name) return t;
        }
        throw std::invalid_argument("ModelParams: no parameter named '" + name + "'");
    }

    std::size_t total_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : named) n += t.numel();
        return n;
    }
};

namespace detail {

template <typename T>
Tensor<T> init_weight(Shape shape, Rng& rng) {
    std::vector<T> data(shape_numel(shape));
    for (auto& v : data) v = static_cast<T>(rng.trunc_normal(0.02));
    return Tensor<T>::from_vector(std::move(shape), std::move(data), true);
}

template <typename T>
Tensor<T> init_const(Shape shape, T value) {
    return Tensor<T>::full(std::move(shape), value, true);
}

}  // namespace detail

// Deterministic initialization: all weights are truncated normal (sigma
// 0.02); biases / LN beta / class token / positional tables are zero; LN
// gamma is one. Draws happen in registration order.
template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    ModelParams<T> p;
    const std::size_t d = cfg.embed_dim;
    auto reg = [&p](const std::string& name, Tensor<T> t) -> Tensor<T> {
        p.named.emplace_back(name, t);
        return t;
    };
    auto weight = [&](const std::string& name, Shape shape) {
        return reg(name, detail::init_weight<T>(std::move(shape), rng));
    };
    auto constant = [&](const std::string& name, Shape shape, T v) {
        return reg(name, detail::init_const<T>(std::move(shape), v));
    };

    const std::size_t patch = cfg.patch_size();
    p.conv1_w = weight("conv1.w", {patch, patch, cfg.channels, d});
    p.conv1_b = constant("conv1.b", {d}, T{0});

    if (cfg.pos_mode == PosMode::kGcn) {
        p.gcn_w1 = weight("gcn1.w", {d, d});
        p.gcn_w2 = weight("gcn2.w", {d, d});
    } else if (cfg.hierarchical()) {
        p.pos1 = constant("pos1", {cfg.tokens_level1(), d}, T{0});
        p.pos2 = constant("pos2", {cfg.tokens_level2(), d}, T{0});
    } else {
        p.pos_embed = constant("pos", {cfg.tokens_level1() + 1, d}, T{0});
    }

    auto make_layer = [&](const std::string& prefix) {
        EncoderLayerParams<T> l;
        l.attention.w_q = weight(prefix + ".attn.wq", {d, d});
        l.attention.w_k = weight(prefix + ".attn.wk", {d, d});
        l.attention.w_v = weight(prefix + ".attn.wv", {d, d});
        l.attention.w_o = weight(prefix + ".attn.wo", {d, d});
        l.attention.b_q = constant(prefix + ".attn.bq", {d}, T{0});
        l.attention.b_k = constant(prefix + ".attn.bk", {d}, T{0});
        l.attention.b_v = constant(prefix + ".attn.bv", {d}, T{0});
        l.attention.b_o = constant(prefix + ".attn.bo", {d}, T{0});
        l.attention.heads = cfg.heads;
        l.ln1.gamma = constant(prefix + ".ln1.g", {d}, T{1});
        l.ln1.beta = constant(prefix + ".ln1.b", {d}, T{0});
        l.ln2.gamma = constant(prefix + ".ln2.g", {d}, T{1});
        l.ln2.beta = constant(prefix + ".ln2.b", {d}, T{0});
        l.mlp_w1 = weight(prefix + ".mlp.w1", {d, 4 * d});
        l.mlp_b1 = constant(prefix + ".mlp.b1", {4 * d}, T{0});
        l.mlp_w2 = weight(prefix + ".mlp.w2", {4 * d, d});
        l.mlp_b2 = constant(prefix + ".mlp.b2", {d}, T{0});
        return l;
    };

    for (std::size_t i = 0; i < cfg.layers_per_level; ++i) {
        p.level1.push_back(make_layer("l1." + std::to_string(i)));
    }
    if (cfg.hierarchical()) {
        p.conv2_w = weight("conv2.w", {2, 2, d, d});
        p.conv2_b = constant("conv2.b", {d}, T{0});
    }
    p.class_token = constant("cls", {1, d}, T{0});
    if (cfg.hierarchical()) {
        for (std::size_t i = 0; i < cfg.layers_per_level; ++i) {
            p.level2.push_back(make_layer("l2." + std::to_string(i)));
        }
    }
    p.head_ln.gamma = constant("head.ln.g", {d}, T{1});
    p.head_ln.beta = constant("head.ln.b", {d}, T{0});
    p.head_w = weight("head.w", {d, cfg.num_classes});
    p.head_b = constant("head.b", {cfg.num_classes}, T{0});
    return p;
}

// Intermediate stages captured for shape verification and probing. Tensors
// are live graph handles, so their gradients are inspectable after a
// backward pass.
template <typename T>
struct ForwardTrace {
    Tensor<T> f1, x_p, e_pos1;
    std::vector<Tensor<T>> k_layers;
    Tensor<T> z, f2, z_p, e_pos2;
    std::vector<Tensor<T>> h_layers;
    Tensor<T> h_in;  // level-2 sequence with class token, before the encoder
    Tensor<T> logits;
};

namespace detail {

template <typename F>
auto stage(const char* name, F&& f) {
    try {
        return f();
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(std::string("stage ") + name + ": " + e.what());
    }
}

}  // namespace detail

// The bridge between hierarchy levels: 16 tokens back onto the 4x4 grid,
// token i -> cell (i / 4, i % 4).
template <typename T>
Tensor<T> reshape_bridge(const Tensor<T>& k) {
    if (k.rank() != 3 || k.extent(1) != 16) {
        throw std::invalid_argument("reshape_bridge: expected [B,16,D] tokens, got " +
                                    shape_str(k.shape()));
    }
    return reshape(k, {k.extent(0), 4, 4, k.extent(2)});
}

template <typename T>
Tensor<T> forward(const ModelConfig& cfg, const ModelParams<T>& p, const Tensor<T>& images,
                  ForwardTrace<T>* trace = nullptr) {
    if (images.rank() != 4 || images.extent(1) != cfg.image_h || images.extent(2) != cfg.image_w ||
        images.extent(3) != cfg.channels) {
        throw std::invalid_argument("stage input: images " + shape_str(images.shape()) +
                                    " do not match configured " + std::to_string(cfg.image_h) + "x" +
                                    std::to_string(cfg.image_w) + "x" + std::to_string(cfg.channels));
    }
    const std::size_t batch = images.extent(0);
    const std::size_t d = cfg.embed_dim;
    const T eps = static_cast<T>(cfg.ln_eps);

    if (!cfg.hierarchical()) {
        const std::size_t ntok = cfg.tokens_level1();
        Tensor<T> f1 = detail::stage("patch-embedding",
                                     [&] { return conv2d_patchify(images, p.conv1_w, p.conv1_b); });
        Tensor<T> x_p = reshape(f1, {batch, ntok, d});
        Tensor<T> cls = expand_leading(p.class_token, batch);  // [B,1,D]
        Tensor<T> h = detail::stage("position", [&] {
            return add(concat_tokens(cls, x_p), p.pos_embed);
        });
        if (trace) {
            trace->f1 = f1;
            trace->x_p = x_p;
            trace->e_pos1 = p.pos_embed;
            trace->h_in = h;  // the class-token sequence plays the level-2 role
        }
        for (std::size_t i = 0; i < cfg.layers_per_level; ++i) {
            h = detail::stage("encoder", [&] { return encoder_layer(h, p.level1[i], eps); });
            if (trace) trace->h_layers.push_back(h);
        }
        Tensor<T> logits = detail::stage("classification-head", [&] {
            return add(matmul(layer_norm(select_token(h, 0), p.head_ln.gamma, p.head_ln.beta, eps),
                              p.head_w),
                       p.head_b);
        });
        if (trace) trace->logits = logits;
        return logits;
    }

    // level 1: 16 small-patch tokens
    Tensor<T> f1 = detail::stage("level1-patch-embedding",
                                 [&] { return conv2d_patchify(images, p.conv1_w, p.conv1_b); });
    Tensor<T> x_p = reshape(f1, {batch, cfg.tokens_level1(), d});
    Tensor<T> e_pos1, k;
    if (cfg.pos_mode == PosMode::kGcn) {
        const NormalizedAdjacency a16 = normalize_adjacency(
            build_grid_adjacency(cfg.grid_side(), cfg.grid_side(), cfg.adjacency_mode));
        e_pos1 = detail::stage("level1-position",
                               [&] { return gcn_positional_embedding(x_p, a16, p.gcn_w1); });
        k = add(x_p, e_pos1);
    } else {
        e_pos1 = p.pos1;
        k = detail::stage("level1-position", [&] { return add(x_p, p.pos1); });
    }
    if (trace) {
        trace->f1 = f1;
        trace->x_p = x_p;
        trace->e_pos1 = e_pos1;
    }
    for (std::size_t i = 0; i < cfg.layers_per_level; ++i) {
        k = detail::stage("level1-encoder", [&] { return encoder_layer(k, p.level1[i], eps); });
        if (trace) trace->k_layers.push_back(k);
    }

    // level 2: aggregate to 4 large-patch tokens
    Tensor<T> z = detail::stage("level2-reshape", [&] { return reshape_bridge(k); });
    Tensor<T> f2 = detail::stage("level2-patch-embedding",
                                 [&] { return conv2d_patchify(z, p.conv2_w, p.conv2_b); });
    Tensor<T> z_p = reshape(f2, {batch, cfg.tokens_level2(), d});
    Tensor<T> e_pos2, h0;
    if (cfg.pos_mode == PosMode::kGcn) {
        const NormalizedAdjacency a4 =
            normalize_adjacency(build_grid_adjacency(2, 2, cfg.adjacency_mode));
        e_pos2 = detail::stage("level2-position",
                               [&] { return gcn_positional_embedding(z_p, a4, p.gcn_w2); });
        h0 = add(z_p, e_pos2);
    } else {
        e_pos2 = p.pos2;
        h0 = detail::stage("level2-position", [&] { return add(z_p, p.pos2); });
    }
    Tensor<T> cls = expand_leading(p.class_token, batch);
    Tensor<T> h = detail::stage("class-token", [&] { return concat_tokens(cls, h0); });
    if (trace) {
        trace->z = z;
        trace->f2 = f2;
        trace->z_p = z_p;
        trace->e_pos2 = e_pos2;
        trace->h_in = h;
    }
    for (std::size_t i = 0; i < cfg.layers_per_level; ++i) {
        h = detail::stage("level2-encoder", [&] { return encoder_layer(h, p.level2[i], eps); });
        if (trace) trace->h_layers.push_back(h);
    }
    Tensor<T> logits = detail::stage("classification-head", [&] {
        return add(matmul(layer_norm(select_token(h, 0), p.head_ln.gamma, p.head_ln.beta, eps),
                          p.head_w),
                   p.head_b);
    });
    if (trace) trace->logits = logits;
    return logits;
}

}  // namespace ghvit
