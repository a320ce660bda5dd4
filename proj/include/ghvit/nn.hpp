#pragma once

// Transformer building blocks shared by both hierarchy levels: multi-head
// self-attention and the pre-LN residual encoder layer
//   x' = x + MHSA(LN(x)),  out = x' + MLP(LN(x'))
// with MLP = affine -> GELU -> affine at hidden width 4D.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

#include "ghvit/ops.hpp"
#include "ghvit/tensor.hpp"

namespace ghvit {

template <typename T>
struct AttentionParams {
    Tensor<T> w_q, w_k, w_v, w_o;  // [D,D]
    Tensor<T> b_q, b_k, b_v, b_o;  // [D]
    std::size_t heads{1};

    std::size_t dim() const { return w_q.extent(0); }
    std::size_t head_dim() const { return dim() / heads; }

    void validate() const {
        if (heads == 0 || dim() % heads != 0) {
            throw std::invalid_argument("AttentionParams: embed dim " + std::to_string(dim()) +
                                        " not divisible by heads " + std::to_string(heads));
        }
    }
};

template <typename T>
struct LayerNormParams {
    Tensor<T> gamma, beta;  // [D]
};

template <typename T>
struct EncoderLayerParams {
    AttentionParams<T> attention;
    LayerNormParams<T> ln1, ln2;
    Tensor<T> mlp_w1, mlp_b1;  // [D,4D], [4D]
    Tensor<T> mlp_w2, mlp_b2;  // [4D,D], [D]
};

// Scaled dot-product attention over all tokens, per head, concatenated and
// projected by w_o. Optionally exposes the attention probabilities
// ([B,heads,N,N]) for inspection.
template <typename T>
Tensor<T> mhsa(const Tensor<T>& x, const AttentionParams<T>& p, Tensor<T>* probs_out = nullptr) {
    p.validate();
    if (x.rank() != 3 || x.extent(2) != p.dim()) {
        throw std::invalid_argument("mhsa: input " + shape_str(x.shape()) + " does not match embed dim " +
                                    std::to_string(p.dim()));
    }
    const std::size_t batch = x.extent(0), ntok = x.extent(1), d = p.dim();
    const std::size_t heads = p.heads, hd = p.head_dim();

    auto split_heads = [&](const Tensor<T>& t) {
        // [B,N,D] -> [B,heads,N,hd]
        return permute(reshape(t, {batch, ntok, heads, hd}), {0, 2, 1, 3});
    };
    Tensor<T> q = split_heads(linear(x, p.w_q, p.b_q));
    Tensor<T> k = split_heads(linear(x, p.w_k, p.b_k));
    Tensor<T> v = split_heads(linear(x, p.w_v, p.b_v));

    Tensor<T> kt = permute(k, {0, 1, 3, 2});  // [B,heads,hd,N]
    const T scale = T{1} / std::sqrt(static_cast<T>(hd));
    Tensor<T> scores = mul_scalar(bmm(q, kt), scale);  // [B,heads,N,N]
    Tensor<T> probs = softmax_lastdim(scores);
    if (probs_out) *probs_out = probs;
    Tensor<T> ctx = bmm(probs, v);                              // [B,heads,N,hd]
    Tensor<T> merged = reshape(permute(ctx, {0, 2, 1, 3}), {batch, ntok, d});
    return linear(merged, p.w_o, p.b_o);
}

template <typename T>
Tensor<T> mlp_block(const Tensor<T>& x, const EncoderLayerParams<T>& p) {
    return linear(gelu(linear(x, p.mlp_w1, p.mlp_b1)), p.mlp_w2, p.mlp_b2);
}

template <typename T>
Tensor<T> encoder_layer(const Tensor<T>& x, const EncoderLayerParams<T>& p, T ln_eps) {
    Tensor<T> attn_in = layer_norm(x, p.ln1.gamma, p.ln1.beta, ln_eps);
    Tensor<T> x1 = add(x, mhsa(attn_in, p.attention));
    Tensor<T> mlp_in = layer_norm(x1, p.ln2.gamma, p.ln2.beta, ln_eps);
    return add(x1, mlp_block(mlp_in, p));
}

}  // namespace ghvit
