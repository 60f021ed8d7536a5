#pragma once

#include <vector>

#include "fewcount/conv_ops.hpp"
#include "fewcount/resize_ops.hpp"

namespace fewcount {

// ---- ACFamNet regression head ------------------------------------------------

// Five conv layers with fixed widths 196/128/64/32/1; x2 bilinear upsample
// after the first. conv1's input channel count equals the number of scale
// factors.
template <typename T>
struct AcfamnetHeadVars {
    Var<T> w1, b1; // (196, S, 7, 7)
    Var<T> w2, b2; // (128, 196, 5, 5)
    Var<T> w3, b3; // (64, 128, 3, 3)
    Var<T> w4, b4; // (32, 64, 1, 1)
    Var<T> w5, b5; // (1, 32, 1, 1)
};

// Maps per-exemplar similarity maps (each (S, H_Q, W_Q)) to one density map
// of shape (1, 2*H_Q, 2*W_Q). The exemplar axis is treated as a batch through
// shared weights and averaged at the end.
template <typename T>
Var<T> acfamnet_head(const std::vector<Var<T>>& similarity, const AcfamnetHeadVars<T>& p) {
    if (similarity.empty()) throw ShapeError("acfamnet_head: no similarity maps");
    for (const Var<T>& s : similarity)
        if (!s.value().all_finite()) throw NumericError("acfamnet_head: non-finite input");
    Var<T> acc;
    for (size_t i = 0; i < similarity.size(); ++i) {
        Var<T> z = relu(bias_add(conv2d(similarity[i], p.w1, 1, Padding::same()), p.b1));
        z = bilinear_resize(z, 2.0);
        z = relu(bias_add(conv2d(z, p.w2, 1, Padding::same()), p.b2));
        z = relu(bias_add(conv2d(z, p.w3, 1, Padding::same()), p.b3));
        z = relu(bias_add(conv2d(z, p.w4, 1, Padding::same()), p.b4));
        z = relu(bias_add(conv2d(z, p.w5, 1, Padding::same()), p.b5));
        acc = i == 0 ? z : add(acc, z);
    }
    return scale(acc, static_cast<T>(1.0 / static_cast<double>(similarity.size())));
}

// ---- ACFamNet Pro regression head ---------------------------------------------

// Four main conv layers (k_embed, m, m, m with m = k_embed/2), upsample after
// the first, three residual connections, and a trailing 1x1 projection to one
// channel followed by ReLU.
template <typename T>
struct ProHeadVars {
    Var<T> w1, b1;         // (k_embed, C, 7, 7)
    Var<T> w2, b2;         // (m, k_embed, 5, 5)
    Var<T> res1_w, res1_b; // (m, C, 1, 1)
    Var<T> res2_w, res2_b; // (m, 1, 1, 1); absent when residual similarity is off
    Var<T> w3, b3;         // (m, m, 3, 3)
    Var<T> w4, b4;         // (m, m, 3, 3)
    Var<T> out_w, out_b;   // (1, m, 1, 1)
};

template <typename T>
Var<T> pro_head(Var<T> f_q_prime, Var<T> scores, const ProHeadVars<T>& p,
                bool residual_similarity, T leaky_slope) {
    if (!f_q_prime.value().all_finite() || !scores.value().all_finite())
        throw NumericError("pro_head: non-finite input");
    const Shape rs = scores.shape(); // copy: op calls below may grow the graph
    if (rs.size() != 4 || rs[1] != 1) throw ShapeError("pro_head: scores must be (K,1,H,W)");
    // main path
    Var<T> a = leaky_relu(bias_add(conv2d(f_q_prime, p.w1, 1, Padding::same()), p.b1),
                          leaky_slope);
    a = bilinear_resize(a, 2.0);
    a = leaky_relu(bias_add(conv2d(a, p.w2, 1, Padding::same()), p.b2), leaky_slope);
    // residual 1: upsampled enhanced feature through a 1x1 projection
    Var<T> res1 =
        bias_add(conv2d(bilinear_resize(f_q_prime, 2.0), p.res1_w, 1, Padding::same()), p.res1_b);
    Var<T> b = add(a, res1);
    // residual 2: exemplar-summed similarity map, upsampled, 1x1-projected
    if (residual_similarity) {
        Var<T> r_sum = slice0(scores, 0);
        for (int i = 1; i < rs[0]; ++i) r_sum = add(r_sum, slice0(scores, i));
        Var<T> res2 =
            bias_add(conv2d(bilinear_resize(r_sum, 2.0), p.res2_w, 1, Padding::same()), p.res2_b);
        b = add(b, res2);
    }
    Var<T> c = leaky_relu(bias_add(conv2d(b, p.w3, 1, Padding::same()), p.b3), leaky_slope);
    c = bias_add(conv2d(c, p.w4, 1, Padding::same()), p.b4);
    // residual 3: the third layer's input joins the final layer's output
    Var<T> pre = add(b, c);
    return relu(bias_add(conv2d(pre, p.out_w, 1, Padding::same()), p.out_b));
}

} // namespace fewcount
