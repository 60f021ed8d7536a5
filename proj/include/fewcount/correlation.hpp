#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fewcount/conv_ops.hpp"
#include "fewcount/geometry.hpp"
#include "fewcount/norm_ops.hpp"
#include "fewcount/roi_ops.hpp"

namespace fewcount {

enum class RoiMode { align, pool };

// ---- backbone ---------------------------------------------------------------

template <typename T>
struct BackboneVars {
    Var<T> kernels; // (k,3,7,7)
    Var<T> bn_gamma;
    Var<T> bn_beta;
    Tensor<T>* bn_running_mean = nullptr;
    Tensor<T>* bn_running_var = nullptr;
};

// Single 7x7 stride-2 conv + batch norm + ReLU. Output spatial size is
// exactly (H/2, W/2); even inputs are required so the final x2 upsample in
// the heads restores the image size.
template <typename T>
Var<T> extract_query_feature(Var<T> image, const BackboneVars<T>& p, Mode bn_mode) {
    const Shape& s = image.shape();
    if (s.size() != 3 || s[0] != 3)
        throw ShapeError("extract_query_feature: expected a (3,H,W) image");
    if (s[1] % 2 != 0 || s[2] % 2 != 0)
        throw ShapeError("extract_query_feature: H and W must be even, got " + shape_str(s));
    const Shape& ks = p.kernels.shape();
    if (ks.size() != 4 || ks[1] != 3 || ks[2] != 7 || ks[3] != 7)
        throw ShapeError("extract_query_feature: kernels must be (k,3,7,7)");
    Var<T> feat = conv2d(image, p.kernels, 2, Padding::pixels(3));
    feat = batch_norm(feat, p.bn_gamma, p.bn_beta, *p.bn_running_mean, *p.bn_running_var,
                      bn_mode);
    return relu(feat);
}

// ---- support features -------------------------------------------------------

// Per-exemplar, per-scale support grids, exemplar-major:
// grid(i, s) = grids[i * num_scales + s].
template <typename T>
struct SupportFeatures {
    std::vector<Var<T>> grids;
    int num_exemplars = 0;
    int num_scales = 0;

    Var<T> grid(int exemplar, int scale) const {
        return grids[static_cast<size_t>(exemplar) * num_scales + scale];
    }
};

// Extracts fixed-size support features. Boxes live in image coordinates:
// each is rescaled about its centre by every scale factor, clipped to the
// image, projected to feature space by halving all four parameters (no
// rounding), then pooled by the selected RoI op.
template <typename T>
SupportFeatures<T> extract_support_features(Var<T> feat, const std::vector<BoundingBox>& boxes,
                                            int out_h, int out_w,
                                            const std::vector<double>& scales,
                                            RoiMode roi_mode) {
    if (boxes.empty()) throw ValidationError("extract_support_features: no exemplar boxes");
    if (scales.empty()) throw ConfigError("extract_support_features: no scale factors");
    const Shape& fs = feat.shape();
    if (fs.size() != 3) throw ShapeError("extract_support_features: feature must be (C,H,W)");
    double img_w = 2.0 * fs[2];
    double img_h = 2.0 * fs[1];
    SupportFeatures<T> out;
    out.num_exemplars = static_cast<int>(boxes.size());
    out.num_scales = static_cast<int>(scales.size());
    for (size_t i = 0; i < boxes.size(); ++i) {
        for (double s : scales) {
            BoundingBox scaled = clip_to(scale_about_center(boxes[i], s), img_w, img_h);
            if (!(scaled.w > 0.0) || !(scaled.h > 0.0))
                throw ValidationError("exemplar " + std::to_string(i) + ": box " +
                                      box_str(boxes[i]) + " scaled by " + std::to_string(s) +
                                      " lies outside the image");
            BoundingBox fb = project_half(scaled);
            try {
                out.grids.push_back(roi_mode == RoiMode::align
                                        ? roi_align(feat, fb, out_h, out_w)
                                        : roi_pool(feat, fb, out_h, out_w));
            } catch (const ValidationError& e) {
                throw ValidationError("exemplar " + std::to_string(i) + ": " + e.what());
            }
        }
    }
    return out;
}

// ---- ACFamNet similarity ----------------------------------------------------

// Correlates the query feature with every support grid. Results keep the
// exemplar as the leading (batch) axis with one channel per scale factor:
// K entries of shape (S, H_Q, W_Q).
template <typename T>
std::vector<Var<T>> acfamnet_similarity(Var<T> f_q, const SupportFeatures<T>& supports) {
    std::vector<Var<T>> per_exemplar;
    per_exemplar.reserve(static_cast<size_t>(supports.num_exemplars));
    for (int i = 0; i < supports.num_exemplars; ++i) {
        std::vector<Var<T>> maps;
        maps.reserve(static_cast<size_t>(supports.num_scales));
        for (int s = 0; s < supports.num_scales; ++s)
            maps.push_back(correlate(f_q, supports.grid(i, s)));
        per_exemplar.push_back(concat0(maps));
    }
    return per_exemplar;
}

// ---- residual feature enhancement -------------------------------------------

template <typename T>
struct ProjectionVars {
    Var<T> conv_w; // (C, Cin, 1, 1)
    Var<T> conv_b; // (C)
    Var<T> ln_gamma;
    Var<T> ln_beta;
};

template <typename T>
struct ProjectedFeatures {
    Var<T> query;                  // (C, H_Q, W_Q)
    std::vector<Var<T>> supports;  // each (C, H_S, W_S)
};

// Shared 1x1 projection + layer norm applied to the query feature and every
// support grid (weight sharing is deliberate: supports are crops of the
// query feature).
template <typename T>
ProjectedFeatures<T> project_features(Var<T> f_q, const SupportFeatures<T>& supports,
                                      const ProjectionVars<T>& p) {
    auto apply = [&](Var<T> x) {
        Var<T> y = bias_add(conv2d(x, p.conv_w, 1, Padding::same()), p.conv_b);
        return layer_norm(y, p.ln_gamma, p.ln_beta);
    };
    ProjectedFeatures<T> out;
    out.query = apply(f_q);
    out.supports.reserve(supports.grids.size());
    for (const Var<T>& g : supports.grids) out.supports.push_back(apply(g));
    return out;
}

// Point-wise comparison: each projected support acts as a correlation kernel
// over the projected query. Output (K, 1, H_Q, W_Q).
template <typename T>
Var<T> compare(Var<T> f_pq, const std::vector<Var<T>>& f_ps) {
    if (f_ps.empty()) throw ShapeError("compare: no support features");
    std::vector<Var<T>> maps;
    maps.reserve(f_ps.size());
    for (const Var<T>& s : f_ps) maps.push_back(correlate(f_pq, s));
    return stack0(maps);
}

template <typename T>
T score_scale(int h_s, int w_s, int c) {
    return static_cast<T>(1.0 / std::sqrt(static_cast<double>(h_s) * w_s * c));
}

// Exemplar normalisation: softmax across the exemplar axis of the scaled
// scores, independently at every spatial position.
template <typename T>
Var<T> enorm(Var<T> r0, int h_s, int w_s, int c) {
    if (r0.shape().size() != 4) throw ShapeError("enorm: expected (K,1,H,W)");
    return softmax0(scale(r0, score_scale<T>(h_s, w_s, c)));
}

// Spatial normalisation: exp of the scaled scores divided by the per-exemplar
// spatial maximum. Computed as exp(s - max(s)), which hits exactly 1 at each
// exemplar's argmax and cannot overflow.
template <typename T>
Var<T> snorm(Var<T> r0, int h_s, int w_s, int c) {
    if (r0.shape().size() != 4) throw ShapeError("snorm: expected (K,1,H,W)");
    Var<T> s = scale(r0, score_scale<T>(h_s, w_s, c));
    return exp_op(sub_bcast(s, spatial_max(s)));
}

// Element-wise product of the two normalisations; values lie in (0,1].
template <typename T>
Var<T> combine_scores(Var<T> r_en, Var<T> r_sn) {
    return mul(r_en, r_sn);
}

// Similarity-weighted aggregation: each single-channel score map is convolved
// with the flipped projected support (flip restores the support's spatial
// structure), then summed over the exemplar axis. Output (C, H_Q, W_Q).
template <typename T>
Var<T> weighted_aggregate(Var<T> r, const std::vector<Var<T>>& f_ps) {
    const Shape rs = r.shape(); // copy: op calls below may grow the graph
    if (rs.size() != 4 || rs[1] != 1) throw ShapeError("weighted_aggregate: R must be (K,1,H,W)");
    if (rs[0] != static_cast<int>(f_ps.size()))
        throw ShapeError("weighted_aggregate: exemplar count mismatch");
    Var<T> acc;
    for (int i = 0; i < rs[0]; ++i) {
        const Shape ss = f_ps[static_cast<size_t>(i)].shape();
        if (ss.size() != 3) throw ShapeError("weighted_aggregate: supports must be (C,hs,ws)");
        Var<T> kernels = reshape(flip_hw(f_ps[static_cast<size_t>(i)]),
                                 {ss[0], 1, ss[1], ss[2]});
        Var<T> term = conv2d(slice0(r, i), kernels, 1, Padding::same());
        acc = i == 0 ? term : add(acc, term);
    }
    return acc;
}

template <typename T>
struct FusionVars {
    Var<T> proj_w; // learnable scalar (the 1x1x1 kernel)
    Var<T> proj_b;
    Var<T> ln1_gamma;
    Var<T> ln1_beta;
    Var<T> h1_w; // (C,C,3,3)
    Var<T> h1_b;
    Var<T> h2_w; // (C,C,3,3)
    Var<T> h2_b;
    Var<T> ln2_gamma;
    Var<T> ln2_beta;
};

// Learnable fusion: f_PR = LN(w * f_R + b), then
// f'_Q = LN(f_PQ + h(f_PR)) with h = conv3x3 -> leaky ReLU -> dropout -> conv3x3.
template <typename T>
Var<T> feature_fusion(Var<T> f_pq, Var<T> f_r, const FusionVars<T>& p, T dropout_p,
                      T leaky_slope, Mode mode) {
    if (f_pq.shape() != f_r.shape())
        throw ShapeError("feature_fusion: shape mismatch " + shape_str(f_pq.shape()) + " vs " +
                         shape_str(f_r.shape()));
    Var<T> f_pr = layer_norm(affine_scalar(f_r, p.proj_w, p.proj_b), p.ln1_gamma, p.ln1_beta);
    Var<T> h = bias_add(conv2d(f_pr, p.h1_w, 1, Padding::same()), p.h1_b);
    h = dropout(leaky_relu(h, leaky_slope), dropout_p, mode);
    h = bias_add(conv2d(h, p.h2_w, 1, Padding::same()), p.h2_b);
    return layer_norm(add(f_pq, h), p.ln2_gamma, p.ln2_beta);
}

template <typename T>
struct RfeBlockVars {
    ProjectionVars<T> proj;
    FusionVars<T> fuse;
};

template <typename T>
struct RfeConfig {
    int roi_out_h = 3;
    int roi_out_w = 3;
    RoiMode roi_mode = RoiMode::align;
    std::vector<double> scales = {1.0};
    T dropout_p = T(0.1);
    T leaky_slope = T(0.01);
};

template <typename T>
struct RfeResult {
    Var<T> enhanced; // (C, H_Q, W_Q)
    Var<T> scores;   // final R, (K*S, 1, H_Q, W_Q)
};

// One residual feature enhancement block: extract supports from the block's
// input feature, project, compare, normalise, aggregate with flipped kernels,
// fuse. Multi-scale supports enter as additional exemplars.
template <typename T>
RfeResult<T> rfe_block(Var<T> x, const std::vector<BoundingBox>& boxes,
                       const RfeBlockVars<T>& p, const RfeConfig<T>& cfg, Mode mode) {
    SupportFeatures<T> supports =
        extract_support_features(x, boxes, cfg.roi_out_h, cfg.roi_out_w, cfg.scales,
                                 cfg.roi_mode);
    ProjectedFeatures<T> proj = project_features(x, supports, p.proj);
    int c = proj.query.shape()[0];
    Var<T> r0 = compare(proj.query, proj.supports);
    Var<T> r = combine_scores(enorm(r0, cfg.roi_out_h, cfg.roi_out_w, c),
                              snorm(r0, cfg.roi_out_h, cfg.roi_out_w, c));
    Var<T> f_r = weighted_aggregate(r, proj.supports);
    Var<T> enhanced = feature_fusion(proj.query, f_r, p.fuse, cfg.dropout_p, cfg.leaky_slope,
                                     mode);
    return RfeResult<T>{enhanced, r};
}

// Stacks N enhancement blocks. Block j > 1 consumes block j-1's enhanced
// feature as its query and re-extracts supports from it (boxes stay fixed in
// image coordinates). Returns the final enhanced feature and final R.
template <typename T>
RfeResult<T> rfe_stack(Var<T> f_q, const std::vector<BoundingBox>& boxes,
                       const std::vector<RfeBlockVars<T>>& blocks, const RfeConfig<T>& cfg,
                       Mode mode) {
    if (blocks.empty()) throw ConfigError("rfe_stack: need at least one block");
    Var<T> x = f_q;
    RfeResult<T> last;
    for (const RfeBlockVars<T>& p : blocks) {
        last = rfe_block(x, boxes, p, cfg, mode);
        x = last.enhanced;
    }
    return last;
}

} // namespace fewcount
