#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "fewcount/geometry.hpp"
#include "fewcount/graph.hpp"

namespace fewcount {

namespace roi_detail {

inline void check_roi_args(const Shape& fs, const BoundingBox& box, int out_h, int out_w,
                           const char* op) {
    if (fs.size() != 3) throw ShapeError(std::string(op) + ": feature must be (C,H,W)");
    if (out_h < 1 || out_w < 1) throw ShapeError(std::string(op) + ": output size must be >= 1");
    if (!(box.h > 0.0) || !(box.w > 0.0))
        throw ValidationError(std::string(op) + ": degenerate box " + box_str(box));
    double H = fs[1], W = fs[2];
    if (box.x >= W || box.y >= H || box.x + box.w <= 0.0 || box.y + box.h <= 0.0)
        throw ValidationError(std::string(op) + ": box " + box_str(box) +
                              " does not intersect the feature extent");
}

// One bilinear sample at continuous coordinates. Values are treated as
// located at integer grid points; samples more than one pixel outside the
// grid contribute zero,边 samples clamp to the border row/column.
struct Tap {
    long long idx[4]; // spatial offsets within one channel plane
    double wgt[4];
    bool zero;
};

inline Tap bilinear_tap(double y, double x, int H, int W) {
    Tap t{};
    if (y < -1.0 || y > static_cast<double>(H) || x < -1.0 || x > static_cast<double>(W)) {
        t.zero = true;
        return t;
    }
    if (y < 0.0) y = 0.0;
    if (x < 0.0) x = 0.0;
    int y0 = static_cast<int>(y);
    int x0 = static_cast<int>(x);
    int y1 = y0;
    int x1 = x0;
    double ly, lx;
    if (y0 >= H - 1) {
        y0 = y1 = H - 1;
        ly = 0.0;
    } else {
        y1 = y0 + 1;
        ly = y - y0;
    }
    if (x0 >= W - 1) {
        x0 = x1 = W - 1;
        lx = 0.0;
    } else {
        x1 = x0 + 1;
        lx = x - x0;
    }
    double hy = 1.0 - ly, hx = 1.0 - lx;
    t.idx[0] = static_cast<long long>(y0) * W + x0;
    t.idx[1] = static_cast<long long>(y0) * W + x1;
    t.idx[2] = static_cast<long long>(y1) * W + x0;
    t.idx[3] = static_cast<long long>(y1) * W + x1;
    t.wgt[0] = hy * hx;
    t.wgt[1] = hy * lx;
    t.wgt[2] = ly * hx;
    t.wgt[3] = ly * lx;
    t.zero = false;
    return t;
}

} // namespace roi_detail

// RoI Align: continuous box coordinates, no quantisation. Each output cell
// averages 4 bilinear samples taken on the cell's regular 2x2 sub-grid.
// Differentiable w.r.t. the feature values.
template <typename T>
Var<T> roi_align(Var<T> feat, const BoundingBox& box, int out_h, int out_w) {
    roi_detail::check_roi_args(feat.shape(), box, out_h, out_w, "roi_align");
    const Tensor<T>& fv = feat.value();
    int C = fv.dim(0), H = fv.dim(1), W = fv.dim(2);
    double bin_h = box.h / out_h;
    double bin_w = box.w / out_w;
    // Sample geometry is channel-independent; compute the taps once.
    std::vector<roi_detail::Tap> taps;
    taps.reserve(static_cast<size_t>(out_h) * out_w * 4);
    for (int i = 0; i < out_h; ++i)
        for (int j = 0; j < out_w; ++j)
            for (int sy = 0; sy < 2; ++sy)
                for (int sx = 0; sx < 2; ++sx) {
                    double y = box.y + (i + (sy + 0.5) / 2.0) * bin_h;
                    double x = box.x + (j + (sx + 0.5) / 2.0) * bin_w;
                    taps.push_back(roi_detail::bilinear_tap(y, x, H, W));
                }
    Tensor<T> out(Shape{C, out_h, out_w});
    long long hw = static_cast<long long>(H) * W;
    long long cells = static_cast<long long>(out_h) * out_w;
    for (int c = 0; c < C; ++c) {
        const T* plane = fv.data() + c * hw;
        T* dst = out.data() + c * cells;
        for (long long cell = 0; cell < cells; ++cell) {
            double acc = 0.0;
            for (int s = 0; s < 4; ++s) {
                const roi_detail::Tap& t = taps[static_cast<size_t>(cell * 4 + s)];
                if (t.zero) continue;
                for (int q = 0; q < 4; ++q)
                    acc += t.wgt[q] * static_cast<double>(plane[t.idx[q]]);
            }
            dst[cell] = static_cast<T>(acc / 4.0);
        }
    }
    return feat.g->make(std::move(out), feat.g->requires_grad(feat.id),
                        [fi = feat.id, taps = std::move(taps), C, hw, cells](Graph<T>& g,
                                                                             int self) {
                            if (!g.requires_grad(fi)) return;
                            const Tensor<T>& dy = g.grad(self);
                            Tensor<T>& dx = g.grad(fi);
                            for (int c = 0; c < C; ++c) {
                                T* plane = dx.data() + c * hw;
                                const T* d = dy.data() + c * cells;
                                for (long long cell = 0; cell < cells; ++cell) {
                                    double dv = static_cast<double>(d[cell]) / 4.0;
                                    for (int s = 0; s < 4; ++s) {
                                        const roi_detail::Tap& t =
                                            taps[static_cast<size_t>(cell * 4 + s)];
                                        if (t.zero) continue;
                                        for (int q = 0; q < 4; ++q)
                                            plane[t.idx[q]] += static_cast<T>(t.wgt[q] * dv);
                                    }
                                }
                            }
                        });
}

// RoI pooling: box boundaries quantised by floor, max within each integer
// bin. Insensitive to sub-pixel box shifts by construction.
template <typename T>
Var<T> roi_pool(Var<T> feat, const BoundingBox& box, int out_h, int out_w) {
    roi_detail::check_roi_args(feat.shape(), box, out_h, out_w, "roi_pool");
    const Tensor<T>& fv = feat.value();
    int C = fv.dim(0), H = fv.dim(1), W = fv.dim(2);
    int x0 = static_cast<int>(std::floor(box.x));
    int y0 = static_cast<int>(std::floor(box.y));
    int x1 = static_cast<int>(std::floor(box.x + box.w));
    int y1 = static_cast<int>(std::floor(box.y + box.h));
    int cw = std::max(1, x1 - x0);
    int ch = std::max(1, y1 - y0);
    long long hw = static_cast<long long>(H) * W;
    long long cells = static_cast<long long>(out_h) * out_w;
    Tensor<T> out(Shape{C, out_h, out_w});
    // argmax spatial offset per (c, cell); -1 marks an empty bin
    std::vector<long long> arg(static_cast<size_t>(C) * cells, -1);
    for (int i = 0; i < out_h; ++i) {
        int hs = std::clamp(y0 + (i * ch) / out_h, 0, H);
        int he = std::clamp(y0 + ((i + 1) * ch + out_h - 1) / out_h, 0, H);
        for (int j = 0; j < out_w; ++j) {
            int ws = std::clamp(x0 + (j * cw) / out_w, 0, W);
            int we = std::clamp(x0 + ((j + 1) * cw + out_w - 1) / out_w, 0, W);
            long long cell = static_cast<long long>(i) * out_w + j;
            for (int c = 0; c < C; ++c) {
                const T* plane = fv.data() + c * hw;
                bool found = false;
                T best = T(0);
                long long best_idx = -1;
                for (int yy = hs; yy < he; ++yy)
                    for (int xx = ws; xx < we; ++xx) {
                        T v = plane[static_cast<long long>(yy) * W + xx];
                        if (!found || v > best) {
                            found = true;
                            best = v;
                            best_idx = static_cast<long long>(yy) * W + xx;
                        }
                    }
                out.data()[c * cells + cell] = found ? best : T(0);
                arg[static_cast<size_t>(c * cells + cell)] = best_idx;
            }
        }
    }
    return feat.g->make(std::move(out), feat.g->requires_grad(feat.id),
                        [fi = feat.id, arg = std::move(arg), C, hw, cells](Graph<T>& g,
                                                                           int self) {
                            if (!g.requires_grad(fi)) return;
                            const Tensor<T>& dy = g.grad(self);
                            Tensor<T>& dx = g.grad(fi);
                            for (long long i = 0; i < static_cast<long long>(C) * cells; ++i) {
                                long long a = arg[static_cast<size_t>(i)];
                                if (a >= 0) dx[(i / cells) * hw + a] += dy[i];
                            }
                        });
}

} // namespace fewcount
