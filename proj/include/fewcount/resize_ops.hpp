#pragma once

#include <cmath>
#include <vector>

#include "fewcount/graph.hpp"

namespace fewcount {

namespace resize_detail {

struct Tap1d {
    int i0, i1;
    double w0, w1;
};

// Align-corners-false sampling: output index o reads the source at
// (o + 0.5)/r - 0.5 with r = out/in, clamped to the valid range.
inline std::vector<Tap1d> make_taps(int in, int out) {
    std::vector<Tap1d> taps(static_cast<size_t>(out));
    double r = static_cast<double>(out) / in;
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) / r - 0.5;
        if (src < 0.0) src = 0.0;
        if (src > in - 1) src = in - 1;
        int i0 = static_cast<int>(src);
        int i1 = std::min(i0 + 1, in - 1);
        double w1 = src - i0;
        taps[static_cast<size_t>(o)] = Tap1d{i0, i1, 1.0 - w1, w1};
    }
    return taps;
}

} // namespace resize_detail

// Bilinear resize of a (C,H,W) map by a positive scale factor. Output size
// is round(scale*H) x round(scale*W).
template <typename T>
Var<T> bilinear_resize(Var<T> x, double scale) {
    if (!(scale > 0.0)) throw ShapeError("bilinear_resize: scale must be > 0");
    const Tensor<T>& xv = x.value();
    if (xv.rank() != 3) throw ShapeError("bilinear_resize: expected (C,H,W)");
    int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    int ho = static_cast<int>(std::lround(scale * H));
    int wo = static_cast<int>(std::lround(scale * W));
    if (ho < 1 || wo < 1) throw ShapeError("bilinear_resize: resulting size < 1");
    auto ty = resize_detail::make_taps(H, ho);
    auto tx = resize_detail::make_taps(W, wo);
    Tensor<T> out(Shape{C, ho, wo});
    long long hw_in = static_cast<long long>(H) * W;
    long long hw_out = static_cast<long long>(ho) * wo;
    for (int c = 0; c < C; ++c) {
        const T* src = xv.data() + c * hw_in;
        T* dst = out.data() + c * hw_out;
        for (int oy = 0; oy < ho; ++oy) {
            const resize_detail::Tap1d& a = ty[static_cast<size_t>(oy)];
            const T* r0 = src + static_cast<long long>(a.i0) * W;
            const T* r1 = src + static_cast<long long>(a.i1) * W;
            T* drow = dst + static_cast<long long>(oy) * wo;
            for (int ox = 0; ox < wo; ++ox) {
                const resize_detail::Tap1d& b = tx[static_cast<size_t>(ox)];
                double v = a.w0 * (b.w0 * r0[b.i0] + b.w1 * r0[b.i1]) +
                           a.w1 * (b.w0 * r1[b.i0] + b.w1 * r1[b.i1]);
                drow[ox] = static_cast<T>(v);
            }
        }
    }
    return x.g->make(std::move(out), x.g->requires_grad(x.id),
                     [xi = x.id, ty = std::move(ty), tx = std::move(tx), C, H, W, ho,
                      wo](Graph<T>& g, int self) {
                         if (!g.requires_grad(xi)) return;
                         const Tensor<T>& dy = g.grad(self);
                         Tensor<T>& dx = g.grad(xi);
                         long long hw_in = static_cast<long long>(H) * W;
                         long long hw_out = static_cast<long long>(ho) * wo;
                         for (int c = 0; c < C; ++c) {
                             T* dsrc = dx.data() + c * hw_in;
                             const T* d = dy.data() + c * hw_out;
                             for (int oy = 0; oy < ho; ++oy) {
                                 const resize_detail::Tap1d& a = ty[static_cast<size_t>(oy)];
                                 T* r0 = dsrc + static_cast<long long>(a.i0) * W;
                                 T* r1 = dsrc + static_cast<long long>(a.i1) * W;
                                 const T* drow = d + static_cast<long long>(oy) * wo;
                                 for (int ox = 0; ox < wo; ++ox) {
                                     const resize_detail::Tap1d& b = tx[static_cast<size_t>(ox)];
                                     double dv = static_cast<double>(drow[ox]);
                                     r0[b.i0] += static_cast<T>(a.w0 * b.w0 * dv);
                                     r0[b.i1] += static_cast<T>(a.w0 * b.w1 * dv);
                                     r1[b.i0] += static_cast<T>(a.w1 * b.w0 * dv);
                                     r1[b.i1] += static_cast<T>(a.w1 * b.w1 * dv);
                                 }
                             }
                         }
                     });
}

} // namespace fewcount
