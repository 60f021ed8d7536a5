#pragma once

// Shared test utilities: random tensors and independent brute-force oracles.
// The oracles here are written against the declared conventions only and
// never call into the library kernels they check.

#include <cmath>
#include <vector>

#include "fewcount/rng.hpp"
#include "fewcount/tensor.hpp"

namespace testutil {

using fewcount::Rng;
using fewcount::Shape;
using fewcount::Tensor;

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<T> t(std::move(shape));
    for (long long i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

// Naive sliding-window cross-correlation with explicit top/left padding.
// x: (Cin,H,W), k: (Cout,Cin,kh,kw).
template <typename T>
Tensor<T> conv2d_oracle(const Tensor<T>& x, const Tensor<T>& k, int stride, int pt, int pl,
                        int ho, int wo) {
    int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
    int cout = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    Tensor<T> y(Shape{cout, ho, wo});
    for (int co = 0; co < cout; ++co)
        for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox) {
                double acc = 0.0;
                for (int ci = 0; ci < cin; ++ci)
                    for (int i = 0; i < kh; ++i)
                        for (int j = 0; j < kw; ++j) {
                            int iy = oy * stride + i - pt;
                            int ix = ox * stride + j - pl;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            acc += static_cast<double>(x.at(ci, iy, ix)) *
                                   static_cast<double>(k.at(co, ci, i, j));
                        }
                y.at(co, oy, ox) = static_cast<T>(acc);
            }
    return y;
}

// Brute-force correlation under zero same-padding (single output channel).
template <typename T>
Tensor<T> correlate_oracle(const Tensor<T>& q, const Tensor<T>& k) {
    int c = q.dim(0), h = q.dim(1), w = q.dim(2);
    int kh = k.dim(1), kw = k.dim(2);
    int pt = (kh - 1) / 2, pl = (kw - 1) / 2;
    Tensor<T> y(Shape{1, h, w});
    for (int oy = 0; oy < h; ++oy)
        for (int ox = 0; ox < w; ++ox) {
            double acc = 0.0;
            for (int ci = 0; ci < c; ++ci)
                for (int i = 0; i < kh; ++i)
                    for (int j = 0; j < kw; ++j) {
                        int iy = oy + i - pt;
                        int ix = ox + j - pl;
                        if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                        acc += static_cast<double>(q.at(ci, iy, ix)) *
                               static_cast<double>(k.at(ci, i, j));
                    }
            y.at(0, oy, ox) = static_cast<T>(acc);
        }
    return y;
}

// Single bilinear lookup at continuous coordinates with border clamping and
// the one-pixel-outside zero rule.
template <typename T>
double bilinear_oracle(const Tensor<T>& f, int c, double y, double x) {
    int h = f.dim(1), w = f.dim(2);
    if (y < -1.0 || y > h || x < -1.0 || x > w) return 0.0;
    y = std::max(0.0, std::min(y, static_cast<double>(h - 1)));
    x = std::max(0.0, std::min(x, static_cast<double>(w - 1)));
    int y0 = static_cast<int>(y), x0 = static_cast<int>(x);
    int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
    double ly = y - y0, lx = x - x0;
    return (1 - ly) * (1 - lx) * static_cast<double>(f.at(c, y0, x0)) +
           (1 - ly) * lx * static_cast<double>(f.at(c, y0, x1)) +
           ly * (1 - lx) * static_cast<double>(f.at(c, y1, x0)) +
           ly * lx * static_cast<double>(f.at(c, y1, x1));
}

// 4-sample RoI Align oracle for one output cell.
template <typename T>
double roi_align_cell_oracle(const Tensor<T>& f, int c, double bx, double by, double bw,
                             double bh, int out_h, int out_w, int i, int j) {
    double bin_h = bh / out_h, bin_w = bw / out_w;
    double acc = 0.0;
    for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx) {
            double yy = by + (i + (sy + 0.5) / 2.0) * bin_h;
            double xx = bx + (j + (sx + 0.5) / 2.0) * bin_w;
            acc += bilinear_oracle(f, c, yy, xx);
        }
    return acc / 4.0;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    double m = 0.0;
    for (long long i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

} // namespace testutil
