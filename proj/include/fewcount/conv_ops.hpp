#pragma once

#include <algorithm>
#include <cstring>
#include <vector>

#include "fewcount/gemm.hpp"
#include "fewcount/graph.hpp"

namespace fewcount {

// Spatial padding spec: either "same" (output preserves input size at
// stride 1) or an explicit symmetric pixel count.
struct Padding {
    enum class Kind { same, pixels };
    Kind kind = Kind::same;
    int px = 0;

    static Padding same() { return Padding{Kind::same, 0}; }
    static Padding pixels(int n) {
        if (n < 0) throw ShapeError("padding must be >= 0");
        return Padding{Kind::pixels, n};
    }
};

namespace conv_detail {

// Resolved geometry for one conv2d call. For "same", padding along each axis
// totals k-1 (stride 1), split with the smaller half at the leading edge.
struct Plan {
    int cin, h, w;
    int cout, kh, kw;
    int stride;
    int pt, pb, pl, pr;
    int ho, wo;
    long long kg() const { return static_cast<long long>(cin) * kh * kw; }
    long long n_out() const { return static_cast<long long>(ho) * wo; }
};

inline Plan make_plan(const Shape& x, const Shape& k, int stride, Padding pad) {
    if (x.size() != 3) throw ShapeError("conv2d: input must be (C,H,W), got " + shape_str(x));
    if (k.size() != 4)
        throw ShapeError("conv2d: kernels must be (Cout,Cin,kh,kw), got " + shape_str(k));
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    Plan p{};
    p.cin = x[0];
    p.h = x[1];
    p.w = x[2];
    p.cout = k[0];
    p.kh = k[2];
    p.kw = k[3];
    p.stride = stride;
    if (k[1] != p.cin)
        throw ShapeError("conv2d: channel mismatch, input has " + std::to_string(p.cin) +
                         " channels but kernels expect " + std::to_string(k[1]));
    if (p.kh < 1 || p.kw < 1) throw ShapeError("conv2d: kernel size must be >= 1");
    if (pad.kind == Padding::Kind::same) {
        auto split = [&](int in, int ks, int* lo, int* hi) {
            int out = (in + stride - 1) / stride;
            int total = std::max(0, (out - 1) * stride + ks - in);
            *lo = total / 2;
            *hi = total - total / 2;
        };
        split(p.h, p.kh, &p.pt, &p.pb);
        split(p.w, p.kw, &p.pl, &p.pr);
    } else {
        p.pt = p.pb = p.pl = p.pr = pad.px;
    }
    int eff_h = p.h + p.pt + p.pb - p.kh;
    int eff_w = p.w + p.pl + p.pr - p.kw;
    if (eff_h < 0 || eff_w < 0) throw ShapeError("conv2d: kernel larger than padded input");
    p.ho = eff_h / stride + 1;
    p.wo = eff_w / stride + 1;
    return p;
}

// Fills col[kg x nb] for output positions [n0, n0+nb); out-of-bounds input
// reads become zeros. Row r = (ci*kh + ki)*kw + kj.
template <typename T>
void im2col_block(const Plan& p, const T* x, long long n0, long long nb, T* col) {
    long long hw = static_cast<long long>(p.h) * p.w;
    for (int ci = 0; ci < p.cin; ++ci) {
        const T* xc = x + ci * hw;
        for (int ki = 0; ki < p.kh; ++ki) {
            for (int kj = 0; kj < p.kw; ++kj) {
                long long r = (static_cast<long long>(ci) * p.kh + ki) * p.kw + kj;
                T* dst_row = col + r * nb;
                long long n = n0;
                while (n < n0 + nb) {
                    int oh = static_cast<int>(n / p.wo);
                    int ow = static_cast<int>(n % p.wo);
                    int seg = static_cast<int>(std::min<long long>(p.wo - ow, n0 + nb - n));
                    T* dst = dst_row + (n - n0);
                    int ih = oh * p.stride + ki - p.pt;
                    if (ih < 0 || ih >= p.h) {
                        std::fill(dst, dst + seg, T(0));
                    } else {
                        const T* xrow = xc + static_cast<long long>(ih) * p.w;
                        if (p.stride == 1) {
                            int shift = kj - p.pl;
                            // valid ow span: 0 <= ow+shift < w
                            int a = std::max(ow, -shift);
                            int b = std::min(ow + seg, p.w - shift);
                            if (a > ow) std::fill(dst, dst + (a - ow), T(0));
                            if (b > a) std::memcpy(dst + (a - ow), xrow + a + shift,
                                                   sizeof(T) * static_cast<size_t>(b - a));
                            if (ow + seg > std::max(a, b))
                                std::fill(dst + (std::max(a, b) - ow), dst + seg, T(0));
                        } else {
                            for (int q = 0; q < seg; ++q) {
                                int iw = (ow + q) * p.stride + kj - p.pl;
                                dst[q] = (iw >= 0 && iw < p.w) ? xrow[iw] : T(0);
                            }
                        }
                    }
                    n += seg;
                }
            }
        }
    }
}

// Scatter-adds dcol[kg x nb] back into a padded input-gradient buffer of
// shape (cin, h+pt+pb, w+pl+pr).
template <typename T>
void col2im_block(const Plan& p, const T* dcol, long long n0, long long nb, T* dxp) {
    int hp = p.h + p.pt + p.pb;
    int wp = p.w + p.pl + p.pr;
    long long hwp = static_cast<long long>(hp) * wp;
    for (int ci = 0; ci < p.cin; ++ci) {
        T* xc = dxp + ci * hwp;
        for (int ki = 0; ki < p.kh; ++ki) {
            for (int kj = 0; kj < p.kw; ++kj) {
                long long r = (static_cast<long long>(ci) * p.kh + ki) * p.kw + kj;
                const T* src_row = dcol + r * nb;
                long long n = n0;
                while (n < n0 + nb) {
                    int oh = static_cast<int>(n / p.wo);
                    int ow = static_cast<int>(n % p.wo);
                    int seg = static_cast<int>(std::min<long long>(p.wo - ow, n0 + nb - n));
                    const T* src = src_row + (n - n0);
                    T* xrow = xc + static_cast<long long>(oh * p.stride + ki) * wp;
                    if (p.stride == 1) {
                        T* dst = xrow + ow + kj;
                        for (int q = 0; q < seg; ++q) dst[q] += src[q];
                    } else {
                        for (int q = 0; q < seg; ++q) xrow[(ow + q) * p.stride + kj] += src[q];
                    }
                    n += seg;
                }
            }
        }
    }
}

inline long long col_block_cols(const Plan& p, size_t elem_size) {
    const long long budget = 24ll << 20; // bytes for the col scratch
    long long nb = budget / (p.kg() * static_cast<long long>(elem_size));
    nb = std::max<long long>(nb, 64);
    return std::min<long long>(nb, p.n_out());
}

template <typename T>
void forward(const Plan& p, const T* x, const T* w, T* y) {
    long long N = p.n_out();
    long long nb_max = col_block_cols(p, sizeof(T));
    std::vector<T> col(static_cast<size_t>(p.kg() * nb_max));
    for (long long n0 = 0; n0 < N; n0 += nb_max) {
        long long nb = std::min(nb_max, N - n0);
        im2col_block(p, x, n0, nb, col.data());
        gemm<T>(p.cout, static_cast<int>(nb), static_cast<int>(p.kg()), false, w,
                static_cast<int>(p.kg()), false, col.data(), static_cast<int>(nb), y + n0,
                static_cast<int>(N), false);
    }
}

// Accumulates into dx and/or dw (either may be null).
template <typename T>
void backward(const Plan& p, const T* x, const T* w, const T* dy, T* dx, T* dw) {
    long long N = p.n_out();
    long long nb_max = col_block_cols(p, sizeof(T));
    std::vector<T> col(static_cast<size_t>(p.kg() * nb_max));
    std::vector<T> dcol;
    std::vector<T> dxp;
    if (dx) {
        dcol.resize(static_cast<size_t>(p.kg() * nb_max));
        dxp.assign(static_cast<size_t>(p.cin) * (p.h + p.pt + p.pb) * (p.w + p.pl + p.pr), T(0));
    }
    for (long long n0 = 0; n0 < N; n0 += nb_max) {
        long long nb = std::min(nb_max, N - n0);
        if (dw) {
            im2col_block(p, x, n0, nb, col.data());
            // dW[cout x kg] += dY_block[cout x nb] * col^T
            gemm<T>(p.cout, static_cast<int>(p.kg()), static_cast<int>(nb), false, dy + n0,
                    static_cast<int>(N), true, col.data(), static_cast<int>(nb), dw,
                    static_cast<int>(p.kg()), true);
        }
        if (dx) {
            // dcol[kg x nb] = W^T * dY_block
            gemm<T>(static_cast<int>(p.kg()), static_cast<int>(nb), p.cout, true, w,
                    static_cast<int>(p.kg()), false, dy + n0, static_cast<int>(N), dcol.data(),
                    static_cast<int>(nb), false);
            col2im_block(p, dcol.data(), n0, nb, dxp.data());
        }
    }
    if (dx) {
        int wp = p.w + p.pl + p.pr;
        for (int ci = 0; ci < p.cin; ++ci)
            for (int ih = 0; ih < p.h; ++ih) {
                const T* src = dxp.data() +
                               (static_cast<long long>(ci) * (p.h + p.pt + p.pb) + ih + p.pt) * wp +
                               p.pl;
                T* dst = dx + (static_cast<long long>(ci) * p.h + ih) * p.w;
                for (int iw = 0; iw < p.w; ++iw) dst[iw] += src[iw];
            }
    }
}

} // namespace conv_detail

// 2-D convolution (cross-correlation semantics, no kernel flip).
// x: (Cin,H,W), kernels: (Cout,Cin,kh,kw) -> (Cout,Ho,Wo).
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> kernels, int stride, Padding pad) {
    detail::check_same_graph(x, kernels, "conv2d");
    conv_detail::Plan p = conv_detail::make_plan(x.shape(), kernels.shape(), stride, pad);
    Tensor<T> out(Shape{p.cout, p.ho, p.wo});
    conv_detail::forward(p, x.value().data(), kernels.value().data(), out.data());
    bool rg = x.g->requires_grad(x.id) || x.g->requires_grad(kernels.id);
    return x.g->make(std::move(out), rg, [xi = x.id, wi = kernels.id, p](Graph<T>& g, int self) {
        const Tensor<T>& dy = g.grad(self);
        bool need_x = g.requires_grad(xi);
        bool need_w = g.requires_grad(wi);
        if (!need_x && !need_w) return;
        conv_detail::backward(p, g.value(xi).data(), g.value(wi).data(), dy.data(),
                              need_x ? g.grad(xi).data() : nullptr,
                              need_w ? g.grad(wi).data() : nullptr);
    });
}

namespace conv_detail {

// Direct single-output-channel correlation with zero same-padding; kept as a
// standalone kernel (not routed through conv2d) so the conv2d equivalence
// property is a real cross-check.
template <typename T>
void correlate_forward(const T* q, int C, int H, int W, const T* k, int kh, int kw, T* y) {
    int pt = (kh - 1) / 2;
    int pl = (kw - 1) / 2;
    std::fill(y, y + static_cast<long long>(H) * W, T(0));
    for (int c = 0; c < C; ++c) {
        const T* qc = q + static_cast<long long>(c) * H * W;
        for (int i = 0; i < kh; ++i) {
            int ylo = std::max(0, pt - i);
            int yhi = std::min(H, H + pt - i);
            for (int j = 0; j < kw; ++j) {
                T wv = k[(static_cast<long long>(c) * kh + i) * kw + j];
                int shift = j - pl;
                int xlo = std::max(0, -shift);
                int xhi = std::min(W, W - shift);
                for (int yy = ylo; yy < yhi; ++yy) {
                    const T* qrow = qc + static_cast<long long>(yy + i - pt) * W + shift;
                    T* yrow = y + static_cast<long long>(yy) * W;
                    for (int xx = xlo; xx < xhi; ++xx) yrow[xx] += wv * qrow[xx];
                }
            }
        }
    }
}

template <typename T>
void correlate_backward(const T* q, int C, int H, int W, const T* k, int kh, int kw, const T* dy,
                        T* dq, T* dk) {
    int pt = (kh - 1) / 2;
    int pl = (kw - 1) / 2;
    for (int c = 0; c < C; ++c) {
        const T* qc = q + static_cast<long long>(c) * H * W;
        T* dqc = dq ? dq + static_cast<long long>(c) * H * W : nullptr;
        for (int i = 0; i < kh; ++i) {
            int ylo = std::max(0, pt - i);
            int yhi = std::min(H, H + pt - i);
            for (int j = 0; j < kw; ++j) {
                long long kidx = (static_cast<long long>(c) * kh + i) * kw + j;
                T wv = k[kidx];
                int shift = j - pl;
                int xlo = std::max(0, -shift);
                int xhi = std::min(W, W - shift);
                double acc = 0.0;
                for (int yy = ylo; yy < yhi; ++yy) {
                    const T* qrow = qc + static_cast<long long>(yy + i - pt) * W + shift;
                    const T* dyrow = dy + static_cast<long long>(yy) * W;
                    if (dqc) {
                        T* dqrow = dqc + static_cast<long long>(yy + i - pt) * W + shift;
                        for (int xx = xlo; xx < xhi; ++xx) dqrow[xx] += wv * dyrow[xx];
                    }
                    if (dk) {
                        for (int xx = xlo; xx < xhi; ++xx)
                            acc += static_cast<double>(dyrow[xx]) * static_cast<double>(qrow[xx]);
                    }
                }
                if (dk) dk[kidx] += static_cast<T>(acc);
            }
        }
    }
}

} // namespace conv_detail

// Correlates a query (C,H,W) with a dynamic kernel (C,kh,kw) under zero
// same-padding, producing a single-channel (1,H,W) similarity map.
// Differentiable in both arguments.
template <typename T>
Var<T> correlate(Var<T> query, Var<T> kernel) {
    detail::check_same_graph(query, kernel, "correlate");
    const Shape& qs = query.shape();
    const Shape& ks = kernel.shape();
    if (qs.size() != 3) throw ShapeError("correlate: query must be (C,H,W)");
    if (ks.size() != 3) throw ShapeError("correlate: kernel must be (C,kh,kw)");
    if (qs[0] != ks[0])
        throw ShapeError("correlate: channel mismatch, query has " + std::to_string(qs[0]) +
                         ", kernel has " + std::to_string(ks[0]));
    int C = qs[0], H = qs[1], W = qs[2], kh = ks[1], kw = ks[2];
    Tensor<T> out(Shape{1, H, W});
    conv_detail::correlate_forward(query.value().data(), C, H, W, kernel.value().data(), kh, kw,
                                   out.data());
    bool rg = query.g->requires_grad(query.id) || query.g->requires_grad(kernel.id);
    return query.g->make(
        std::move(out), rg,
        [qi = query.id, ki = kernel.id, C, H, W, kh, kw](Graph<T>& g, int self) {
            const Tensor<T>& dy = g.grad(self);
            bool nq = g.requires_grad(qi);
            bool nk = g.requires_grad(ki);
            if (!nq && !nk) return;
            conv_detail::correlate_backward(g.value(qi).data(), C, H, W, g.value(ki).data(), kh,
                                            kw, dy.data(), nq ? g.grad(qi).data() : nullptr,
                                            nk ? g.grad(ki).data() : nullptr);
        });
}

// Reverses both spatial axes of a (C,kh,kw) grid.
template <typename T>
Var<T> flip_hw(Var<T> x) {
    const Shape& s = x.shape();
    if (s.size() != 3) throw ShapeError("flip_hw: expected (C,kh,kw)");
    int C = s[0], kh = s[1], kw = s[2];
    const Tensor<T>& xv = x.value();
    Tensor<T> out(s);
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j) out.at(c, i, j) = xv.at(c, kh - 1 - i, kw - 1 - j);
    return x.g->make(std::move(out), x.g->requires_grad(x.id),
                     [xi = x.id, C, kh, kw](Graph<T>& g, int self) {
                         if (!g.requires_grad(xi)) return;
                         const Tensor<T>& dy = g.grad(self);
                         Tensor<T>& dx = g.grad(xi);
                         for (int c = 0; c < C; ++c)
                             for (int i = 0; i < kh; ++i)
                                 for (int j = 0; j < kw; ++j)
                                     dx.at(c, kh - 1 - i, kw - 1 - j) += dy.at(c, i, j);
                     });
}

} // namespace fewcount
