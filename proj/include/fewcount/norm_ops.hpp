#pragma once

#include <cmath>
#include <vector>

#include "fewcount/graph.hpp"

namespace fewcount {

// Batch normalisation over the spatial extent of each channel (batch size is
// 1 throughout this library). Train mode normalises with batch statistics
// and updates the running buffers in place; eval mode uses the buffers.
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, Mode mode, T momentum = T(0.1), T eps = T(1e-5)) {
    detail::check_same_graph(x, gamma, "batch_norm");
    detail::check_same_graph(x, beta, "batch_norm");
    const Tensor<T>& xv = x.value();
    if (xv.rank() != 3) throw ShapeError("batch_norm: expected (C,H,W)");
    int C = xv.dim(0);
    long long hw = static_cast<long long>(xv.dim(1)) * xv.dim(2);
    auto check_c = [&](const Tensor<T>& t, const char* what) {
        if (t.rank() != 1 || t.dim(0) != C)
            throw ShapeError(std::string("batch_norm: ") + what + " must have " +
                             std::to_string(C) + " entries");
    };
    check_c(gamma.value(), "gamma");
    check_c(beta.value(), "beta");
    check_c(running_mean, "running_mean");
    check_c(running_var, "running_var");

    Tensor<T> xhat(xv.shape());
    std::vector<T> inv_std(static_cast<size_t>(C));
    if (mode == Mode::train) {
        for (int c = 0; c < C; ++c) {
            const T* src = xv.data() + c * hw;
            double mean = 0.0;
            for (long long i = 0; i < hw; ++i) mean += static_cast<double>(src[i]);
            mean /= static_cast<double>(hw);
            double var = 0.0;
            for (long long i = 0; i < hw; ++i) {
                double d = static_cast<double>(src[i]) - mean;
                var += d * d;
            }
            var /= static_cast<double>(hw);
            double is = 1.0 / std::sqrt(var + static_cast<double>(eps));
            inv_std[static_cast<size_t>(c)] = static_cast<T>(is);
            T* dst = xhat.data() + c * hw;
            for (long long i = 0; i < hw; ++i)
                dst[i] = static_cast<T>((static_cast<double>(src[i]) - mean) * is);
            double unbiased = hw > 1 ? var * static_cast<double>(hw) / (hw - 1) : var;
            running_mean[c] = static_cast<T>((1.0 - momentum) * running_mean[c] + momentum * mean);
            running_var[c] =
                static_cast<T>((1.0 - momentum) * running_var[c] + momentum * unbiased);
        }
    } else {
        for (int c = 0; c < C; ++c) {
            double is = 1.0 / std::sqrt(static_cast<double>(running_var[c]) +
                                        static_cast<double>(eps));
            inv_std[static_cast<size_t>(c)] = static_cast<T>(is);
            double mean = static_cast<double>(running_mean[c]);
            const T* src = xv.data() + c * hw;
            T* dst = xhat.data() + c * hw;
            for (long long i = 0; i < hw; ++i)
                dst[i] = static_cast<T>((static_cast<double>(src[i]) - mean) * is);
        }
    }
    Tensor<T> out(xv.shape());
    const Tensor<T>& gv = gamma.value();
    const Tensor<T>& bv = beta.value();
    for (int c = 0; c < C; ++c) {
        const T* src = xhat.data() + c * hw;
        T* dst = out.data() + c * hw;
        for (long long i = 0; i < hw; ++i) dst[i] = gv[c] * src[i] + bv[c];
    }
    bool rg = x.g->requires_grad(x.id) || x.g->requires_grad(gamma.id) ||
              x.g->requires_grad(beta.id);
    bool batch_stats = mode == Mode::train;
    return x.g->make(
        std::move(out), rg,
        [xi = x.id, gi = gamma.id, bi = beta.id, xhat = std::move(xhat),
         inv_std = std::move(inv_std), C, hw, batch_stats](Graph<T>& g, int self) {
            const Tensor<T>& dy = g.grad(self);
            const Tensor<T>& gv2 = g.value(gi);
            for (int c = 0; c < C; ++c) {
                const T* d = dy.data() + c * hw;
                const T* xh = xhat.data() + c * hw;
                double sum_dy = 0.0, sum_dy_xh = 0.0;
                for (long long i = 0; i < hw; ++i) {
                    sum_dy += static_cast<double>(d[i]);
                    sum_dy_xh += static_cast<double>(d[i]) * static_cast<double>(xh[i]);
                }
                if (g.requires_grad(gi)) g.grad(gi)[c] += static_cast<T>(sum_dy_xh);
                if (g.requires_grad(bi)) g.grad(bi)[c] += static_cast<T>(sum_dy);
                if (g.requires_grad(xi)) {
                    T* dx = g.grad(xi).data() + c * hw;
                    double gs = static_cast<double>(gv2[c]) *
                                static_cast<double>(inv_std[static_cast<size_t>(c)]);
                    if (batch_stats) {
                        double mean_dy = sum_dy / static_cast<double>(hw);
                        double mean_dy_xh = sum_dy_xh / static_cast<double>(hw);
                        for (long long i = 0; i < hw; ++i)
                            dx[i] += static_cast<T>(
                                gs * (static_cast<double>(d[i]) - mean_dy -
                                      static_cast<double>(xh[i]) * mean_dy_xh));
                    } else {
                        for (long long i = 0; i < hw; ++i)
                            dx[i] += static_cast<T>(gs * static_cast<double>(d[i]));
                    }
                }
            }
        });
}

// Layer normalisation over the full (C,H,W) extent of one instance, with a
// per-channel affine. Query and support features of different spatial sizes
// can share the same parameters.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
    detail::check_same_graph(x, gamma, "layer_norm");
    detail::check_same_graph(x, beta, "layer_norm");
    const Tensor<T>& xv = x.value();
    if (xv.rank() != 3) throw ShapeError("layer_norm: expected (C,H,W)");
    int C = xv.dim(0);
    long long hw = static_cast<long long>(xv.dim(1)) * xv.dim(2);
    long long n = xv.size();
    if (gamma.value().rank() != 1 || gamma.value().dim(0) != C || beta.value().rank() != 1 ||
        beta.value().dim(0) != C)
        throw ShapeError("layer_norm: affine params must have one entry per channel");
    double mean = 0.0;
    for (long long i = 0; i < n; ++i) mean += static_cast<double>(xv[i]);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (long long i = 0; i < n; ++i) {
        double d = static_cast<double>(xv[i]) - mean;
        var += d * d;
    }
    var /= static_cast<double>(n);
    double is = 1.0 / std::sqrt(var + static_cast<double>(eps));
    Tensor<T> xhat(xv.shape());
    for (long long i = 0; i < n; ++i)
        xhat[i] = static_cast<T>((static_cast<double>(xv[i]) - mean) * is);
    Tensor<T> out(xv.shape());
    const Tensor<T>& gv = gamma.value();
    const Tensor<T>& bv = beta.value();
    for (int c = 0; c < C; ++c) {
        const T* src = xhat.data() + c * hw;
        T* dst = out.data() + c * hw;
        for (long long i = 0; i < hw; ++i) dst[i] = gv[c] * src[i] + bv[c];
    }
    bool rg = x.g->requires_grad(x.id) || x.g->requires_grad(gamma.id) ||
              x.g->requires_grad(beta.id);
    return x.g->make(
        std::move(out), rg,
        [xi = x.id, gi = gamma.id, bi = beta.id, xhat = std::move(xhat), is, C, hw,
         n](Graph<T>& g, int self) {
            const Tensor<T>& dy = g.grad(self);
            const Tensor<T>& gv2 = g.value(gi);
            if (g.requires_grad(gi) || g.requires_grad(bi)) {
                for (int c = 0; c < C; ++c) {
                    const T* d = dy.data() + c * hw;
                    const T* xh = xhat.data() + c * hw;
                    double sg = 0.0, sb = 0.0;
                    for (long long i = 0; i < hw; ++i) {
                        sg += static_cast<double>(d[i]) * static_cast<double>(xh[i]);
                        sb += static_cast<double>(d[i]);
                    }
                    if (g.requires_grad(gi)) g.grad(gi)[c] += static_cast<T>(sg);
                    if (g.requires_grad(bi)) g.grad(bi)[c] += static_cast<T>(sb);
                }
            }
            if (g.requires_grad(xi)) {
                // dxhat = dy * gamma[c];  dx = is*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
                double s1 = 0.0, s2 = 0.0;
                for (int c = 0; c < C; ++c) {
                    const T* d = dy.data() + c * hw;
                    const T* xh = xhat.data() + c * hw;
                    double gvc = static_cast<double>(gv2[c]);
                    for (long long i = 0; i < hw; ++i) {
                        double dxh = static_cast<double>(d[i]) * gvc;
                        s1 += dxh;
                        s2 += dxh * static_cast<double>(xh[i]);
                    }
                }
                double m1 = s1 / static_cast<double>(n);
                double m2 = s2 / static_cast<double>(n);
                Tensor<T>& dx = g.grad(xi);
                for (int c = 0; c < C; ++c) {
                    const T* d = dy.data() + c * hw;
                    const T* xh = xhat.data() + c * hw;
                    T* dst = dx.data() + c * hw;
                    double gvc = static_cast<double>(gv2[c]);
                    for (long long i = 0; i < hw; ++i) {
                        double dxh = static_cast<double>(d[i]) * gvc;
                        dst[i] += static_cast<T>(is * (dxh - m1 - static_cast<double>(xh[i]) * m2));
                    }
                }
            }
        });
}

// Softmax across axis 0, independently at every trailing index.
template <typename T>
Var<T> softmax0(Var<T> x) {
    const Tensor<T>& xv = x.value();
    if (xv.rank() < 1) throw ShapeError("softmax0: rank must be >= 1");
    int K = xv.dim(0);
    long long rest = xv.size() / K;
    if (!xv.all_finite()) throw NumericError("softmax0: non-finite input");
    Tensor<T> out(xv.shape());
    for (long long r = 0; r < rest; ++r) {
        double m = -1e300;
        for (int k = 0; k < K; ++k)
            m = std::max(m, static_cast<double>(xv[static_cast<long long>(k) * rest + r]));
        double s = 0.0;
        for (int k = 0; k < K; ++k) {
            double e = std::exp(static_cast<double>(xv[static_cast<long long>(k) * rest + r]) - m);
            out[static_cast<long long>(k) * rest + r] = static_cast<T>(e);
            s += e;
        }
        for (int k = 0; k < K; ++k)
            out[static_cast<long long>(k) * rest + r] =
                static_cast<T>(static_cast<double>(out[static_cast<long long>(k) * rest + r]) / s);
    }
    return x.g->make(std::move(out), x.g->requires_grad(x.id),
                     [xi = x.id, K, rest](Graph<T>& g, int self) {
                         if (!g.requires_grad(xi)) return;
                         const Tensor<T>& dy = g.grad(self);
                         const Tensor<T>& y = g.value(self);
                         Tensor<T>& dx = g.grad(xi);
                         for (long long r = 0; r < rest; ++r) {
                             double dot = 0.0;
                             for (int k = 0; k < K; ++k) {
                                 long long i = static_cast<long long>(k) * rest + r;
                                 dot += static_cast<double>(dy[i]) * static_cast<double>(y[i]);
                             }
                             for (int k = 0; k < K; ++k) {
                                 long long i = static_cast<long long>(k) * rest + r;
                                 dx[i] += static_cast<T>(static_cast<double>(y[i]) *
                                                         (static_cast<double>(dy[i]) - dot));
                             }
                         }
                     });
}

// Max over the two trailing spatial axes of a rank-4 tensor, keeping dims:
// (K,C,H,W) -> (K,C,1,1). Gradient routes to the argmax.
template <typename T>
Var<T> spatial_max(Var<T> x) {
    const Tensor<T>& xv = x.value();
    if (xv.rank() != 4) throw ShapeError("spatial_max: expected rank-4 input");
    if (!xv.all_finite()) throw NumericError("spatial_max: non-finite input");
    int K = xv.dim(0), C = xv.dim(1);
    long long hw = static_cast<long long>(xv.dim(2)) * xv.dim(3);
    Tensor<T> out(Shape{K, C, 1, 1});
    std::vector<long long> arg(static_cast<size_t>(K) * C);
    for (long long kc = 0; kc < static_cast<long long>(K) * C; ++kc) {
        const T* plane = xv.data() + kc * hw;
        long long best = 0;
        for (long long i = 1; i < hw; ++i)
            if (plane[i] > plane[best]) best = i;
        out[kc] = plane[best];
        arg[static_cast<size_t>(kc)] = best;
    }
    return x.g->make(std::move(out), x.g->requires_grad(x.id),
                     [xi = x.id, arg = std::move(arg), hw](Graph<T>& g, int self) {
                         if (!g.requires_grad(xi)) return;
                         const Tensor<T>& dy = g.grad(self);
                         Tensor<T>& dx = g.grad(xi);
                         for (long long kc = 0; kc < dy.size(); ++kc)
                             dx[kc * hw + arg[static_cast<size_t>(kc)]] += dy[kc];
                     });
}

// a - b with b broadcast over the two trailing axes: (K,C,H,W) - (K,C,1,1).
template <typename T>
Var<T> sub_bcast(Var<T> a, Var<T> b) {
    detail::check_same_graph(a, b, "sub_bcast");
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    if (av.rank() != 4 || bv.rank() != 4 || bv.dim(2) != 1 || bv.dim(3) != 1 ||
        bv.dim(0) != av.dim(0) || bv.dim(1) != av.dim(1))
        throw ShapeError("sub_bcast: expected (K,C,H,W) - (K,C,1,1)");
    long long kc_total = static_cast<long long>(av.dim(0)) * av.dim(1);
    long long hw = static_cast<long long>(av.dim(2)) * av.dim(3);
    Tensor<T> out(av.shape());
    for (long long kc = 0; kc < kc_total; ++kc) {
        const T* src = av.data() + kc * hw;
        T sub = bv[kc];
        T* dst = out.data() + kc * hw;
        for (long long i = 0; i < hw; ++i) dst[i] = src[i] - sub;
    }
    bool rg = a.g->requires_grad(a.id) || a.g->requires_grad(b.id);
    return a.g->make(std::move(out), rg,
                     [ai = a.id, bi = b.id, kc_total, hw](Graph<T>& g, int self) {
                         const Tensor<T>& dy = g.grad(self);
                         if (g.requires_grad(ai)) {
                             Tensor<T>& da = g.grad(ai);
                             for (long long i = 0; i < dy.size(); ++i) da[i] += dy[i];
                         }
                         if (g.requires_grad(bi)) {
                             Tensor<T>& db = g.grad(bi);
                             for (long long kc = 0; kc < kc_total; ++kc) {
                                 double s = 0.0;
                                 const T* d = dy.data() + kc * hw;
                                 for (long long i = 0; i < hw; ++i) s += static_cast<double>(d[i]);
                                 db[kc] -= static_cast<T>(s);
                             }
                         }
                     });
}

} // namespace fewcount
