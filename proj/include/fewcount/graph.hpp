#pragma once

#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "fewcount/errors.hpp"
#include "fewcount/rng.hpp"
#include "fewcount/tensor.hpp"

namespace fewcount {

enum class Mode { train, eval };

template <typename T>
class Graph;

// Lightweight handle into a Graph node.
template <typename T>
struct Var {
    Graph<T>* g = nullptr;
    int id = -1;

    bool valid() const { return g != nullptr && id >= 0; }
    const Tensor<T>& value() const { return g->value(id); }
    const Tensor<T>& grad() const { return g->grad(id); }
    const Shape& shape() const { return g->value(id).shape(); }
};

// Reverse-mode tape. Nodes are created in topological order by the op
// functions; backward() walks the tape once in reverse. A Graph instance is
// single-threaded; independent graphs may run concurrently.
template <typename T>
class Graph {
public:
    explicit Graph(uint64_t seed = 0) : rng_(seed) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
        return make(std::move(value), requires_grad, {});
    }

    // Creates a node; `back` is invoked during the reverse sweep with the
    // node's own id. Empty `back` marks a leaf.
    Var<T> make(Tensor<T> value, bool requires_grad, std::function<void(Graph&, int)> back) {
        nodes_.push_back(Node{std::move(value), Tensor<T>{}, requires_grad, std::move(back)});
        return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
    }

    const Tensor<T>& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    Tensor<T>& value(int id) { return nodes_[static_cast<size_t>(id)].value; }

    bool requires_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

    // Gradient tensor, allocated (zero) on first access.
    Tensor<T>& grad(int id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
        return n.grad;
    }

    bool has_grad(int id) const { return !nodes_[static_cast<size_t>(id)].grad.empty(); }

    // Scalar-seeded reverse sweep from `loss` (must have a single element).
    void backward(Var<T> loss) {
        if (loss.g != this) throw Error("backward: Var belongs to a different graph");
        if (value(loss.id).size() != 1) throw ShapeError("backward: loss must be scalar");
        grad(loss.id)[0] = T(1);
        for (int id = loss.id; id >= 0; --id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            if (!n.requires_grad || n.grad.empty() || !n.back) continue;
            n.back(*this, id);
        }
    }

    Rng& rng() { return rng_; }
    int size() const { return static_cast<int>(nodes_.size()); }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool requires_grad;
        std::function<void(Graph&, int)> back;
    };
    // deque keeps node references stable while ops append; Var::value()
    // references stay valid for the graph's lifetime
    std::deque<Node> nodes_;
    Rng rng_;
};

namespace detail {

template <typename T>
void check_same_graph(Var<T> a, Var<T> b, const char* op) {
    if (a.g != b.g) throw Error(std::string(op) + ": operands from different graphs");
}

} // namespace detail

// ---- elementwise / structural ops ------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    detail::check_same_graph(a, b, "add");
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    if (!same_shape(av, bv))
        throw ShapeError("add: shape mismatch " + shape_str(av.shape()) + " vs " +
                         shape_str(bv.shape()));
    Tensor<T> out(av.shape());
    for (long long i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    bool rg = a.g->requires_grad(a.id) || a.g->requires_grad(b.id);
    return a.g->make(std::move(out), rg, [ai = a.id, bi = b.id](Graph<T>& g, int self) {
        const Tensor<T>& dy = g.grad(self);
        if (g.requires_grad(ai)) {
            Tensor<T>& da = g.grad(ai);
            for (long long i = 0; i < dy.size(); ++i) da[i] += dy[i];
        }
        if (g.requires_grad(bi)) {
            Tensor<T>& db = g.grad(bi);
            for (long long i = 0; i < dy.size(); ++i) db[i] += dy[i];
        }
    });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    detail::check_same_graph(a, b, "mul");
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    if (!same_shape(av, bv))
        throw ShapeError("mul: shape mismatch " + shape_str(av.shape()) + " vs " +
                         shape_str(bv.shape()));
    Tensor<T> out(av.shape());
    for (long long i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    bool rg = a.g->requires_grad(a.id) || a.g->requires_grad(b.id);
    return a.g->make(std::move(out), rg, [ai = a.id, bi = b.id](Graph<T>& g, int self) {
        const Tensor<T>& dy = g.grad(self);
        const Tensor<T>& av2 = g.value(ai);
        const Tensor<T>& bv2 = g.value(bi);
        if (g.requires_grad(ai)) {
            Tensor<T>& da = g.grad(ai);
            for (long long i = 0; i < dy.size(); ++i) da[i] += dy[i] * bv2[i];
        }
        if (g.requires_grad(bi)) {
            Tensor<T>& db = g.grad(bi);
            for (long long i = 0; i < dy.size(); ++i) db[i] += dy[i] * av2[i];
        }
    });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
    Tensor<T> out(a.value().shape());
    const Tensor<T>& av = a.value();
    for (long long i = 0; i < out.size(); ++i) out[i] = av[i] * s;
    return a.g->make(std::move(out), a.g->requires_grad(a.id),
                     [ai = a.id, s](Graph<T>& g, int self) {
                         if (!g.requires_grad(ai)) return;
                         const Tensor<T>& dy = g.grad(self);
                         Tensor<T>& da = g.grad(ai);
                         for (long long i = 0; i < dy.size(); ++i) da[i] += dy[i] * s;
                     });
}

// y = w*x + b with scalar parameters w, b (tensors of one element).
template <typename T>
Var<T> affine_scalar(Var<T> x, Var<T> w, Var<T> b) {
    detail::check_same_graph(x, w, "affine_scalar");
    detail::check_same_graph(x, b, "affine_scalar");
    if (w.value().size() != 1 || b.value().size() != 1)
        throw ShapeError("affine_scalar: w and b must be scalars");
    const Tensor<T>& xv = x.value();
    T wv = w.value()[0];
    T bv = b.value()[0];
    Tensor<T> out(xv.shape());
    for (long long i = 0; i < out.size(); ++i) out[i] = wv * xv[i] + bv;
    bool rg = x.g->requires_grad(x.id) || x.g->requires_grad(w.id) || x.g->requires_grad(b.id);
    return x.g->make(std::move(out), rg,
                     [xi = x.id, wi = w.id, bi = b.id](Graph<T>& g, int self) {
                         const Tensor<T>& dy = g.grad(self);
                         const Tensor<T>& xv2 = g.value(xi);
                         T wv2 = g.value(wi)[0];
                         if (g.requires_grad(xi)) {
                             Tensor<T>& dx = g.grad(xi);
                             for (long long i = 0; i < dy.size(); ++i) dx[i] += dy[i] * wv2;
                         }
                         if (g.requires_grad(wi)) {
                             double s = 0.0;
                             for (long long i = 0; i < dy.size(); ++i)
                                 s += static_cast<double>(dy[i]) * static_cast<double>(xv2[i]);
                             g.grad(wi)[0] += static_cast<T>(s);
                         }
                         if (g.requires_grad(bi)) {
                             double s = 0.0;
                             for (long long i = 0; i < dy.size(); ++i)
                                 s += static_cast<double>(dy[i]);
                             g.grad(bi)[0] += static_cast<T>(s);
                         }
                     });
}

// Adds a per-channel bias to a (C,H,W) map.
template <typename T>
Var<T> bias_add(Var<T> x, Var<T> bias) {
    detail::check_same_graph(x, bias, "bias_add");
    const Tensor<T>& xv = x.value();
    const Tensor<T>& bv = bias.value();
    if (xv.rank() != 3) throw ShapeError("bias_add: expected rank-3 input");
    if (bv.rank() != 1 || bv.dim(0) != xv.dim(0))
        throw ShapeError("bias_add: bias must have one entry per channel");
    int C = xv.dim(0);
    long long hw = static_cast<long long>(xv.dim(1)) * xv.dim(2);
    Tensor<T> out(xv.shape());
    for (int c = 0; c < C; ++c) {
        T b = bv[c];
        const T* src = xv.data() + c * hw;
        T* dst = out.data() + c * hw;
        for (long long i = 0; i < hw; ++i) dst[i] = src[i] + b;
    }
    bool rg = x.g->requires_grad(x.id) || x.g->requires_grad(bias.id);
    return x.g->make(std::move(out), rg,
                     [xi = x.id, bi = bias.id, C, hw](Graph<T>& g, int self) {
                         const Tensor<T>& dy = g.grad(self);
                         if (g.requires_grad(xi)) {
                             Tensor<T>& dx = g.grad(xi);
                             for (long long i = 0; i < dy.size(); ++i) dx[i] += dy[i];
                         }
                         if (g.requires_grad(bi)) {
                             Tensor<T>& db = g.grad(bi);
                             for (int c = 0; c < C; ++c) {
                                 double s = 0.0;
                                 const T* d = dy.data() + c * hw;
                                 for (long long i = 0; i < hw; ++i) s += static_cast<double>(d[i]);
                                 db[c] += static_cast<T>(s);
                             }
                         }
                     });
}

template <typename T>
Var<T> relu(Var<T> x) {
    const Tensor<T>& xv = x.value();
    Tensor<T> out(xv.shape());
    for (long long i = 0; i < out.size(); ++i) out[i] = xv[i] > T(0) ? xv[i] : T(0);
    return x.g->make(std::move(out), x.g->requires_grad(x.id),
                     [xi = x.id](Graph<T>& g, int self) {
                         if (!g.requires_grad(xi)) return;
                         const Tensor<T>& dy = g.grad(self);
                         const Tensor<T>& xv2 = g.value(xi);
                         Tensor<T>& dx = g.grad(xi);
                         for (long long i = 0; i < dy.size(); ++i)
                             if (xv2[i] > T(0)) dx[i] += dy[i];
                     });
}

template <typename T>
Var<T> leaky_relu(Var<T> x, T slope) {
    const Tensor<T>& xv = x.value();
    Tensor<T> out(xv.shape());
    for (long long i = 0; i < out.size(); ++i) out[i] = xv[i] > T(0) ? xv[i] : slope * xv[i];
    return x.g->make(std::move(out), x.g->requires_grad(x.id),
                     [xi = x.id, slope](Graph<T>& g, int self) {
                         if (!g.requires_grad(xi)) return;
                         const Tensor<T>& dy = g.grad(self);
                         const Tensor<T>& xv2 = g.value(xi);
                         Tensor<T>& dx = g.grad(xi);
                         for (long long i = 0; i < dy.size(); ++i)
                             dx[i] += xv2[i] > T(0) ? dy[i] : slope * dy[i];
                     });
}

// Train mode: zero with probability p, scale survivors by 1/(1-p).
// Eval mode: identity. The mask comes from the graph's own RNG stream.
template <typename T>
Var<T> dropout(Var<T> x, T p, Mode mode) {
    if (!(p >= T(0) && p < T(1))) throw ConfigError("dropout: p must be in [0,1)");
    const Tensor<T>& xv = x.value();
    if (mode == Mode::eval || p == T(0)) {
        Tensor<T> out = xv;
        return x.g->make(std::move(out), x.g->requires_grad(x.id),
                         [xi = x.id](Graph<T>& g, int self) {
                             if (!g.requires_grad(xi)) return;
                             const Tensor<T>& dy = g.grad(self);
                             Tensor<T>& dx = g.grad(xi);
                             for (long long i = 0; i < dy.size(); ++i) dx[i] += dy[i];
                         });
    }
    T keep_scale = T(1) / (T(1) - p);
    Tensor<T> mask(xv.shape());
    Rng& rng = x.g->rng();
    for (long long i = 0; i < mask.size(); ++i)
        mask[i] = rng.uniform() < static_cast<double>(p) ? T(0) : keep_scale;
    Tensor<T> out(xv.shape());
    for (long long i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
    return x.g->make(std::move(out), x.g->requires_grad(x.id),
                     [xi = x.id, m = std::move(mask)](Graph<T>& g, int self) {
                         if (!g.requires_grad(xi)) return;
                         const Tensor<T>& dy = g.grad(self);
                         Tensor<T>& dx = g.grad(xi);
                         for (long long i = 0; i < dy.size(); ++i) dx[i] += dy[i] * m[i];
                     });
}

template <typename T>
Var<T> exp_op(Var<T> x) {
    const Tensor<T>& xv = x.value();
    Tensor<T> out(xv.shape());
    for (long long i = 0; i < out.size(); ++i) out[i] = std::exp(xv[i]);
    return x.g->make(std::move(out), x.g->requires_grad(x.id),
                     [xi = x.id](Graph<T>& g, int self) {
                         if (!g.requires_grad(xi)) return;
                         const Tensor<T>& dy = g.grad(self);
                         const Tensor<T>& y = g.value(self);
                         Tensor<T>& dx = g.grad(xi);
                         for (long long i = 0; i < dy.size(); ++i) dx[i] += dy[i] * y[i];
                     });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
    Tensor<T> out = reshaped(x.value(), std::move(shape));
    return x.g->make(std::move(out), x.g->requires_grad(x.id),
                     [xi = x.id](Graph<T>& g, int self) {
                         if (!g.requires_grad(xi)) return;
                         const Tensor<T>& dy = g.grad(self);
                         Tensor<T>& dx = g.grad(xi);
                         for (long long i = 0; i < dy.size(); ++i) dx[i] += dy[i];
                     });
}

// Stacks equal-shaped tensors along a new leading axis.
template <typename T>
Var<T> stack0(const std::vector<Var<T>>& xs) {
    if (xs.empty()) throw ShapeError("stack0: empty input");
    Graph<T>* g = xs[0].g;
    const Shape& s0 = xs[0].value().shape();
    bool rg = false;
    for (const Var<T>& v : xs) {
        detail::check_same_graph(xs[0], v, "stack0");
        if (v.value().shape() != s0) throw ShapeError("stack0: shape mismatch");
        rg = rg || g->requires_grad(v.id);
    }
    Shape out_shape;
    out_shape.push_back(static_cast<int>(xs.size()));
    out_shape.insert(out_shape.end(), s0.begin(), s0.end());
    Tensor<T> out(out_shape);
    long long step = xs[0].value().size();
    for (size_t k = 0; k < xs.size(); ++k)
        std::copy(xs[k].value().data(), xs[k].value().data() + step, out.data() + k * step);
    std::vector<int> ids;
    ids.reserve(xs.size());
    for (const Var<T>& v : xs) ids.push_back(v.id);
    return g->make(std::move(out), rg, [ids, step](Graph<T>& g2, int self) {
        const Tensor<T>& dy = g2.grad(self);
        for (size_t k = 0; k < ids.size(); ++k) {
            if (!g2.requires_grad(ids[k])) continue;
            Tensor<T>& dx = g2.grad(ids[k]);
            const T* src = dy.data() + static_cast<long long>(k) * step;
            for (long long i = 0; i < step; ++i) dx[i] += src[i];
        }
    });
}

// Extracts slice i along axis 0, dropping that axis.
template <typename T>
Var<T> slice0(Var<T> x, int i) {
    const Tensor<T>& xv = x.value();
    if (xv.rank() < 2) throw ShapeError("slice0: rank must be >= 2");
    if (i < 0 || i >= xv.dim(0)) throw ShapeError("slice0: index out of range");
    Shape s(xv.shape().begin() + 1, xv.shape().end());
    long long step = shape_numel(s);
    Tensor<T> out(s);
    std::copy(xv.data() + i * step, xv.data() + (i + 1) * step, out.data());
    return x.g->make(std::move(out), x.g->requires_grad(x.id),
                     [xi = x.id, i, step](Graph<T>& g, int self) {
                         if (!g.requires_grad(xi)) return;
                         const Tensor<T>& dy = g.grad(self);
                         Tensor<T>& dx = g.grad(xi);
                         T* dst = dx.data() + static_cast<long long>(i) * step;
                         for (long long j = 0; j < step; ++j) dst[j] += dy[j];
                     });
}

// Concatenates along existing axis 0; trailing dims must match.
template <typename T>
Var<T> concat0(const std::vector<Var<T>>& xs) {
    if (xs.empty()) throw ShapeError("concat0: empty input");
    Graph<T>* g = xs[0].g;
    Shape tail(xs[0].value().shape().begin() + 1, xs[0].value().shape().end());
    int total0 = 0;
    bool rg = false;
    for (const Var<T>& v : xs) {
        detail::check_same_graph(xs[0], v, "concat0");
        const Shape& s = v.value().shape();
        if (s.empty() || Shape(s.begin() + 1, s.end()) != tail)
            throw ShapeError("concat0: trailing dims mismatch");
        total0 += s[0];
        rg = rg || g->requires_grad(v.id);
    }
    Shape out_shape;
    out_shape.push_back(total0);
    out_shape.insert(out_shape.end(), tail.begin(), tail.end());
    Tensor<T> out(out_shape);
    long long off = 0;
    std::vector<int> ids;
    std::vector<long long> sizes;
    for (const Var<T>& v : xs) {
        std::copy(v.value().data(), v.value().data() + v.value().size(), out.data() + off);
        ids.push_back(v.id);
        sizes.push_back(v.value().size());
        off += v.value().size();
    }
    return g->make(std::move(out), rg, [ids, sizes](Graph<T>& g2, int self) {
        const Tensor<T>& dy = g2.grad(self);
        long long off2 = 0;
        for (size_t k = 0; k < ids.size(); ++k) {
            if (g2.requires_grad(ids[k])) {
                Tensor<T>& dx = g2.grad(ids[k]);
                const T* src = dy.data() + off2;
                for (long long i = 0; i < sizes[k]; ++i) dx[i] += src[i];
            }
            off2 += sizes[k];
        }
    });
}

// Scalar y = sum(w .* x) with constant weights; used by gradient checks.
template <typename T>
Var<T> weighted_sum(Var<T> x, Tensor<T> w) {
    const Tensor<T>& xv = x.value();
    if (!same_shape(xv, w)) throw ShapeError("weighted_sum: weight shape mismatch");
    double s = 0.0;
    for (long long i = 0; i < xv.size(); ++i)
        s += static_cast<double>(xv[i]) * static_cast<double>(w[i]);
    Tensor<T> out(Shape{1});
    out[0] = static_cast<T>(s);
    return x.g->make(std::move(out), x.g->requires_grad(x.id),
                     [xi = x.id, w = std::move(w)](Graph<T>& g, int self) {
                         if (!g.requires_grad(xi)) return;
                         T dy = g.grad(self)[0];
                         Tensor<T>& dx = g.grad(xi);
                         for (long long i = 0; i < dx.size(); ++i) dx[i] += dy * w[i];
                     });
}

// Mean over all pixels of squared difference against a constant target.
template <typename T>
Var<T> mse_loss(Var<T> pred, const Tensor<T>& target) {
    const Tensor<T>& pv = pred.value();
    if (!same_shape(pv, target))
        throw ShapeError("mse_loss: shape mismatch " + shape_str(pv.shape()) + " vs " +
                         shape_str(target.shape()));
    long long n = pv.size();
    double s = 0.0;
    for (long long i = 0; i < n; ++i) {
        double d = static_cast<double>(pv[i]) - static_cast<double>(target[i]);
        s += d * d;
    }
    Tensor<T> out(Shape{1});
    out[0] = static_cast<T>(s / static_cast<double>(n));
    return pred.g->make(std::move(out), pred.g->requires_grad(pred.id),
                        [pi = pred.id, t = target, n](Graph<T>& g, int self) {
                            if (!g.requires_grad(pi)) return;
                            T dy = g.grad(self)[0];
                            const Tensor<T>& pv2 = g.value(pi);
                            Tensor<T>& dp = g.grad(pi);
                            T c = dy * T(2) / static_cast<T>(n);
                            for (long long i = 0; i < n; ++i) dp[i] += c * (pv2[i] - t[i]);
                        });
}

} // namespace fewcount
