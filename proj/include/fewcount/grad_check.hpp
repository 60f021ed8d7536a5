#pragma once

#include <functional>
#include <vector>

#include "fewcount/graph.hpp"

namespace fewcount {

// Builds a scalar loss from graph leaves created over `inputs`, in order.
template <typename T>
using LossBuilder = std::function<Var<T>(Graph<T>&, const std::vector<Var<T>>&)>;

struct GradCheckOptions {
    double eps = 1e-5;
    uint64_t graph_seed = 7;     // fixed so stochastic ops repeat per evaluation
    long long max_elems = -1;    // per input; -1 checks every element
    uint64_t sample_seed = 99;   // element subsampling stream
};

// Compares analytic gradients against central finite differences and returns
// the maximum relative error over all checked elements.
template <typename T>
double grad_check(const LossBuilder<T>& build, std::vector<Tensor<T>> inputs,
                  GradCheckOptions opt = {}) {
    auto eval = [&](bool want_grads, std::vector<Tensor<T>>* grads) -> double {
        Graph<T> g(opt.graph_seed);
        std::vector<Var<T>> leaves;
        leaves.reserve(inputs.size());
        for (const Tensor<T>& t : inputs) leaves.push_back(g.leaf(t, want_grads));
        Var<T> loss = build(g, leaves);
        if (loss.value().size() != 1) throw ShapeError("grad_check: loss must be scalar");
        double lv = static_cast<double>(loss.value()[0]);
        if (!std::isfinite(lv)) throw NumericError("grad_check: non-finite loss");
        if (want_grads) {
            g.backward(loss);
            grads->clear();
            for (Var<T> v : leaves) grads->push_back(g.grad(v.id));
        }
        return lv;
    };

    std::vector<Tensor<T>> analytic;
    eval(true, &analytic);

    Rng pick(opt.sample_seed);
    double max_rel = 0.0;
    for (size_t t = 0; t < inputs.size(); ++t) {
        long long n = inputs[t].size();
        std::vector<long long> elems;
        if (opt.max_elems < 0 || opt.max_elems >= n) {
            elems.resize(static_cast<size_t>(n));
            for (long long i = 0; i < n; ++i) elems[static_cast<size_t>(i)] = i;
        } else {
            for (long long i = 0; i < opt.max_elems; ++i)
                elems.push_back(static_cast<long long>(pick.uniform_int(static_cast<uint64_t>(n))));
        }
        for (long long e : elems) {
            T orig = inputs[t][e];
            inputs[t][e] = orig + static_cast<T>(opt.eps);
            double up = eval(false, nullptr);
            inputs[t][e] = orig - static_cast<T>(opt.eps);
            double dn = eval(false, nullptr);
            inputs[t][e] = orig;
            double numeric = (up - dn) / (2.0 * opt.eps);
            double ana = static_cast<double>(analytic[t][e]);
            if (!std::isfinite(numeric) || !std::isfinite(ana))
                throw NumericError("grad_check: non-finite gradient");
            double denom = std::max({std::abs(numeric), std::abs(ana), 1e-6});
            max_rel = std::max(max_rel, std::abs(numeric - ana) / denom);
        }
    }
    return max_rel;
}

} // namespace fewcount
