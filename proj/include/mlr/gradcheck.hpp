#pragma once

// Central-difference gradient oracle. Instantiate the graph with
// Real = double when calling this: the differences are evaluated in 64-bit
// so the truncation error, not rounding noise, dominates at h ~ 1e-3.

#include <functional>

#include "mlr/graph.hpp"

namespace mlr {

inline double rel_err(double a, double n) {
    const double denom = std::max({std::fabs(a), std::fabs(n), 1e-8});
    return std::fabs(a - n) / denom;
}

// build(graph, x) must construct a scalar loss from leaf x. Returns the
// maximum relative error between backward() and (f(x+h)-f(x-h))/2h over
// every element of x.
template <typename BuildFn>
double grad_check(BuildFn&& build, const Shape& shape, std::span<const double> x0, double h) {
    if (h <= 0.0) throw ContractError("grad_check: h must be positive");
    if (x0.size() != numel(shape)) throw ShapeError("grad_check: x0 does not match shape");

    std::vector<double> analytic;
    {
        Graph<double> g;
        Tensor<double> x = g.leaf(shape, x0, true);
        Tensor<double> loss = build(g, x);
        if (numel(loss.shape()) != 1) throw ContractError("grad_check: loss must be scalar");
        g.backward(loss);
        analytic.assign(x.grad().begin(), x.grad().end());
    }

    auto eval = [&](std::span<const double> xv) {
        Graph<double> g;
        Tensor<double> x = g.leaf(shape, xv, false);
        return (double)build(g, x).values()[0];
    };

    std::vector<double> xv(x0.begin(), x0.end());
    double worst = 0.0;
    for (size_t i = 0; i < xv.size(); ++i) {
        const double keep = xv[i];
        xv[i] = keep + h;
        const double fp = eval(xv);
        xv[i] = keep - h;
        const double fm = eval(xv);
        xv[i] = keep;
        worst = std::max(worst, rel_err(analytic[i], (fp - fm) / (2.0 * h)));
    }
    return worst;
}

}  // namespace mlr
