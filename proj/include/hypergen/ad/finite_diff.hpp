#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "hypergen/ad/tensor.hpp"
#include "hypergen/errors.hpp"

// Central-difference derivative oracle used by tests to validate tape
// gradients. Independent of the tape by construction: it re-evaluates a loss
// closure under coordinate perturbations of the raw parameter values.
namespace hypergen::ad {

// d loss / d x[i] for every coordinate of x. `loss` must recompute its value
// from the tensors' current contents on every call.
template <typename F>
std::vector<double> finite_diff_grad(Tensor& x, F&& loss, double h = 1e-6) {
    auto vals = x.mutable_data();
    std::vector<double> g(vals.size());
    for (size_t i = 0; i < vals.size(); ++i) {
        const double keep = vals[i];
        vals[i] = keep + h;
        const double up = loss();
        vals[i] = keep - h;
        const double down = loss();
        vals[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

// max_i |a_i - b_i| / max(floor, |a_i|, |b_i|)
inline double max_rel_err(std::span<const double> a, std::span<const double> b,
                          double floor = 1e-6) {
    if (a.size() != b.size()) throw shape_error("max_rel_err: length mismatch");
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({floor, std::fabs(a[i]), std::fabs(b[i])});
        worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
    }
    return worst;
}

}  // namespace hypergen::ad
