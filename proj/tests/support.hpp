#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mate/rng.hpp"
#include "mate/tensor.hpp"

namespace mate::testing {

struct GradReport {
    double max_rel = 0.0;
    std::string worst;  // name[index] of the worst element
    double group_rel = 0.0;  // max over tensors of |a - n|₂ / max(|a|₂, |n|₂, floor)
    std::string worst_group;
};

// Relative error with an absolute floor so near-zero gradients do not
// dominate: |a - n| / max(|a|, |n|, floor).
inline double rel_error(double a, double n, double floor = 1e-3) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// Central-difference check of d loss / d param for every element of every
/// named parameter. `loss` must rebuild the graph from the current values.
inline GradReport gradcheck(const std::vector<std::pair<std::string, Tensor<double>*>>& params,
                            const std::function<Tensor<double>()>& loss, double h = 1e-3) {
    for (auto& [n, p] : params) {
        p->zero_grad();
        p->set_requires_grad(true);
    }
    {
        GradTape<double> tape;
        tape.backward(loss());
    }
    std::vector<std::vector<double>> analytic;
    for (auto& [n, p] : params) {
        analytic.emplace_back(p->numel(), 0.0);
        if (p->has_grad()) std::copy(p->grad().begin(), p->grad().end(), analytic.back().begin());
        p->zero_grad();
        p->set_requires_grad(false);
    }
    GradReport r;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto data = params[i].second->mutable_data();
        double diff2 = 0, a2 = 0, n2 = 0;
        for (std::size_t j = 0; j < data.size(); ++j) {
            const double keep = data[j];
            data[j] = keep + h;
            const double up = loss().item();
            data[j] = keep - h;
            const double down = loss().item();
            data[j] = keep;
            const double numeric = (up - down) / (2 * h);
            const double e = rel_error(analytic[i][j], numeric);
            diff2 += (analytic[i][j] - numeric) * (analytic[i][j] - numeric);
            a2 += analytic[i][j] * analytic[i][j];
            n2 += numeric * numeric;
            if (e > r.max_rel) {
                r.max_rel = e;
                r.worst = params[i].first + "[" + std::to_string(j) + "]";
            }
        }
        const double g = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-3});
        if (g > r.group_rel) {
            r.group_rel = g;
            r.worst_group = params[i].first;
        }
    }
    return r;
}

template <typename T = double>
Tensor<T> random(Shape shape, Rng& rng, double scale = 1.0) {
    return Tensor<T>::randn(std::move(shape), rng, static_cast<T>(scale));
}

// Weighted sum with fixed random weights: a generic scalar probe of y.
template <typename T>
Tensor<T> probe(const Tensor<T>& y, std::uint64_t seed) {
    return sum(mul(y, Tensor<T>::randn(y.shape(), seed)));
}

}  // namespace mate::testing
