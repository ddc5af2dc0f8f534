#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "qal/rng.hpp"
#include "qal/tensor.hpp"

namespace qal::testutil {

inline double rel_err(double got, double want) {
    const double denom = std::max({std::abs(got), std::abs(want), 1e-12});
    return std::abs(got - want) / denom;
}

// Central-difference gradient of a scalar function of a flat vector. This is
// the independent oracle all reverse-mode checks compare against.
inline std::vector<double> numeric_grad(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> x, double eps = 1e-5) {
    std::vector<double> g(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + eps;
        const double fp = f(x);
        x[i] = saved - eps;
        const double fm = f(x);
        x[i] = saved;
        g[i] = (fp - fm) / (2.0 * eps);
    }
    return g;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = false) {
    Tensor t = Tensor::zeros(std::move(shape), requires_grad);
    for (size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
    return t;
}

// Max relative error between an analytic gradient and the numeric oracle.
inline double max_rel_err(const std::vector<double>& got, const std::vector<double>& want) {
    double worst = 0.0;
    for (size_t i = 0; i < got.size(); ++i) {
        const double denom = std::max({std::abs(got[i]), std::abs(want[i]), 1e-6});
        worst = std::max(worst, std::abs(got[i] - want[i]) / denom);
    }
    return worst;
}

}  // namespace qal::testutil
