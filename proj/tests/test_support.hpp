#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "hetreg/random.hpp"
#include "hetreg/tensor.hpp"

// Shared helpers for the unit and acceptance suites. The finite-difference
// checker perturbs one scalar entry at a time and compares against an analytic
// gradient; reference loss values are computed by plain double arithmetic that
// never touches the autodiff path.

namespace testsupport {

using hetreg::RandomStream;
using hetreg::Tensor;

inline Tensor random_tensor(std::vector<int64_t> shape, RandomStream& rng, double lo,
                            double hi) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// Smooth random field: white noise passed through a separable moving average.
inline Tensor smooth_random_field(std::vector<int64_t> shape, RandomStream& rng, double lo,
                                  double hi, int passes = 3) {
    Tensor t = random_tensor(shape, rng, lo, hi);
    const int rank = t.ndim();
    for (int pass = 0; pass < passes; ++pass) {
        for (int axis = 0; axis < rank; ++axis) {
            int64_t outer = 1, inner = 1;
            for (int i = 0; i < axis; ++i) outer *= t.dim(i);
            const int64_t len = t.dim(axis);
            for (int i = axis + 1; i < rank; ++i) inner *= t.dim(i);
            Tensor s = t;
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t l = 0; l < len; ++l)
                    for (int64_t in = 0; in < inner; ++in) {
                        const auto at = [&](int64_t ll) {
                            ll = std::max<int64_t>(0, std::min(len - 1, ll));
                            return s[(o * len + ll) * inner + in];
                        };
                        t[(o * len + l) * inner + in] =
                            (at(l - 1) + at(l) + at(l + 1)) / 3.0;
                    }
        }
    }
    return t;
}

// Central finite difference of f with respect to entry i of x.
inline double central_diff(const std::function<double(const Tensor&)>& f, Tensor x, int64_t i,
                           double step = 1e-4) {
    const double orig = x[i];
    x[i] = orig + step;
    const double fp = f(x);
    x[i] = orig - step;
    const double fm = f(x);
    x[i] = orig;
    return (fp - fm) / (2.0 * step);
}

// Max relative error between an analytic gradient and central differences,
// with an absolute guard for near-zero entries.
inline double max_grad_rel_error(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                 const Tensor& analytic, double step = 1e-4,
                                 double abs_guard = 1e-8) {
    double worst = 0.0;
    for (int64_t i = 0; i < x.size(); ++i) {
        const double fd = central_diff(f, x, i, step);
        const double an = analytic[i];
        const double denom = std::max({std::abs(fd), std::abs(an), abs_guard});
        worst = std::max(worst, std::abs(fd - an) / denom);
    }
    return worst;
}

}  // namespace testsupport
