#pragma once

#include <cstdint>
#include <vector>

#include "hetreg/autodiff.hpp"
#include "hetreg/models.hpp"

namespace hetreg {

// Adaptive moment estimation over f32 master weights. The update is computed
// in double and written back to single precision, so a saved/restored
// optimizer state reproduces training exactly.
class AdamOptimizer {
public:
    explicit AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999,
                           double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    // bound[i] must be the leaf created from params.all()[i] in the forward
    // whose backward produced the gradients.
    void step(models::ParamStore& params, const std::vector<Var>& bound);

    int64_t steps() const { return t_; }
    void set_steps(int64_t t) { t_ = t; }
    double learning_rate() const { return lr_; }

private:
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

}  // namespace hetreg
