#include "hetreg/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace hetreg {

void AdamOptimizer::step(models::ParamStore& params, const std::vector<Var>& bound) {
    auto& all = params.all();
    if (bound.size() != all.size())
        throw std::invalid_argument("AdamOptimizer: bound leaves do not match store");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < all.size(); ++i) {
        models::Param& p = all[i];
        if (p.adam_m.empty()) {
            p.adam_m.assign(p.value.size(), 0.0f);
            p.adam_v.assign(p.value.size(), 0.0f);
        }
        const Tensor g = bound[i].grad();
        for (size_t k = 0; k < p.value.size(); ++k) {
            const double gk = g[static_cast<int64_t>(k)];
            const double m = beta1_ * static_cast<double>(p.adam_m[k]) + (1.0 - beta1_) * gk;
            const double v =
                beta2_ * static_cast<double>(p.adam_v[k]) + (1.0 - beta2_) * gk * gk;
            p.adam_m[k] = static_cast<float>(m);
            p.adam_v[k] = static_cast<float>(v);
            const double update = lr_ * (m / bc1) / (std::sqrt(v / bc2) + eps_);
            p.value[k] = static_cast<float>(static_cast<double>(p.value[k]) - update);
        }
    }
}

}  // namespace hetreg
