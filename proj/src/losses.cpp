#include "hetreg/losses.hpp"

#include <cmath>

namespace hetreg::losses {

namespace {

void check_spatial_layout(const Tensor& t, const char* what) {
    if (t.ndim() < 3 || t.ndim() > 5)
        throw std::invalid_argument(std::string(what) + ": expected [N,C,S...] layout, got " +
                                    t.shape_str());
}

// clamped sigma^2 from a log-variance map
Var clamped_variance(const Var& log_variance) {
    return clamp_min(exp_v(log_variance), kVarianceFloor);
}

// smoothness normalizer: batch * pixel count (component count excluded)
double omega_count(const Tensor& disp) {
    return static_cast<double>(disp.dim(0) * disp.spatial_size(2));
}

Var smoothness_sum_sq(const Var& displacement) {
    const int rank = displacement.value().ndim() - 2;
    Var acc;
    for (int a = 0; a < rank; ++a) {
        Var t = sum(square(forward_diff(displacement, a)));
        acc = acc.defined() ? add(acc, t) : t;
    }
    return acc;
}

}  // namespace

Var mse_data_loss(const Var& fixed, const Var& reconstructed) {
    require_same_shape(fixed.value(), reconstructed.value(), "mse_data_loss");
    return mean(square(sub(fixed, reconstructed)));
}

Var smoothness_penalty(const Var& displacement) {
    check_spatial_layout(displacement.value(), "smoothness_penalty");
    return mul_scalar(smoothness_sum_sq(displacement), 1.0 / omega_count(displacement.value()));
}

Var snr_weight_map(const Var& fixed, const Var& log_variance, double gamma) {
    if (gamma < 0.0) throw std::invalid_argument("snr_weight_map: gamma must be >= 0");
    require_same_shape(fixed.value(), log_variance.value(), "snr_weight_map");
    Var sigma = sqrt_v(clamped_variance(detach(log_variance)));
    // sigmoid rounds to 1.0 in double precision once the SNR argument exceeds
    // ~36; cap one ulp below so the weights stay in [0.5, 1).
    return clamp_max(sigmoid(pow_scalar(div(fixed, sigma), 2.0 * gamma)),
                     std::nextafter(1.0, 0.0));
}

LossBreakdown adaptive_displacement_loss(const Var& fixed, const Var& reconstructed,
                                         const Var& log_variance, const Var& displacement,
                                         double gamma, double lambda) {
    require_same_shape(fixed.value(), reconstructed.value(), "adaptive_displacement_loss");
    if (lambda < 0.0) throw std::invalid_argument("adaptive_displacement_loss: lambda < 0");
    Var w = snr_weight_map(fixed, log_variance, gamma);
    Var data = mean(mul(w, square(sub(fixed, reconstructed))));
    Var smooth = mul_scalar(smoothness_penalty(displacement), lambda);
    LossBreakdown out;
    out.total = add(data, smooth);
    out.data_term = data.item();
    out.smoothness_term = smooth.item();
    return out;
}

Var variance_loss(const Var& fixed, const Var& reconstructed, const Var& log_variance,
                  double beta) {
    if (beta < 0.0 || beta > 1.0) throw std::invalid_argument("variance_loss: beta outside [0,1]");
    require_same_shape(fixed.value(), reconstructed.value(), "variance_loss");
    require_same_shape(fixed.value(), log_variance.value(), "variance_loss");
    Var var = clamped_variance(log_variance);
    Var r = sub(fixed, detach(reconstructed));
    Var prefactor = detach(pow_scalar(var, beta));
    return mean(mul(prefactor, add(div(square(r), var), log_v(var))));
}

LossBreakdown joint_nll_loss(const Var& fixed, const Var& reconstructed,
                             const Var& log_variance, const Var& displacement, double lambda) {
    require_same_shape(fixed.value(), reconstructed.value(), "joint_nll_loss");
    require_same_shape(fixed.value(), log_variance.value(), "joint_nll_loss");
    Var var = clamped_variance(log_variance);
    Var r = sub(fixed, reconstructed);
    Var data = mean(add(div(square(r), var), log_v(var)));
    Var smooth = mul_scalar(smoothness_penalty(displacement), lambda);
    LossBreakdown out;
    out.total = add(data, smooth);
    out.data_term = data.item();
    out.smoothness_term = smooth.item();
    return out;
}

LossBreakdown joint_beta_nll_loss(const Var& fixed, const Var& reconstructed,
                                  const Var& log_variance, const Var& displacement,
                                  double lambda, double beta) {
    if (beta < 0.0 || beta > 1.0)
        throw std::invalid_argument("joint_beta_nll_loss: beta outside [0,1]");
    require_same_shape(fixed.value(), reconstructed.value(), "joint_beta_nll_loss");
    require_same_shape(fixed.value(), log_variance.value(), "joint_beta_nll_loss");
    Var var = clamped_variance(log_variance);
    Var r = sub(fixed, reconstructed);
    Var prefactor = detach(pow_scalar(var, beta));
    Var data = mean(mul(prefactor, add(div(square(r), var), log_v(var))));
    Var smooth = mul_scalar(smoothness_penalty(displacement), lambda);
    LossBreakdown out;
    out.total = add(data, smooth);
    out.data_term = data.item();
    out.smoothness_term = smooth.item();
    return out;
}

Tensor adareg_weight_map(const Tensor& fixed, const Tensor& reconstructed) {
    require_same_shape(fixed, reconstructed, "adareg_weight_map");
    double m = 0.0;
    Tensor rho(fixed.shape());
    for (int64_t i = 0; i < fixed.size(); ++i) {
        rho[i] = std::abs(fixed[i] - reconstructed[i]);
        m += rho[i];
    }
    m /= static_cast<double>(fixed.size());
    // alpha = exp(-c * rho / sigma) with sigma = 1 / mean(rho); the mean-zero
    // case collapses to alpha = 1 (exp(0)).
    Tensor alpha(fixed.shape());
    for (int64_t i = 0; i < fixed.size(); ++i) alpha[i] = std::exp(-kAdaRegC * rho[i] * m);
    return alpha;
}

LossBreakdown adareg_loss(const Var& fixed, const Var& reconstructed,
                          const Var& displacement, double lambda) {
    require_same_shape(fixed.value(), reconstructed.value(), "adareg_loss");
    check_spatial_layout(displacement.value(), "adareg_loss");
    Var data = mse_data_loss(fixed, reconstructed);

    // expand the constant per-pixel weight across displacement components
    Tensor alpha = adareg_weight_map(fixed.value(), reconstructed.value());
    const Tensor& dv = displacement.value();
    const int64_t n = dv.dim(0), comp = dv.dim(1), sp = dv.spatial_size(2);
    Tensor alpha_exp(dv.shape());
    for (int64_t b = 0; b < n; ++b)
        for (int64_t c = 0; c < comp; ++c)
            for (int64_t p = 0; p < sp; ++p)
                alpha_exp[(b * comp + c) * sp + p] = alpha[b * sp + p];
    Var alpha_leaf = Var::leaf(std::move(alpha_exp));

    const int rank = dv.ndim() - 2;
    Var acc;
    for (int a = 0; a < rank; ++a) {
        Var t = sum(square(mul(alpha_leaf, forward_diff(displacement, a))));
        acc = acc.defined() ? add(acc, t) : t;
    }
    Var smooth = mul_scalar(mul_scalar(acc, 1.0 / omega_count(dv)), lambda);

    LossBreakdown out;
    out.total = add(data, smooth);
    out.data_term = data.item();
    out.smoothness_term = smooth.item();
    return out;
}

Tensor adaframe_weight_map(const Tensor& fixed, const Tensor& reconstructed) {
    require_same_shape(fixed, reconstructed, "adaframe_weight_map");
    const int64_t n = fixed.size();
    Tensor delta(fixed.shape());
    double mu = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        delta[i] = std::abs(fixed[i] - reconstructed[i]);
        mu += delta[i];
    }
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t i = 0; i < n; ++i) var += (delta[i] - mu) * (delta[i] - mu);
    var /= static_cast<double>(n);

    const double a = kAdaFrameA0 / (mu + kAdaFrameEps);
    const double b = kAdaFrameB0 * (1.0 - std::cos(3.14159265358979323846 * mu));
    const double denom = std::sqrt(var + kAdaFrameEps);
    Tensor alpha(fixed.shape());
    for (int64_t i = 0; i < n; ++i) {
        const double rho = (delta[i] - mu) / denom;
        alpha[i] = 1.0 - 1.0 / (1.0 + std::exp(-(a * rho - b)));
    }
    return alpha;
}

LossBreakdown adaframe_loss(const Var& fixed, const Var& reconstructed,
                            const Var& displacement, double lambda) {
    require_same_shape(fixed.value(), reconstructed.value(), "adaframe_loss");
    Var alpha = Var::leaf(adaframe_weight_map(fixed.value(), reconstructed.value()));
    Var data = mean(mul(alpha, square(sub(fixed, reconstructed))));
    Var smooth = mul_scalar(smoothness_penalty(displacement), lambda);
    LossBreakdown out;
    out.total = add(data, smooth);
    out.data_term = data.item();
    out.smoothness_term = smooth.item();
    return out;
}

LossBreakdown displacement_loss_with_z_uncertainty(
    const Var& fixed, const Var& reconstructed, const Var& log_variance_image,
    const Var& sampled_displacement, const Var& log_variance_z, double gamma, double alpha,
    double lambda) {
    if (log_variance_z.value().dim(1) != 1)
        throw std::invalid_argument(
            "displacement_loss_with_z_uncertainty: sigma_z must be one scalar per pixel");
    Var w = snr_weight_map(fixed, log_variance_image, gamma);
    Var data = mean(mul(w, square(sub(fixed, reconstructed))));
    Var smooth = mul_scalar(smoothness_penalty(sampled_displacement), lambda);
    Var var_z = clamp_min(exp_v(log_variance_z), kVarianceFloor);
    Var pen = mul_scalar(mean(sub(var_z, log_v(var_z))), alpha);
    LossBreakdown out;
    out.total = add(add(data, smooth), pen);
    out.data_term = data.item();
    out.smoothness_term = smooth.item();
    out.variance_penalty_term = pen.item();
    return out;
}

namespace {

Var clamped_scale(const Var& log_scale) {
    return clamp_min(exp_v(log_scale), kVarianceFloor);
}

}  // namespace

LossBreakdown laplace_adaptive_displacement_loss(const Var& fixed, const Var& reconstructed,
                                                 const Var& log_scale, const Var& displacement,
                                                 double gamma, double lambda) {
    if (gamma < 0.0) throw std::invalid_argument("laplace_adaptive: gamma must be >= 0");
    require_same_shape(fixed.value(), reconstructed.value(), "laplace_adaptive");
    Var b = clamped_scale(detach(log_scale));
    // first-order residual, so the exponent is gamma rather than 2*gamma
    Var w = clamp_max(sigmoid(pow_scalar(div(fixed, b), gamma)), std::nextafter(1.0, 0.0));
    Var data = mean(mul(w, abs_v(sub(fixed, reconstructed))));
    Var smooth = mul_scalar(smoothness_penalty(displacement), lambda);
    LossBreakdown out;
    out.total = add(data, smooth);
    out.data_term = data.item();
    out.smoothness_term = smooth.item();
    return out;
}

Var laplace_scale_loss(const Var& fixed, const Var& reconstructed, const Var& log_scale,
                       double beta) {
    if (beta < 0.0 || beta > 1.0)
        throw std::invalid_argument("laplace_scale_loss: beta outside [0,1]");
    require_same_shape(fixed.value(), reconstructed.value(), "laplace_scale_loss");
    Var b = clamped_scale(log_scale);
    Var r = abs_v(sub(fixed, detach(reconstructed)));
    Var prefactor = detach(pow_scalar(b, beta));
    return mean(mul(prefactor, add(div(r, b), log_v(mul_scalar(b, 2.0)))));
}

LossBreakdown laplace_joint_nll_loss(const Var& fixed, const Var& reconstructed,
                                     const Var& log_scale, const Var& displacement,
                                     double lambda) {
    require_same_shape(fixed.value(), reconstructed.value(), "laplace_joint_nll_loss");
    Var b = clamped_scale(log_scale);
    Var r = abs_v(sub(fixed, reconstructed));
    Var data = mean(add(div(r, b), log_v(mul_scalar(b, 2.0))));
    Var smooth = mul_scalar(smoothness_penalty(displacement), lambda);
    LossBreakdown out;
    out.total = add(data, smooth);
    out.data_term = data.item();
    out.smoothness_term = smooth.item();
    return out;
}

LossBreakdown laplace_joint_beta_nll_loss(const Var& fixed, const Var& reconstructed,
                                          const Var& log_scale, const Var& displacement,
                                          double lambda, double beta) {
    if (beta < 0.0 || beta > 1.0)
        throw std::invalid_argument("laplace_joint_beta_nll_loss: beta outside [0,1]");
    require_same_shape(fixed.value(), reconstructed.value(), "laplace_joint_beta_nll_loss");
    Var b = clamped_scale(log_scale);
    Var r = abs_v(sub(fixed, reconstructed));
    Var prefactor = detach(pow_scalar(b, beta));
    Var data = mean(mul(prefactor, add(div(r, b), log_v(mul_scalar(b, 2.0)))));
    Var smooth = mul_scalar(smoothness_penalty(displacement), lambda);
    LossBreakdown out;
    out.total = add(data, smooth);
    out.data_term = data.item();
    out.smoothness_term = smooth.item();
    return out;
}

}  // namespace hetreg::losses
