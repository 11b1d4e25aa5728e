#pragma once

#include "hetreg/autodiff.hpp"

namespace hetreg::losses {

// Stability floor applied to exp(log sigma^2) before any division, and to the
// Laplacian scale b.
inline constexpr double kVarianceFloor = 1e-6;

// AdaReg / AdaFrame constants.
inline constexpr double kAdaRegC = 50.0;
inline constexpr double kAdaFrameA0 = 0.1;
inline constexpr double kAdaFrameB0 = 10.0;
inline constexpr double kAdaFrameEps = 1e-8;

// All image-shaped inputs share one layout: [N, C, S...] with C = 1 for
// intensity images and log-variance maps, C = rank for displacement fields.
// Expectations over the image space are plain arithmetic means over all
// pixels and batch items.

struct LossBreakdown {
    Var total;
    // Weighted contributions; they sum to total.
    double data_term = 0.0;
    double smoothness_term = 0.0;
    double variance_penalty_term = 0.0;
};

// mean over pixels of the squared residual
Var mse_data_loss(const Var& fixed, const Var& reconstructed);

// mean over pixels of the squared forward-difference gradients, summed over
// displacement components and axes (the caller applies lambda)
Var smoothness_penalty(const Var& displacement);

// sigmoid((I_f / floor_sg(sigma))^{2 gamma}); the predicted variance enters
// through a stop-gradient so the map is a constant during backprop
Var snr_weight_map(const Var& fixed, const Var& log_variance, double gamma);

// proposed displacement loss: E[ w * r^2 ] + lambda * smoothness
LossBreakdown adaptive_displacement_loss(const Var& fixed, const Var& reconstructed,
                                         const Var& log_variance, const Var& displacement,
                                         double gamma, double lambda);

// beta-weighted variance loss with stop-gradients on the reconstructed image
// and on the beta-exponentiated prefactor
Var variance_loss(const Var& fixed, const Var& reconstructed, const Var& log_variance,
                  double beta);

// joint NLL baseline (no stop-gradients)
LossBreakdown joint_nll_loss(const Var& fixed, const Var& reconstructed,
                             const Var& log_variance, const Var& displacement, double lambda);

// joint beta-NLL baseline; only the prefactor is stop-gradiented
LossBreakdown joint_beta_nll_loss(const Var& fixed, const Var& reconstructed,
                                  const Var& log_variance, const Var& displacement,
                                  double lambda, double beta = 0.5);

// AdaReg: plain MSE data term, residual-adaptive regularization weight
LossBreakdown adareg_loss(const Var& fixed, const Var& reconstructed,
                          const Var& displacement, double lambda);

// AdaFrame: residual-statistics data weight alpha = 1 - sigmoid(a*rho - b)
LossBreakdown adaframe_loss(const Var& fixed, const Var& reconstructed,
                            const Var& displacement, double lambda);

// The per-pixel AdaReg / AdaFrame weights for inspection and tests (plain
// tensors; both schemes treat the weights as constants).
Tensor adareg_weight_map(const Tensor& fixed, const Tensor& reconstructed);
Tensor adaframe_weight_map(const Tensor& fixed, const Tensor& reconstructed);

// Proposed loss extended with the isotropic displacement-uncertainty penalty
// alpha * E[sigma_z^2 - log sigma_z^2]; log_variance_z carries one scalar per
// pixel shared across components.
LossBreakdown displacement_loss_with_z_uncertainty(
    const Var& fixed, const Var& reconstructed, const Var& log_variance_image,
    const Var& sampled_displacement, const Var& log_variance_z, double gamma, double alpha,
    double lambda);

// Heteroscedastic Laplacian variants. log_scale predicts log b. Forms:
//   NLL            |r|/b + log 2b
//   beta variant   floor_sg(b^beta) * (|r|/b + log 2b)
//   adaptive       sigmoid((I_f/floor_sg(b))^gamma) * |r|   (+ lambda smooth)
LossBreakdown laplace_adaptive_displacement_loss(const Var& fixed, const Var& reconstructed,
                                                 const Var& log_scale, const Var& displacement,
                                                 double gamma, double lambda);
Var laplace_scale_loss(const Var& fixed, const Var& reconstructed, const Var& log_scale,
                       double beta);
LossBreakdown laplace_joint_nll_loss(const Var& fixed, const Var& reconstructed,
                                     const Var& log_scale, const Var& displacement,
                                     double lambda);
LossBreakdown laplace_joint_beta_nll_loss(const Var& fixed, const Var& reconstructed,
                                          const Var& log_scale, const Var& displacement,
                                          double lambda, double beta = 0.5);

}  // namespace hetreg::losses
