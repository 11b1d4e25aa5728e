#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "hetreg/losses.hpp"
#include "loss_oracles.hpp"
#include "test_support.hpp"

using namespace hetreg;
using namespace hetreg::losses;
using testsupport::max_grad_rel_error;
using testsupport::random_tensor;

namespace {

constexpr double kSig1 = 0.7310585786300049;  // sigmoid(1)

struct Instance {
    Tensor fixed, rec, logvar, disp;
};

Instance random_instance(RandomStream& rng, int64_t h = 4, int64_t w = 5) {
    Instance in;
    in.fixed = random_tensor({1, 1, h, w}, rng, 0.05, 1.0);
    in.rec = random_tensor({1, 1, h, w}, rng, 0.0, 1.0);
    in.logvar = random_tensor({1, 1, h, w}, rng, -2.5, 1.0);
    in.disp = random_tensor({1, 2, h, w}, rng, -1.0, 1.0);
    return in;
}

Var L(const Tensor& t) { return Var::leaf(t); }
Var Lg(const Tensor& t) { return Var::leaf(t, true); }

}  // namespace

TEST_CASE("mse examples") {
    Tensor a = Tensor::full({1, 1, 2, 2}, 0.4);
    CHECK(mse_data_loss(L(a), L(a)).item() == 0.0);
    CHECK(mse_data_loss(L(Tensor::full({1, 1, 2, 2}, 1.0)), L(Tensor::full({1, 1, 2, 2}, 0.0)))
              .item() == doctest::Approx(1.0));
    Tensor f({1, 1, 1, 2}, {0.2, 0.8});
    Tensor r({1, 1, 1, 2}, {0.5, 0.5});
    CHECK(mse_data_loss(L(f), L(r)).item() == doctest::Approx(0.09));
}

TEST_CASE("smoothness examples and homogeneity") {
    CHECK(smoothness_penalty(L(Tensor::full({1, 2, 3, 3}, 1.7))).item() == 0.0);
    Tensor v({1, 1, 3}, {0.0, 1.0, 2.0});
    CHECK(smoothness_penalty(L(v)).item() == doctest::Approx(2.0 / 3.0));

    RandomStream rng(2);
    Tensor d = random_tensor({1, 2, 4, 4}, rng, -1.0, 1.0);
    const double base = smoothness_penalty(L(d)).item();
    Tensor d3 = d;
    for (int64_t i = 0; i < d3.size(); ++i) d3[i] *= 3.0;
    CHECK(smoothness_penalty(L(d3)).item() == doctest::Approx(9.0 * base));
}

TEST_CASE("snr_weight_map hand values") {
    Tensor f = Tensor::full({1, 1, 2, 2}, 0.5);
    Tensor lv = Tensor::full({1, 1, 2, 2}, std::log(0.25));  // sigma = 0.5

    // gamma = 0 collapses to sigmoid(1) regardless of inputs
    Tensor w0 = snr_weight_map(L(f), L(lv), 0.0).value();
    for (int64_t i = 0; i < w0.size(); ++i) CHECK(w0[i] == doctest::Approx(kSig1));

    // gamma = 0.5, I/sigma = 1
    Tensor w1 = snr_weight_map(L(f), L(lv), 0.5).value();
    for (int64_t i = 0; i < w1.size(); ++i) CHECK(w1[i] == doctest::Approx(kSig1));

    // gamma = 1, I = 0.9, sigma = 0.3 -> sigmoid(9)
    Tensor f2 = Tensor::full({1, 1, 1, 1}, 0.9);
    Tensor lv2 = Tensor::full({1, 1, 1, 1}, std::log(0.09));
    CHECK(snr_weight_map(L(f2), L(lv2), 1.0).value()[0] ==
          doctest::Approx(0.999877).epsilon(1e-5));

    CHECK_THROWS_AS(snr_weight_map(L(f), L(lv), -0.1), std::invalid_argument);
}

TEST_CASE("snr_weight_map range is [0.5, 1) and matches the oracle") {
    RandomStream rng(3);
    for (int it = 0; it < 20; ++it) {
        Instance in = random_instance(rng);
        const double gamma = rng.uniform(0.0, 2.0);
        Tensor w = snr_weight_map(L(in.fixed), L(in.logvar), gamma).value();
        Tensor wo = oracle::snr_weights(in.fixed, in.logvar, gamma);
        for (int64_t i = 0; i < w.size(); ++i) {
            CHECK(w[i] >= 0.5);
            CHECK(w[i] < 1.0);
            CHECK(w[i] == doctest::Approx(wo[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("adaptive_displacement_loss examples") {
    // perfect reconstruction + constant displacement -> 0
    Tensor f = Tensor::full({1, 1, 3, 3}, 0.6);
    Tensor d = Tensor::full({1, 2, 3, 3}, 0.8);
    Tensor lv = Tensor::zeros({1, 1, 3, 3});
    auto lb = adaptive_displacement_loss(L(f), L(f), L(lv), L(d), 0.5, 0.01);
    CHECK(lb.total.item() == 0.0);

    // gamma = 0: data term equals sigmoid(1) * mse exactly
    RandomStream rng(5);
    Instance in = random_instance(rng);
    auto lb0 = adaptive_displacement_loss(L(in.fixed), L(in.rec), L(in.logvar), L(in.disp),
                                          0.0, 0.0);
    const double want = kSig1 * mse_data_loss(L(in.fixed), L(in.rec)).item();
    CHECK(lb0.total.item() == doctest::Approx(want).epsilon(1e-12));

    // single pixel: sigmoid(2) * 0.09
    Tensor f1({1, 1, 1, 1}, {0.8});
    Tensor r1({1, 1, 1, 1}, {0.5});
    Tensor lv1({1, 1, 1, 1}, {std::log(0.16)});  // sigma = 0.4
    Tensor d1 = Tensor::zeros({1, 2, 1, 1});
    auto lb1 = adaptive_displacement_loss(L(f1), L(r1), L(lv1), L(d1), 0.5, 0.0);
    CHECK(lb1.total.item() == doctest::Approx(0.0792717).epsilon(1e-5));
}

TEST_CASE("adaptive loss: no gradient reaches the variance input") {
    RandomStream rng(7);
    Instance in = random_instance(rng);
    Var lv = Lg(in.logvar);
    Var rec = Lg(in.rec);
    Var disp = Lg(in.disp);
    auto lb = adaptive_displacement_loss(L(in.fixed), rec, lv, disp, 0.7, 0.02);
    lb.total.backward();
    CHECK_FALSE(lv.grad_touched());
    Tensor g = lv.grad();
    for (int64_t i = 0; i < g.size(); ++i) CHECK(g[i] == 0.0);
    CHECK(rec.grad_touched());
    CHECK(disp.grad_touched());
}

TEST_CASE("adaptive loss gradients match frozen-weight finite differences") {
    RandomStream rng(11);
    for (int it = 0; it < 5; ++it) {
        Instance in = random_instance(rng);
        const double gamma = 0.5, lambda = 0.01;
        Var rec = Lg(in.rec);
        Var disp = Lg(in.disp);
        auto lb = adaptive_displacement_loss(L(in.fixed), rec, L(in.logvar), disp, gamma,
                                             lambda);
        lb.total.backward();
        Tensor w = oracle::snr_weights(in.fixed, in.logvar, gamma);
        const auto f_rec = [&](const Tensor& t) {
            return oracle::adaptive_displacement(in.fixed, t, w, in.disp, lambda);
        };
        const auto f_disp = [&](const Tensor& t) {
            return oracle::adaptive_displacement(in.fixed, in.rec, w, t, lambda);
        };
        CHECK(max_grad_rel_error(f_rec, in.rec, rec.grad()) < 1e-3);
        CHECK(max_grad_rel_error(f_disp, in.disp, disp.grad()) < 1e-3);
    }
}

TEST_CASE("variance_loss examples and stop-gradients") {
    // beta = 0, sigma^2 = 1 -> reduces to mse
    RandomStream rng(13);
    Instance in = random_instance(rng);
    Tensor lv1 = Tensor::zeros(in.fixed.shape());
    CHECK(variance_loss(L(in.fixed), L(in.rec), L(lv1), 0.0).item() ==
          doctest::Approx(oracle::mse(in.fixed, in.rec)).epsilon(1e-12));

    // r = 0, sigma^2 = 1 -> 0
    CHECK(variance_loss(L(in.fixed), L(in.fixed), L(lv1), 0.5).item() == 0.0);

    // single pixel: r=0.5, sigma^2=0.25, beta=0.5 -> -0.193147
    Tensor f({1, 1, 1, 1}, {0.5});
    Tensor r({1, 1, 1, 1}, {0.0});
    Tensor lv({1, 1, 1, 1}, {std::log(0.25)});
    CHECK(variance_loss(L(f), L(r), L(lv), 0.5).item() ==
          doctest::Approx(-0.193147).epsilon(1e-5));

    CHECK_THROWS_AS(variance_loss(L(f), L(r), L(lv), 1.5), std::invalid_argument);
    CHECK_THROWS_AS(variance_loss(L(f), L(r), L(lv), -0.2), std::invalid_argument);

    // gradient w.r.t. the reconstructed image is exactly zero
    Var rec = Lg(in.rec);
    Var lvv = Lg(in.logvar);
    variance_loss(L(in.fixed), rec, lvv, 0.5).backward();
    CHECK_FALSE(rec.grad_touched());
    CHECK(lvv.grad_touched());
}

TEST_CASE("variance_loss gradient w.r.t. log-variance matches frozen finite differences") {
    RandomStream rng(17);
    for (int it = 0; it < 5; ++it) {
        Instance in = random_instance(rng);
        const double beta = rng.uniform(0.0, 1.0);
        Var lv = Lg(in.logvar);
        variance_loss(L(in.fixed), L(in.rec), lv, beta).backward();
        Tensor pf = oracle::beta_prefactor(in.logvar, beta);
        const auto f = [&](const Tensor& t) {
            return oracle::variance_loss_frozen(in.fixed, in.rec, t, pf);
        };
        CHECK(max_grad_rel_error(f, in.logvar, lv.grad()) < 1e-3);
    }
}

TEST_CASE("joint NLL examples and gradients") {
    RandomStream rng(19);
    Instance in = random_instance(rng);
    Tensor lv1 = Tensor::zeros(in.fixed.shape());
    Tensor d0 = Tensor::zeros(in.disp.shape());

    CHECK(joint_nll_loss(L(in.fixed), L(in.rec), L(lv1), L(d0), 0.0).total.item() ==
          doctest::Approx(oracle::mse(in.fixed, in.rec)).epsilon(1e-12));

    auto lb = joint_nll_loss(L(in.fixed), L(in.fixed), L(lv1), L(in.disp), 0.3);
    CHECK(lb.total.item() == doctest::Approx(0.3 * oracle::smoothness(in.disp)).epsilon(1e-12));

    // single pixel r=1, sigma^2=e -> 1/e + 1
    Tensor f({1, 1, 1, 1}, {1.0});
    Tensor r({1, 1, 1, 1}, {0.0});
    Tensor lv({1, 1, 1, 1}, {1.0});
    Tensor d1 = Tensor::zeros({1, 2, 1, 1});
    CHECK(joint_nll_loss(L(f), L(r), L(lv), L(d1), 0.0).total.item() ==
          doctest::Approx(std::exp(-1.0) + 1.0).epsilon(1e-12));

    // gradients flow to all inputs and match central differences
    Var rec = Lg(in.rec);
    Var lvv = Lg(in.logvar);
    Var disp = Lg(in.disp);
    joint_nll_loss(L(in.fixed), rec, lvv, disp, 0.01).total.backward();
    const auto fr = [&](const Tensor& t) {
        return oracle::joint_nll(in.fixed, t, in.logvar, in.disp, 0.01);
    };
    const auto fl = [&](const Tensor& t) {
        return oracle::joint_nll(in.fixed, in.rec, t, in.disp, 0.01);
    };
    const auto fd = [&](const Tensor& t) {
        return oracle::joint_nll(in.fixed, in.rec, in.logvar, t, 0.01);
    };
    CHECK(max_grad_rel_error(fr, in.rec, rec.grad()) < 1e-3);
    CHECK(max_grad_rel_error(fl, in.logvar, lvv.grad()) < 1e-3);
    CHECK(max_grad_rel_error(fd, in.disp, disp.grad()) < 1e-3);
}

TEST_CASE("beta-NLL equals NLL at beta=0 and freezes the prefactor") {
    RandomStream rng(23);
    Instance in = random_instance(rng);
    const double a = joint_beta_nll_loss(L(in.fixed), L(in.rec), L(in.logvar), L(in.disp),
                                         0.01, 0.0)
                         .total.item();
    const double b =
        joint_nll_loss(L(in.fixed), L(in.rec), L(in.logvar), L(in.disp), 0.01).total.item();
    CHECK(a == b);  // bitwise: the unit prefactor multiplies exactly

    // single pixel, same arithmetic as the variance loss example
    Tensor f({1, 1, 1, 1}, {0.5});
    Tensor r({1, 1, 1, 1}, {0.0});
    Tensor lv({1, 1, 1, 1}, {std::log(0.25)});
    Tensor d1 = Tensor::zeros({1, 2, 1, 1});
    CHECK(joint_beta_nll_loss(L(f), L(r), L(lv), L(d1), 0.0, 0.5).total.item() ==
          doctest::Approx(-0.193147).epsilon(1e-5));

    // log-variance gradient matches the frozen-prefactor reference
    Var lvv = Lg(in.logvar);
    joint_beta_nll_loss(L(in.fixed), L(in.rec), lvv, L(in.disp), 0.01, 0.5).total.backward();
    Tensor pf = oracle::beta_prefactor(in.logvar, 0.5);
    const auto fl = [&](const Tensor& t) {
        return oracle::joint_beta_nll_frozen(in.fixed, in.rec, t, pf, in.disp, 0.01);
    };
    CHECK(max_grad_rel_error(fl, in.logvar, lvv.grad()) < 1e-3);
}

TEST_CASE("adareg weight examples") {
    // rho = 0 everywhere -> alpha = 1
    Tensor f = Tensor::full({1, 1, 2, 2}, 0.3);
    Tensor a0 = adareg_weight_map(f, f);
    for (int64_t i = 0; i < a0.size(); ++i) CHECK(a0[i] == 1.0);

    // uniform residual 0.1 -> alpha = exp(-0.5)
    Tensor r = Tensor::full({1, 1, 2, 2}, 0.2);
    Tensor a1 = adareg_weight_map(f, r);
    for (int64_t i = 0; i < a1.size(); ++i)
        CHECK(a1[i] == doctest::Approx(0.606531).epsilon(1e-5));

    // pixel residual 0.2 with image-mean residual 0.1 -> exp(-1)
    Tensor f2({1, 1, 1, 3}, {0.5, 0.5, 0.5});
    Tensor r2({1, 1, 1, 3}, {0.7, 0.55, 0.45});  // residuals 0.2, 0.05, 0.05 -> mean 0.1
    Tensor a2 = adareg_weight_map(f2, r2);
    CHECK(a2[0] == doctest::Approx(std::exp(-1.0)).epsilon(1e-9));
}

TEST_CASE("adareg gradients match the frozen-alpha reference") {
    RandomStream rng(29);
    for (int it = 0; it < 4; ++it) {
        Instance in = random_instance(rng);
        Var rec = Lg(in.rec);
        Var disp = Lg(in.disp);
        adareg_loss(L(in.fixed), rec, disp, 0.05).total.backward();
        Tensor alpha = oracle::adareg_alpha(in.fixed, in.rec);
        const auto fr = [&](const Tensor& t) {
            return oracle::adareg_frozen(in.fixed, t, alpha, in.disp, 0.05);
        };
        const auto fd = [&](const Tensor& t) {
            return oracle::adareg_frozen(in.fixed, in.rec, alpha, t, 0.05);
        };
        CHECK(max_grad_rel_error(fr, in.rec, rec.grad()) < 1e-3);
        CHECK(max_grad_rel_error(fd, in.disp, disp.grad()) < 1e-3);
    }
}

TEST_CASE("adaframe weight examples and monotonicity") {
    // uniform residual mu = 0.1: alpha = sigmoid(b), b = 10(1 - cos(0.1 pi))
    Tensor f = Tensor::full({1, 1, 2, 2}, 0.4);
    Tensor r = Tensor::full({1, 1, 2, 2}, 0.5);
    Tensor a = adaframe_weight_map(f, r);
    for (int64_t i = 0; i < a.size(); ++i)
        CHECK(a[i] == doctest::Approx(0.619973).epsilon(1e-5));

    // mu = 0: b = 0, rho = 0, alpha = 0.5; data term 0
    Tensor a0 = adaframe_weight_map(f, f);
    for (int64_t i = 0; i < a0.size(); ++i) CHECK(a0[i] == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(adaframe_loss(L(f), L(f), L(Tensor::zeros({1, 2, 2, 2})), 0.0).total.item() == 0.0);

    // holding the statistics fixed, alpha strictly decreases in delta
    RandomStream rng(31);
    Tensor fixed = testsupport::random_tensor({1, 1, 8, 8}, rng, 0.2, 0.9);
    Tensor rec = testsupport::random_tensor({1, 1, 8, 8}, rng, 0.2, 0.9);
    Tensor alpha = adaframe_weight_map(fixed, rec);
    // brute-force pairwise check on the computed map
    for (int64_t i = 0; i < fixed.size(); ++i)
        for (int64_t j = 0; j < fixed.size(); ++j) {
            const double di = std::abs(fixed[i] - rec[i]);
            const double dj = std::abs(fixed[j] - rec[j]);
            if (di < dj) CHECK(alpha[i] >= alpha[j]);
        }
}

TEST_CASE("adaframe gradients match the frozen-alpha reference") {
    RandomStream rng(37);
    Instance in = random_instance(rng);
    Var rec = Lg(in.rec);
    Var disp = Lg(in.disp);
    adaframe_loss(L(in.fixed), rec, disp, 0.05).total.backward();
    Tensor alpha = oracle::adaframe_alpha(in.fixed, in.rec);
    const auto fr = [&](const Tensor& t) {
        return oracle::adaframe_frozen(in.fixed, t, alpha, in.disp, 0.05);
    };
    const auto fd = [&](const Tensor& t) {
        return oracle::adaframe_frozen(in.fixed, in.rec, alpha, t, 0.05);
    };
    CHECK(max_grad_rel_error(fr, in.rec, rec.grad()) < 1e-3);
    CHECK(max_grad_rel_error(fd, in.disp, disp.grad()) < 1e-3);
}

TEST_CASE("displacement uncertainty penalty") {
    RandomStream rng(41);
    Instance in = random_instance(rng);
    Tensor lvz0 = Tensor::zeros({1, 1, 4, 5});  // sigma_z^2 = 1
    auto lb = displacement_loss_with_z_uncertainty(L(in.fixed), L(in.fixed), L(in.logvar),
                                                   L(Tensor::zeros({1, 2, 4, 5})), L(lvz0),
                                                   0.5, 1e-4, 0.0);
    CHECK(lb.variance_penalty_term == doctest::Approx(1e-4).epsilon(1e-9));
    CHECK(lb.total.item() == doctest::Approx(1e-4).epsilon(1e-9));

    // s - log s is uniquely minimized at s = 1
    const auto pen = [](double s) { return s - std::log(s); };
    for (double s : {0.25, 0.5, 0.9, 1.1, 2.0, 4.0}) CHECK(pen(s) > pen(1.0));

    // gradient check on log_variance_z
    Tensor lvz = random_tensor({1, 1, 4, 5}, rng, -1.0, 1.0);
    Var lvzv = Lg(lvz);
    displacement_loss_with_z_uncertainty(L(in.fixed), L(in.rec), L(in.logvar), L(in.disp),
                                         lvzv, 0.5, 1e-2, 0.01)
        .total.backward();
    const auto f = [&](const Tensor& t) {
        return 1e-2 * oracle::z_uncertainty_penalty(t);
    };
    // only the penalty depends on lvz; constant offset cancels in differences
    CHECK(max_grad_rel_error(f, lvz, lvzv.grad()) < 1e-3);
}

TEST_CASE("laplacian variants") {
    Tensor f = Tensor::full({1, 1, 2, 2}, 0.4);
    Tensor lv0 = Tensor::zeros({1, 1, 2, 2});  // b = 1
    Tensor d0 = Tensor::zeros({1, 2, 2, 2});

    // identical images, b = 1 -> log(2) per pixel
    CHECK(laplace_joint_nll_loss(L(f), L(f), L(lv0), L(d0), 0.0).total.item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // r = 1, b = 1 -> 1 + log 2
    Tensor f1({1, 1, 1, 1}, {1.0});
    Tensor r1({1, 1, 1, 1}, {0.0});
    Tensor lv1 = Tensor::zeros({1, 1, 1, 1});
    Tensor d1 = Tensor::zeros({1, 2, 1, 1});
    CHECK(laplace_joint_nll_loss(L(f1), L(r1), L(lv1), L(d1), 0.0).total.item() ==
          doctest::Approx(1.0 + std::log(2.0)).epsilon(1e-12));

    // zero residual: adaptive data part is 0
    auto lb = laplace_adaptive_displacement_loss(L(f), L(f), L(lv0), L(d0), 0.5, 0.01);
    CHECK(lb.data_term == 0.0);

    // scale-loss gradient matches the frozen reference
    RandomStream rng(43);
    Instance in = random_instance(rng);
    Var lv = Lg(in.logvar);
    laplace_scale_loss(L(in.fixed), L(in.rec), lv, 0.5).backward();
    Tensor pf = oracle::laplace_prefactor(in.logvar, 0.5);
    const auto fl = [&](const Tensor& t) {
        return oracle::laplace_scale_loss_frozen(in.fixed, in.rec, t, pf);
    };
    CHECK(max_grad_rel_error(fl, in.logvar, lv.grad()) < 1e-3);

    // beta = 0 equals plain laplace NLL
    CHECK(laplace_joint_beta_nll_loss(L(in.fixed), L(in.rec), L(in.logvar), L(in.disp), 0.01,
                                      0.0)
              .total.item() ==
          laplace_joint_nll_loss(L(in.fixed), L(in.rec), L(in.logvar), L(in.disp), 0.01)
              .total.item());
}

TEST_CASE("loss breakdown parts sum to the total") {
    RandomStream rng(47);
    Instance in = random_instance(rng);
    auto check_parts = [](const LossBreakdown& lb) {
        CHECK(std::abs(lb.total.item() -
                       (lb.data_term + lb.smoothness_term + lb.variance_penalty_term)) <=
              1e-8);
    };
    check_parts(adaptive_displacement_loss(L(in.fixed), L(in.rec), L(in.logvar), L(in.disp),
                                           0.5, 0.01));
    check_parts(joint_nll_loss(L(in.fixed), L(in.rec), L(in.logvar), L(in.disp), 0.01));
    check_parts(
        joint_beta_nll_loss(L(in.fixed), L(in.rec), L(in.logvar), L(in.disp), 0.01, 0.5));
    check_parts(adareg_loss(L(in.fixed), L(in.rec), L(in.disp), 0.01));
    check_parts(adaframe_loss(L(in.fixed), L(in.rec), L(in.disp), 0.01));
    Tensor lvz = testsupport::random_tensor({1, 1, 4, 5}, rng, -1.0, 1.0);
    check_parts(displacement_loss_with_z_uncertainty(L(in.fixed), L(in.rec), L(in.logvar),
                                                     L(in.disp), L(lvz), 0.5, 1e-4, 0.01));
}

TEST_CASE("data terms are permutation-equivariant in the pixel index") {
    RandomStream rng(53);
    Instance in = random_instance(rng, 3, 4);
    std::vector<int64_t> perm(12);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    auto permuted = [&](const Tensor& t) {
        Tensor p(t.shape());
        for (size_t i = 0; i < perm.size(); ++i) p[static_cast<int64_t>(i)] = t[perm[i]];
        return p;
    };
    Tensor pf = permuted(in.fixed), pr = permuted(in.rec), plv = permuted(in.logvar);
    Tensor d0 = Tensor::zeros(in.disp.shape());

    const double tol = 1e-9;
    CHECK(std::abs(mse_data_loss(L(in.fixed), L(in.rec)).item() -
                   mse_data_loss(L(pf), L(pr)).item()) < tol);
    CHECK(std::abs(adaptive_displacement_loss(L(in.fixed), L(in.rec), L(in.logvar), L(d0), 0.5,
                                              0.0)
                       .total.item() -
                   adaptive_displacement_loss(L(pf), L(pr), L(plv), L(d0), 0.5, 0.0)
                       .total.item()) < tol);
    CHECK(std::abs(variance_loss(L(in.fixed), L(in.rec), L(in.logvar), 0.5).item() -
                   variance_loss(L(pf), L(pr), L(plv), 0.5).item()) < tol);
    CHECK(std::abs(joint_nll_loss(L(in.fixed), L(in.rec), L(in.logvar), L(d0), 0.0)
                       .total.item() -
                   joint_nll_loss(L(pf), L(pr), L(plv), L(d0), 0.0).total.item()) < tol);
    CHECK(std::abs(adareg_loss(L(in.fixed), L(in.rec), L(d0), 0.0).total.item() -
                   adareg_loss(L(pf), L(pr), L(d0), 0.0).total.item()) < tol);
    CHECK(std::abs(adaframe_loss(L(in.fixed), L(in.rec), L(d0), 0.0).total.item() -
                   adaframe_loss(L(pf), L(pr), L(d0), 0.0).total.item()) < tol);
}
