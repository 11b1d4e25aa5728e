#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hetreg/warp.hpp"
#include "test_support.hpp"

using namespace hetreg;
using testsupport::max_grad_rel_error;

TEST_CASE("zero displacement reproduces the input exactly") {
    RandomStream rng(5);
    for (auto shape : std::vector<std::vector<int64_t>>{{7}, {5, 6}, {4, 5, 3}}) {
        Tensor img = testsupport::random_tensor(shape, rng, 0.0, 1.0);
        std::vector<int64_t> dshape{static_cast<int64_t>(shape.size())};
        dshape.insert(dshape.end(), shape.begin(), shape.end());
        Tensor zero(dshape);
        Tensor out = warp::warp_image(img, zero);
        for (int64_t i = 0; i < img.size(); ++i)
            CHECK(std::abs(out[i] - img[i]) <= 1e-6);
    }
}

TEST_CASE("1d ramp, +0.5 shift at pixel 0 interpolates to 0.5") {
    Tensor img({2}, {0.0, 1.0});
    Tensor d({1, 2}, {0.5, 0.0});
    Tensor out = warp::warp_image(img, d);
    CHECK(out[0] == doctest::Approx(0.5));
    CHECK(out[1] == doctest::Approx(1.0));
}

TEST_CASE("2d linear image under unit shift along x") {
    // I(x,y) = x/(W-1) on a 4x4 grid; displacement (+1, 0) along the x axis.
    const int64_t H = 4, W = 4;
    Tensor img({H, W});
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) img[y * W + x] = static_cast<double>(x) / 3.0;
    Tensor d({2, H, W});
    for (int64_t p = 0; p < H * W; ++p) d[H * W + p] = 1.0;  // component 1 = x axis

    Tensor out = warp::warp_image(img, d);
    for (int64_t y = 0; y < H; ++y) {
        for (int64_t x = 0; x < W - 1; ++x)
            CHECK(out[y * W + x] == doctest::Approx((static_cast<double>(x) + 1.0) / 3.0));
        // border replication clamps the rightmost column to the edge value
        CHECK(out[y * W + W - 1] == doctest::Approx(1.0));
    }
}

TEST_CASE("warp_image is linear in the image argument") {
    RandomStream rng(17);
    Tensor i1 = testsupport::random_tensor({6, 5}, rng, 0.0, 1.0);
    Tensor i2 = testsupport::random_tensor({6, 5}, rng, 0.0, 1.0);
    Tensor d({2, 6, 5});
    for (int64_t i = 0; i < d.size(); ++i) d[i] = rng.uniform(-1.5, 1.5);

    const double a = 0.37, b = -1.21;
    Tensor combo({6, 5});
    for (int64_t i = 0; i < combo.size(); ++i) combo[i] = a * i1[i] + b * i2[i];
    Tensor w_combo = warp::warp_image(combo, d);
    Tensor w1 = warp::warp_image(i1, d);
    Tensor w2 = warp::warp_image(i2, d);
    for (int64_t i = 0; i < combo.size(); ++i)
        CHECK(std::abs(w_combo[i] - (a * w1[i] + b * w2[i])) <= 1e-6);
}

TEST_CASE("warp gradient w.r.t. displacement matches central differences") {
    RandomStream rng(19);
    Tensor img = testsupport::smooth_random_field({6, 7}, rng, 0.0, 1.0);
    Tensor d0({2, 6, 7});
    for (int64_t i = 0; i < d0.size(); ++i) d0[i] = rng.uniform(-0.7, 0.7) + 0.11;

    Var dv = Var::leaf(d0, true);
    Var y = mean(square(warp::warp_image(Var::leaf(img), dv)));
    y.backward();
    const auto f = [&](const Tensor& t) {
        return mean(square(warp::warp_image(Var::leaf(img), Var::leaf(t)))).item();
    };
    CHECK(max_grad_rel_error(f, d0, dv.grad(), 1e-4) < 1e-3);
}

TEST_CASE("warp_labels identity, rounding, and single-pixel shift") {
    Tensor mask({1, 5}, {0.0, 0.0, 1.0, 0.0, 0.0});
    Tensor zero({2, 1, 5});
    Tensor out0 = warp::warp_labels(mask, zero);
    for (int64_t i = 0; i < 5; ++i) CHECK(out0[i] == mask[i]);

    // +0.4 px rounds to 0: unchanged
    Tensor d04({2, 1, 5});
    for (int64_t p = 0; p < 5; ++p) d04[5 + p] = 0.4;
    Tensor out04 = warp::warp_labels(mask, d04);
    for (int64_t i = 0; i < 5; ++i) CHECK(out04[i] == mask[i]);

    // +1.0 px: output column x samples source column x+1, support moves left
    Tensor d1({2, 1, 5});
    for (int64_t p = 0; p < 5; ++p) d1[5 + p] = 1.0;
    Tensor out1 = warp::warp_labels(mask, d1);
    CHECK(out1[1] == 1.0);
    CHECK(out1[2] == 0.0);
}

TEST_CASE("warp_labels output stays binary for arbitrary displacements") {
    RandomStream rng(23);
    Tensor mask({8, 8});
    for (int64_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
    Tensor d({2, 8, 8});
    for (int64_t i = 0; i < d.size(); ++i) d[i] = rng.uniform(-3.0, 3.0);
    Tensor out = warp::warp_labels(mask, d);
    for (int64_t i = 0; i < out.size(); ++i) CHECK((out[i] == 0.0 || out[i] == 1.0));
}

TEST_CASE("warp_labels rejects non-binary masks") {
    Tensor mask({1, 3}, {0.0, 0.5, 1.0});
    Tensor d({2, 1, 3});
    CHECK_THROWS_AS(warp::warp_labels(mask, d), std::invalid_argument);
}

TEST_CASE("shape mismatch raises invalid_argument") {
    Tensor img({4, 4});
    Tensor d({2, 5, 4});
    CHECK_THROWS_AS(warp::warp_image(img, d), std::invalid_argument);
}

TEST_CASE("spatial_gradient of constant and linear fields") {
    Tensor c = Tensor::full({1, 4, 4}, 3.25);
    auto gc = warp::spatial_gradient(c);
    REQUIRE(gc.size() == 2);
    for (const Tensor& g : gc)
        for (int64_t i = 0; i < g.size(); ++i) CHECK(g[i] == 0.0);

    // z(x) = a*x along axis 1: interior gradient equals a
    const double a = 0.75;
    Tensor lin({1, 3, 5});
    for (int64_t y = 0; y < 3; ++y)
        for (int64_t x = 0; x < 5; ++x) lin[y * 5 + x] = a * static_cast<double>(x);
    auto gl = warp::spatial_gradient(lin);
    for (int64_t y = 0; y < 3; ++y)
        for (int64_t x = 0; x + 1 < 5; ++x)
            CHECK(gl[1][y * 5 + x] == doctest::Approx(a));
    for (int64_t y = 0; y < 3; ++y) CHECK(gl[1][y * 5 + 4] == 0.0);

    // [0,1,3] -> forward diffs [1,2,0]
    Tensor v({1, 3}, {0.0, 1.0, 3.0});
    auto gv = warp::spatial_gradient(v);
    CHECK(gv[0][0] == doctest::Approx(1.0));
    CHECK(gv[0][1] == doctest::Approx(2.0));
    CHECK(gv[0][2] == 0.0);
}
