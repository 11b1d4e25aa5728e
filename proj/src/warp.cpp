#include "hetreg/warp.hpp"

#include <cmath>

namespace hetreg::warp {

namespace {

// [S...] -> [1,1,S...]
std::vector<int64_t> as_batched_image(const std::vector<int64_t>& sp) {
    std::vector<int64_t> s{1, 1};
    s.insert(s.end(), sp.begin(), sp.end());
    return s;
}

// [R,S...] -> [1,R,S...]
std::vector<int64_t> as_batched_disp(const std::vector<int64_t>& ds) {
    std::vector<int64_t> s{1};
    s.insert(s.end(), ds.begin(), ds.end());
    return s;
}

void check_scalar_field_shapes(const Tensor& image, const Tensor& disp) {
    const int rank = image.ndim();
    if (rank < 1 || rank > 3)
        throw std::invalid_argument("warp_image: field rank must be 1..3");
    if (disp.ndim() != rank + 1 || disp.dim(0) != rank)
        throw std::invalid_argument("warp_image: displacement must be [rank, S...]");
    for (int i = 0; i < rank; ++i)
        if (disp.dim(1 + i) != image.dim(i))
            throw std::invalid_argument("warp_image: shape mismatch");
}

}  // namespace

Var warp_image(const Var& image, const Var& displacement) {
    check_scalar_field_shapes(image.value(), displacement.value());
    Var img = reshape(image, as_batched_image(image.value().shape()));
    Var dsp = reshape(displacement, as_batched_disp(displacement.value().shape()));
    Var out = warp_multilinear(img, dsp);
    return reshape(out, image.value().shape());
}

Var warp_image_batched(const Var& image, const Var& displacement) {
    return warp_multilinear(image, displacement);
}

Tensor warp_image(const Tensor& image, const Tensor& displacement) {
    return warp_image(Var::leaf(image), Var::leaf(displacement)).value();
}

Tensor warp_labels(const Tensor& mask, const Tensor& displacement) {
    check_scalar_field_shapes(mask, displacement);
    const int rank = mask.ndim();
    for (int64_t i = 0; i < mask.size(); ++i)
        if (mask[i] != 0.0 && mask[i] != 1.0)
            throw std::invalid_argument("warp_labels: mask must be {0,1}-valued");

    int64_t spatial = mask.size();
    Tensor out(mask.shape());
    std::vector<int64_t> sp = mask.shape();
    for (int64_t p = 0; p < spatial; ++p) {
        int64_t coord[3];
        int64_t rem = p;
        for (int i = rank - 1; i >= 0; --i) {
            coord[i] = rem % sp[static_cast<size_t>(i)];
            rem /= sp[static_cast<size_t>(i)];
        }
        int64_t off = 0;
        for (int a = 0; a < rank; ++a) {
            const double s = static_cast<double>(coord[a]) +
                             displacement[a * spatial + p];
            int64_t idx = static_cast<int64_t>(std::llround(s));
            if (idx < 0) idx = 0;
            if (idx > sp[static_cast<size_t>(a)] - 1) idx = sp[static_cast<size_t>(a)] - 1;
            off = off * sp[static_cast<size_t>(a)] + idx;
        }
        out[p] = mask[off];
    }
    return out;
}

std::vector<Var> spatial_gradient(const Var& field) {
    const Tensor& fv = field.value();
    if (fv.ndim() < 2 || fv.ndim() > 4)
        throw std::invalid_argument("spatial_gradient: expected [C, S...] with rank 1..3");
    for (int64_t i = 0; i < fv.size(); ++i)
        if (!std::isfinite(fv[i]))
            throw std::invalid_argument("spatial_gradient: non-finite input");
    const int rank = fv.ndim() - 1;
    std::vector<int64_t> batched{1};
    for (int64_t d : fv.shape()) batched.push_back(d);
    Var f = reshape(field, batched);
    std::vector<Var> grads;
    grads.reserve(static_cast<size_t>(rank));
    for (int a = 0; a < rank; ++a)
        grads.push_back(reshape(forward_diff(f, a), fv.shape()));
    return grads;
}

std::vector<Tensor> spatial_gradient(const Tensor& field) {
    std::vector<Tensor> out;
    for (const Var& g : spatial_gradient(Var::leaf(field))) out.push_back(g.value());
    return out;
}

}  // namespace hetreg::warp
