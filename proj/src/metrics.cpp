#include "hetreg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace hetreg::metrics {

namespace {

void check_binary(const Tensor& m, const char* what) {
    for (int64_t i = 0; i < m.size(); ++i)
        if (m[i] != 0.0 && m[i] != 1.0)
            throw std::invalid_argument(std::string(what) + ": mask must be {0,1}-valued");
}

}  // namespace

double dice(const Tensor& mask_a, const Tensor& mask_b) {
    require_same_shape(mask_a, mask_b, "dice");
    check_binary(mask_a, "dice");
    check_binary(mask_b, "dice");
    int64_t inter = 0, na = 0, nb = 0;
    for (int64_t i = 0; i < mask_a.size(); ++i) {
        na += mask_a[i] != 0.0;
        nb += mask_b[i] != 0.0;
        inter += (mask_a[i] != 0.0 && mask_b[i] != 0.0);
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

std::vector<std::vector<int64_t>> boundary_pixels(const Tensor& mask) {
    const int rank = mask.ndim();
    std::vector<std::vector<int64_t>> out;
    for (int64_t idx = 0; idx < mask.size(); ++idx) {
        if (mask[idx] == 0.0) continue;
        std::vector<int64_t> coord(static_cast<size_t>(rank));
        int64_t rem = idx;
        for (int a = rank - 1; a >= 0; --a) {
            coord[static_cast<size_t>(a)] = rem % mask.dim(a);
            rem /= mask.dim(a);
        }
        bool boundary = false;
        for (int a = 0; a < rank && !boundary; ++a) {
            for (int d : {-1, +1}) {
                const int64_t c = coord[static_cast<size_t>(a)] + d;
                if (c < 0 || c >= mask.dim(a)) {
                    boundary = true;  // on the image border inside the mask
                    break;
                }
                int64_t off = 0;
                for (int b = 0; b < rank; ++b) {
                    const int64_t cb = (b == a) ? c : coord[static_cast<size_t>(b)];
                    off = off * mask.dim(b) + cb;
                }
                if (mask[off] == 0.0) {
                    boundary = true;
                    break;
                }
            }
        }
        if (boundary) out.push_back(std::move(coord));
    }
    return out;
}

namespace {

double sq_dist(const std::vector<int64_t>& a, const std::vector<int64_t>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i] - b[i]);
        s += d * d;
    }
    return s;
}

// per-point nearest distances from A's boundary to B's boundary
std::vector<double> nearest_distances(const std::vector<std::vector<int64_t>>& from,
                                      const std::vector<std::vector<int64_t>>& to) {
    std::vector<double> out;
    out.reserve(from.size());
    for (const auto& p : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : to) best = std::min(best, sq_dist(p, q));
        out.push_back(std::sqrt(best));
    }
    return out;
}

std::pair<std::vector<std::vector<int64_t>>, std::vector<std::vector<int64_t>>>
boundaries_checked(const Tensor& a, const Tensor& b, const char* what) {
    require_same_shape(a, b, what);
    check_binary(a, what);
    check_binary(b, what);
    auto ba = boundary_pixels(a);
    auto bb = boundary_pixels(b);
    if (ba.empty() || bb.empty())
        throw std::invalid_argument(std::string(what) + ": undefined for an empty mask");
    return {std::move(ba), std::move(bb)};
}

}  // namespace

double hausdorff(const Tensor& mask_a, const Tensor& mask_b) {
    auto [ba, bb] = boundaries_checked(mask_a, mask_b, "hausdorff");
    const auto dab = nearest_distances(ba, bb);
    const auto dba = nearest_distances(bb, ba);
    const double h1 = *std::max_element(dab.begin(), dab.end());
    const double h2 = *std::max_element(dba.begin(), dba.end());
    return std::max(h1, h2);
}

double average_surface_distance(const Tensor& mask_a, const Tensor& mask_b) {
    auto [ba, bb] = boundaries_checked(mask_a, mask_b, "average_surface_distance");
    const auto dab = nearest_distances(ba, bb);
    const auto dba = nearest_distances(bb, ba);
    const double m1 = std::accumulate(dab.begin(), dab.end(), 0.0) /
                      static_cast<double>(dab.size());
    const double m2 = std::accumulate(dba.begin(), dba.end(), 0.0) /
                      static_cast<double>(dba.size());
    return 0.5 * (m1 + m2);
}

double endpoint_error(const Tensor& pred, const Tensor& gt, const Tensor* mask) {
    require_same_shape(pred, gt, "endpoint_error");
    const int64_t comp = pred.dim(0);
    const int64_t sp = pred.spatial_size(1);
    if (mask) {
        if (mask->size() != sp)
            throw std::invalid_argument("endpoint_error: mask shape mismatch");
        check_binary(*mask, "endpoint_error");
    }
    double acc = 0.0;
    int64_t count = 0;
    for (int64_t p = 0; p < sp; ++p) {
        if (mask && (*mask)[p] == 0.0) continue;
        double n2 = 0.0;
        for (int64_t c = 0; c < comp; ++c) {
            const double d = pred[c * sp + p] - gt[c * sp + p];
            n2 += d * d;
        }
        acc += std::sqrt(n2);
        ++count;
    }
    if (count == 0) throw std::invalid_argument("endpoint_error: empty mask");
    return acc / static_cast<double>(count);
}

std::vector<double> default_fraction_grid() {
    std::vector<double> g;
    for (int i = 0; i < 50; ++i) g.push_back(0.02 * i);
    return g;
}

namespace {

// indices sorted by key descending, ties by index ascending
std::vector<int64_t> rank_desc(const std::vector<double>& key) {
    std::vector<int64_t> idx(key.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
        return key[static_cast<size_t>(a)] > key[static_cast<size_t>(b)];
    });
    return idx;
}

// remaining-MSE after removing the first k ranked pixels, for each fraction
std::vector<double> remaining_curve(const std::vector<double>& sq_err,
                                    const std::vector<int64_t>& order,
                                    const std::vector<double>& fractions) {
    const int64_t n = static_cast<int64_t>(sq_err.size());
    // suffix sums over the ranked order: total error of pixels ranked >= k
    std::vector<double> suffix(static_cast<size_t>(n) + 1, 0.0);
    for (int64_t k = n - 1; k >= 0; --k)
        suffix[static_cast<size_t>(k)] =
            suffix[static_cast<size_t>(k) + 1] + sq_err[static_cast<size_t>(order[static_cast<size_t>(k)])];
    std::vector<double> out;
    out.reserve(fractions.size());
    for (double f : fractions) {
        const int64_t remove = std::min<int64_t>(
            n, static_cast<int64_t>(std::ceil(f * static_cast<double>(n) - 1e-12)));
        const int64_t left = n - remove;
        out.push_back(left > 0 ? suffix[static_cast<size_t>(remove)] / static_cast<double>(left)
                               : 0.0);
    }
    return out;
}

}  // namespace

SparsificationCurve sparsification_curve(const std::vector<double>& squared_errors,
                                         const std::vector<double>& uncertainties,
                                         const std::vector<double>& fraction_grid) {
    if (squared_errors.empty())
        throw std::invalid_argument("sparsification_curve: empty input");
    if (squared_errors.size() != uncertainties.size())
        throw std::invalid_argument("sparsification_curve: length mismatch");
    if (fraction_grid.empty() || fraction_grid.front() != 0.0)
        throw std::invalid_argument("sparsification_curve: grid must start at 0");
    for (size_t i = 1; i < fraction_grid.size(); ++i)
        if (fraction_grid[i] <= fraction_grid[i - 1] || fraction_grid[i] > 1.0)
            throw std::invalid_argument("sparsification_curve: grid must increase within [0,1]");

    SparsificationCurve c;
    c.fractions = fraction_grid;
    c.remaining_mse = remaining_curve(squared_errors, rank_desc(uncertainties), fraction_grid);
    c.oracle_mse = remaining_curve(squared_errors, rank_desc(squared_errors), fraction_grid);
    c.sparsification_error.resize(fraction_grid.size());
    for (size_t i = 0; i < fraction_grid.size(); ++i)
        c.sparsification_error[i] = c.remaining_mse[i] - c.oracle_mse[i];
    return c;
}

double ause(const SparsificationCurve& curve) {
    double area = 0.0;
    for (size_t i = 1; i < curve.fractions.size(); ++i) {
        const double h = curve.fractions[i] - curve.fractions[i - 1];
        area += 0.5 * h * (curve.sparsification_error[i] + curve.sparsification_error[i - 1]);
    }
    return area;
}

namespace {

// adaptive Simpson quadrature
double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double fa,
                        double fb, double fm, double whole, double tol, int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = f(lm), frm = f(rm);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if (depth <= 0 || std::abs(left + right - whole) < 15.0 * tol)
        return left + right + (left + right - whole) / 15.0;
    return adaptive_simpson(f, a, m, fa, fm, flm, left, tol * 0.5, depth - 1) +
           adaptive_simpson(f, m, b, fm, fb, frm, right, tol * 0.5, depth - 1);
}

double integrate(const std::function<double(double)>& f, double a, double b, double tol) {
    const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return adaptive_simpson(f, a, b, fa, fb, fm, whole, tol, 40);
}

}  // namespace

double student_t_cdf(double t, int64_t dof) {
    if (dof < 1) throw std::invalid_argument("student_t_cdf: dof must be >= 1");
    const double v = static_cast<double>(dof);
    const double log_norm =
        std::lgamma(0.5 * (v + 1.0)) - std::lgamma(0.5 * v) - 0.5 * std::log(v * 3.14159265358979323846);
    const auto pdf = [&](double x) {
        return std::exp(log_norm - 0.5 * (v + 1.0) * std::log1p(x * x / v));
    };
    const double at = std::abs(t);
    const double half = integrate(pdf, 0.0, at, 1e-12);
    return t >= 0.0 ? 0.5 + half : 0.5 - half;
}

TTestResult paired_t_test(const std::vector<double>& sample_a,
                          const std::vector<double>& sample_b) {
    if (sample_a.size() != sample_b.size())
        throw std::invalid_argument("paired_t_test: length mismatch");
    const int64_t n = static_cast<int64_t>(sample_a.size());
    if (n < 2) throw std::invalid_argument("paired_t_test: need at least 2 pairs");

    double mean_d = 0.0;
    for (size_t i = 0; i < sample_a.size(); ++i) mean_d += sample_a[i] - sample_b[i];
    mean_d /= static_cast<double>(n);
    double ss = 0.0;
    for (size_t i = 0; i < sample_a.size(); ++i) {
        const double d = sample_a[i] - sample_b[i] - mean_d;
        ss += d * d;
    }
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));

    TTestResult r;
    r.dof = n - 1;
    if (sd == 0.0) {
        if (mean_d == 0.0) {
            r.t = 0.0;
            r.p = 1.0;
        } else {
            r.t = mean_d > 0.0 ? std::numeric_limits<double>::infinity()
                               : -std::numeric_limits<double>::infinity();
            r.p = 0.0;
        }
        return r;
    }
    r.t = mean_d / (sd / std::sqrt(static_cast<double>(n)));
    r.p = 2.0 * (1.0 - student_t_cdf(std::abs(r.t), r.dof));
    r.p = std::clamp(r.p, 0.0, 1.0);
    return r;
}

}  // namespace hetreg::metrics
