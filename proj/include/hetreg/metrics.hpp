#pragma once

#include <optional>
#include <vector>

#include "hetreg/tensor.hpp"

namespace hetreg::metrics {

// Contour metrics operate on {0,1}-valued masks of matching shape. Boundary
// pixels are mask pixels with an axis-neighbor outside the mask or lying on
// the image border.

// 2|A^B| / (|A| + |B|); both masks empty -> 1, exactly one empty -> 0.
double dice(const Tensor& mask_a, const Tensor& mask_b);

// Max over both directions of the largest boundary-to-boundary Euclidean
// distance (voxels). Throws on empty masks.
double hausdorff(const Tensor& mask_a, const Tensor& mask_b);

// Symmetrized mean nearest-boundary distance (voxels). Throws on empty masks.
double average_surface_distance(const Tensor& mask_a, const Tensor& mask_b);

// Mean Euclidean norm of the per-pixel displacement difference, optionally
// restricted to a mask. Fields are [ndim, S...].
double endpoint_error(const Tensor& pred, const Tensor& gt,
                      const Tensor* mask = nullptr);

// Boundary pixel coordinates (flattened index decoded per axis), exposed for
// the brute-force cross-checks in the test suites.
std::vector<std::vector<int64_t>> boundary_pixels(const Tensor& mask);

struct SparsificationCurve {
    std::vector<double> fractions;
    std::vector<double> remaining_mse;
    std::vector<double> oracle_mse;
    std::vector<double> sparsification_error;  // remaining - oracle
};

// Default removal-fraction grid: 0 to 0.98 step 0.02 (50 points).
std::vector<double> default_fraction_grid();

// For each fraction f, drop the ceil(f*n) highest-uncertainty pixels (ties
// broken by pixel index, identically for the tested and the oracle ranking)
// and record the MSE of the remainder; the oracle ranks by the squared errors
// themselves.
SparsificationCurve sparsification_curve(const std::vector<double>& squared_errors,
                                         const std::vector<double>& uncertainties,
                                         const std::vector<double>& fraction_grid);

// Trapezoidal area of (curve - oracle) over the fraction grid.
double ause(const SparsificationCurve& curve);

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    int64_t dof = 0;
};

// Two-sided paired Student t-test. Degenerate differences: all-zero -> p = 1;
// zero variance with nonzero mean -> p = 0. The p-value comes from adaptive
// quadrature over the t density rather than a statistics library.
TTestResult paired_t_test(const std::vector<double>& sample_a,
                          const std::vector<double>& sample_b);

// CDF helper used by the t-test (exposed for the oracle tests).
double student_t_cdf(double t, int64_t dof);

}  // namespace hetreg::metrics
