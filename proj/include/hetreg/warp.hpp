#pragma once

#include <vector>

#include "hetreg/autodiff.hpp"
#include "hetreg/tensor.hpp"

namespace hetreg::warp {

// Pull-warp convention throughout: output(x) samples the source at x + z(x).
// Sample coordinates falling outside the grid are clamped to the border.
// Displacements are in pixel/voxel units; component c of the field displaces
// along spatial axis c of the row-major layout.

// Differentiable warp of a scalar field. image: [S...] (rank 1..3),
// displacement: [R, S...]. Differentiable in both arguments.
Var warp_image(const Var& image, const Var& displacement);

// Batched form used by the models: image [N,C,S...], displacement [N,R,S...].
Var warp_image_batched(const Var& image, const Var& displacement);

// Plain-tensor convenience (no gradients recorded).
Tensor warp_image(const Tensor& image, const Tensor& displacement);

// Nearest-neighbor warp of a {0,1}-valued mask; output stays {0,1}-valued.
Tensor warp_labels(const Tensor& mask, const Tensor& displacement);

// Forward differences along every spatial axis; the last slice along each axis
// is replicated so each output keeps the input shape (zeros in the final
// position). field: [C, S...] with C components (C = 1 for scalar fields).
// Returns one same-shape tensor per spatial axis.
std::vector<Var> spatial_gradient(const Var& field);
std::vector<Tensor> spatial_gradient(const Tensor& field);

}  // namespace hetreg::warp
