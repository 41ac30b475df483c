#pragma once

// Finite-difference operators. Forward differences in voxel units; the last
// slice along each axis uses a replicate boundary, so its difference is 0.

#include <array>
#include <span>

#include "ttoreg/volume.hpp"

namespace ttoreg {

/// d[i] = g[i + e_axis] - g[i], zero on the last slice.
template <typename T>
void forward_difference(std::span<const T> g, const Shape3& s, int axis, std::span<T> out);

/// Adds the adjoint of forward_difference applied to h into out.
template <typename T>
void forward_difference_adjoint_add(std::span<const T> h, const Shape3& s, int axis, std::span<T> out);

/// Per-axis differences of a scalar grid: result[axis].
template <typename T>
std::array<BasicVolume<T>, 3> spatial_gradient(const BasicVolume<T>& g);

/// Per-axis differences of each component: result[3 * component + axis].
template <typename T>
std::array<BasicVolume<T>, 9> spatial_gradient(const DisplacementField<T>& u);

/// du_x/dx + du_y/dy + du_z/dz with the same difference scheme.
template <typename T>
BasicVolume<T> divergence(const DisplacementField<T>& u);

}  // namespace ttoreg
