#pragma once

#include <span>

#include "ttoreg/volume.hpp"

namespace ttoreg {

/// out(x) = moving(x + u(x)), trilinear. Each of the eight interpolation
/// corners that falls outside the grid contributes zero.
template <typename T>
BasicVolume<T> warp(const BasicVolume<T>& moving, const DisplacementField<T>& u);

/// Adjoint of warp. Accumulates dL/du and/or dL/dmoving given dL/dout.
/// Either output may be null.
template <typename T>
void warp_backward(const BasicVolume<T>& moving, const DisplacementField<T>& u, std::span<const T> grad_out,
                   DisplacementField<T>* grad_u, BasicVolume<T>* grad_moving);

/// Nearest-neighbour warp for label maps; out-of-grid samples clamp to the border.
template <typename T>
BasicVolume<T> warp_nearest(const BasicVolume<T>& labels, const DisplacementField<T>& u);

/// Trilinear sample with zero padding at a continuous voxel position.
template <typename T>
T sample_trilinear_zero(const BasicVolume<T>& vol, double x, double y, double z);

/// Trilinear sample with border clamping.
template <typename T>
T sample_trilinear_clamped(std::span<const T> data, const Shape3& shape, double x, double y, double z);

}  // namespace ttoreg
