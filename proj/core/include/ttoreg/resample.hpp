#pragma once

#include <utility>

#include "ttoreg/volume.hpp"

namespace ttoreg {

/// Affine min-max rescale to [0, 1]; a constant volume maps to all zeros.
template <typename T>
BasicVolume<T> normalize_intensity(const BasicVolume<T>& vol);

/// Separable Gaussian smoothing, kernel truncated at 3 sigma, border clamped.
/// sigma <= 0 returns a copy.
template <typename T>
BasicVolume<T> gaussian_blur(const BasicVolume<T>& vol, double sigma);

/// Nearest multiple of 16, ties rounded up, never below 16.
int nearest_multiple_of_16(int n);
/// Smallest multiple of 16 that is >= n.
int ceil_multiple_of_16(int n);

/// Resamples onto a new grid covering the same field of view (voxel-centre
/// aligned). Out-of-range sample positions clamp to the border.
Volume3D resample(const Volume3D& vol, Shape3 target, ResampleMethod method = ResampleMethod::Trilinear);

/// Brings every dimension to a multiple of 16 so the U-Net can pool three
/// times. Resample mode rounds to the nearest multiple (ties up); pad mode
/// zero-pads, centred, up to the next multiple because it cannot shrink.
std::pair<Volume3D, ResampleRecord> pad_or_resample_for_network(const Volume3D& vol,
                                                                ResizeMode mode = ResizeMode::Resample);

/// Inverse of pad_or_resample_for_network: crop (pad mode) or trilinear
/// resample (resample mode) back to the recorded native geometry.
Volume3D restore_native(const Volume3D& vol, const ResampleRecord& rec);

/// Brings a displacement field computed on the network grid back to the
/// native grid, rescaling each component to native voxel units.
Field3D restore_native_field(const Field3D& field, const ResampleRecord& rec);

}  // namespace ttoreg
