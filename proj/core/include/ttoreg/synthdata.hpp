#pragma once

// Synthetic multi-modal training pairs: noise-driven label maps, a smooth
// B-spline deformation and randomised per-label rendering.
//
// Pipeline for generate_pair(seed):
//   labels  = sample_label_map(...)                     fixed anatomy
//   gt_ddf  = random_bspline_ddf(...)                   sampling field on the fixed grid
//   moving labels = labels resampled through the inverse of gt_ddf, so
//                   warp(moving, gt_ddf) ~ fixed
//   fixed, moving rendered with independent modality seeds.

#include <cstdint>
#include <vector>

#include "ttoreg/volume.hpp"

namespace ttoreg {

/// splitmix64 of (seed, stream): independent sub-seeds from one seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

struct LabelMap {
  Shape3 shape{};
  int num_labels = 0;
  std::vector<std::uint8_t> labels;

  int present_count() const;
  std::size_t count(int id) const;
  Mask3D mask(int id) const;
  Volume3D as_volume() const;
  static LabelMap from_volume(const Volume3D& v, int num_labels);
};

/// Argmax over num_labels smooth two-scale noise fields (B-spline lattices at
/// 16 and 8 voxels). Labels covering < 0.5% of the grid are merged into each
/// voxel's next-best label while more than two labels remain.
LabelMap sample_label_map(std::uint64_t seed, const Shape3& shape, int num_labels, double label_scale = 16.0);

/// Control displacements ~ N(0, sigma^2), redrawn beyond 4 sigma, on a
/// lattice of the given spacing, upsampled by cubic B-splines. Component c is
/// then multiplied by a smoothstep taper along axis c that is 0 on the two
/// faces normal to that axis and 1 from control_spacing inwards, so no
/// sample position leaves the grid through a face.
///
/// Bounds (B-spline weights are a partition of unity and their derivative
/// weights have absolute sum <= 1 per unit knot interval; the taper slope is
/// at most 1.5 / control_spacing):
///   |u_c(x)| <= 4 sigma
///   |forward difference of u_c along axis a| <= 4 sigma / control_spacing
///   for a != c, and <= 10 sigma / control_spacing for a == c
///   so the per-voxel Frobenius norm of the difference Jacobian is at most
///   sqrt(3 * 100 + 6 * 16) < kDdfGradientBound times sigma / control_spacing.
inline constexpr double kDdfGradientBound = 20.0;
Field3D random_bspline_ddf(std::uint64_t seed, const Shape3& shape, double control_spacing, double sigma);

/// Inverse of a sampling field by fixed-point iteration v(y) = -u(y + v(y)).
Field3D invert_field(const Field3D& u, int iterations = 20);

struct RenderConfig {
  bool blur = true;
  double blur_min = 0.5, blur_max = 1.5;  // voxels
  bool noise = true;
  double noise_max = 0.05;
  bool bias = true;
  double bias_min = 0.8, bias_max = 1.25;
  bool gamma = true;
  double gamma_min = 0.5, gamma_max = 2.0;

  void validate() const;
};

/// Per-label means ~ U[0,1] from modality_seed; blur width, noise level,
/// bias field and gamma from seed. Output clamped to [0, 1].
Volume3D render_intensity(const LabelMap& labels, std::uint64_t seed, std::uint64_t modality_seed,
                          const RenderConfig& cfg = {});

struct GeneratorConfig {
  Shape3 shape{64, 64, 64};
  int num_labels = 8;
  double label_scale = 16.0;  // coarse noise lattice spacing of the label map
  double control_spacing = 8.0;
  double sigma = 2.0;
  RenderConfig render;

  void validate() const;
};

struct SyntheticPair {
  Volume3D fixed;
  Volume3D moving;
  Field3D gt_ddf;
  LabelMap fixed_labels;
  LabelMap moving_labels;
  std::uint64_t seed = 0;
};

SyntheticPair generate_pair(std::uint64_t seed, const GeneratorConfig& cfg);

}  // namespace ttoreg
