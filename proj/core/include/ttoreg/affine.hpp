#pragma once

// Minimal 12-parameter affine pre-alignment maximising global NCC.
//
// Parameters: p[0..8] is the row-major 3x3 linear part A and p[9..11] the
// translation t, acting about the grid centre c:
//   x -> c + A (x - c) + t,   i.e. u(x) = (A - I)(x - c) + t.

#include <array>

#include "ttoreg/volume.hpp"

namespace ttoreg {

using AffineParams = std::array<double, 12>;

AffineParams identity_affine();

/// Sampling field of an affine transform on a grid of the given shape.
Field3D affine_field(const AffineParams& p, const Shape3& shape);

struct AffineResult {
  Volume3D warped;
  AffineParams params{};
  double ncc_before = 0.0;  // ncc_loss at identity
  double ncc_after = 0.0;   // ncc_loss at the returned parameters
  bool fell_back = false;   // optimisation did not improve NCC; identity returned
  int iterations = 0;
};

/// Gradient descent with backtracking on ncc_loss of lightly smoothed
/// copies; never returns parameters whose NCC loss on the original images is
/// worse than identity. Throws std::runtime_error on a non-finite loss.
AffineResult affine_prealign(const Volume3D& fixed, const Volume3D& moving, int iters = 100,
                             double smoothing_sigma = 1.0);

}  // namespace ttoreg
