#pragma once

// Differentiable similarity and regularisation terms. Every loss is "lower
// is better". Functions that take gradient pointers accumulate
// `scale * dLoss/dInput` into them; pass nullptr to skip a gradient.

#include <span>

#include "ttoreg/volume.hpp"

namespace ttoreg {

struct LossWeights {
  double lambda_sim = 1.0;
  double lambda_smooth = 0.1;
  double lambda_dist = 1.0;
  double alpha_div = 0.1;
  int bins = 32;
  /// Parzen kernel width in normalised-intensity units (default half a bin).
  double parzen_sigma = 0.5 / 32.0;

  void validate() const;
};

/// Gaussian soft-binned mutual information (nats) between two equally sized
/// samples with values in [0, 1]. Bin centres sit at (k + 0.5) / bins.
template <typename T>
double soft_mi_2d(std::span<const T> a, std::span<const T> b, int bins, double parzen_sigma,
                  std::span<T> grad_a = {}, std::span<T> grad_b = {}, double scale = 1.0);

/// Entropy (nats) of the soft-binned marginal histogram of a.
template <typename T>
double soft_entropy(std::span<const T> a, int bins, double parzen_sigma);

/// -(1 / (nx + ny + nz)) * sum of slice-wise soft MI over every slice along
/// each of the three axes.
template <typename T>
double multi_axis_mi(const BasicVolume<T>& fixed, const BasicVolume<T>& warped, const LossWeights& cfg,
                     BasicVolume<T>* grad_fixed = nullptr, BasicVolume<T>* grad_warped = nullptr,
                     double scale = 1.0);

/// Negative global Pearson correlation. Two constant inputs give 0.
template <typename T>
double ncc_loss(const BasicVolume<T>& fixed, const BasicVolume<T>& warped, BasicVolume<T>* grad_fixed = nullptr,
                BasicVolume<T>* grad_warped = nullptr, double scale = 1.0);

/// Mean over voxels of the squared forward differences, summed over the 3
/// components and 3 axes.
template <typename T>
double smoothness(const DisplacementField<T>& u, DisplacementField<T>* grad_u = nullptr, double scale = 1.0);

/// Mean over voxels of (div u)^2. The alpha_div weight is applied by callers.
template <typename T>
double divergence_penalty(const DisplacementField<T>& u, DisplacementField<T>* grad_u = nullptr,
                          double scale = 1.0);

/// Term breakdown of a composite objective; `total` is the weighted sum.
struct LossTerms {
  double similarity = 0.0;  // multi-axis MI against the fixed image
  double ncc = 0.0;
  double distill = 0.0;     // multi-axis MI against the teacher-warped image
  double smooth = 0.0;
  double div = 0.0;
  double total = 0.0;
};

/// lambda_sim * MI(fixed, warp(moving, u)) + lambda_smooth * smoothness(u).
template <typename T>
LossTerms pretrain_loss(const BasicVolume<T>& fixed, const BasicVolume<T>& moving, const DisplacementField<T>& u,
                        const LossWeights& cfg, DisplacementField<T>* grad_u = nullptr);

/// lambda_dist * MI(warp(moving, u_T), warp(moving, u_S))
///   + lambda_sim * MI(fixed, warp(moving, u_S)) + lambda_smooth * smoothness(u_S).
/// The teacher field is a constant: no gradient is produced for it.
template <typename T>
LossTerms kd_loss(const BasicVolume<T>& fixed, const BasicVolume<T>& moving, const DisplacementField<T>& u_teacher,
                  const DisplacementField<T>& u_student, const LossWeights& cfg,
                  DisplacementField<T>* grad_u_student = nullptr);

/// lambda_sim * (MI + NCC) + lambda_smooth * smoothness(u) + alpha_div * divergence_penalty(u).
template <typename T>
LossTerms tto_loss(const BasicVolume<T>& fixed, const BasicVolume<T>& moving, const DisplacementField<T>& u,
                   const LossWeights& cfg, DisplacementField<T>* grad_u = nullptr);

}  // namespace ttoreg
