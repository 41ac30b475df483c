#include "ttoreg/affine.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ttoreg/losses.hpp"
#include "ttoreg/resample.hpp"
#include "ttoreg/warp.hpp"

namespace ttoreg {

namespace {

// Optimisation variables: q[0..8] = (A - I) * r and q[9..11] = t, with
// coordinates normalised by r = half the largest extent, so that every
// variable is measured in voxels.
using Vars = std::array<double, 12>;

struct Frame {
  std::array<double, 3> c;
  double r;
};

Frame frame_of(const Shape3& s) {
  return {{(s.nx - 1) / 2.0, (s.ny - 1) / 2.0, (s.nz - 1) / 2.0}, std::max({s.nx, s.ny, s.nz}) / 2.0};
}

AffineParams to_params(const Vars& q, const Frame& f) {
  AffineParams p{};
  for (int i = 0; i < 9; ++i) p[i] = q[i] / f.r + (i % 4 == 0 ? 1.0 : 0.0);
  for (int i = 9; i < 12; ++i) p[i] = q[i];
  return p;
}

template <typename T>
DisplacementField<T> field_from_vars(const Vars& q, const Shape3& s, const Frame& f) {
  DisplacementField<T> u(s);
  std::size_t i = 0;
  for (int z = 0; z < s.nz; ++z)
    for (int y = 0; y < s.ny; ++y)
      for (int x = 0; x < s.nx; ++x, ++i) {
        const double xn[3] = {(x - f.c[0]) / f.r, (y - f.c[1]) / f.r, (z - f.c[2]) / f.r};
        for (int c = 0; c < 3; ++c) {
          u.component(c)[i] = static_cast<T>(q[3 * c] * xn[0] + q[3 * c + 1] * xn[1] + q[3 * c + 2] * xn[2] + q[9 + c]);
        }
      }
  return u;
}

double cost(const BasicVolume<double>& fixed, const BasicVolume<double>& moving, const Vars& q, const Frame& f,
            Vars* grad) {
  const auto u = field_from_vars<double>(q, fixed.shape(), f);
  const auto warped = warp(moving, u);
  if (!grad) return ncc_loss(fixed, warped);
  BasicVolume<double> gw(fixed.shape());
  const double loss = ncc_loss(fixed, warped, static_cast<BasicVolume<double>*>(nullptr), &gw);
  DisplacementField<double> gu(fixed.shape());
  warp_backward<double>(moving, u, gw.values(), &gu, nullptr);
  grad->fill(0.0);
  const Shape3 s = fixed.shape();
  std::size_t i = 0;
  for (int z = 0; z < s.nz; ++z)
    for (int y = 0; y < s.ny; ++y)
      for (int x = 0; x < s.nx; ++x, ++i) {
        const double xn[3] = {(x - f.c[0]) / f.r, (y - f.c[1]) / f.r, (z - f.c[2]) / f.r};
        for (int c = 0; c < 3; ++c) {
          const double g = gu.component(c)[i];
          (*grad)[3 * c] += g * xn[0];
          (*grad)[3 * c + 1] += g * xn[1];
          (*grad)[3 * c + 2] += g * xn[2];
          (*grad)[9 + c] += g;
        }
      }
  return loss;
}

}  // namespace

AffineParams identity_affine() {
  AffineParams p{};
  p[0] = p[4] = p[8] = 1.0;
  return p;
}

Field3D affine_field(const AffineParams& p, const Shape3& shape) {
  const Frame f = frame_of(shape);
  Vars q{};
  for (int i = 0; i < 9; ++i) q[i] = (p[i] - (i % 4 == 0 ? 1.0 : 0.0)) * f.r;
  for (int i = 9; i < 12; ++i) q[i] = p[i];
  return field_from_vars<float>(q, shape, f);
}

AffineResult affine_prealign(const Volume3D& fixed, const Volume3D& moving, int iters, double smoothing_sigma) {
  require_same_shape(fixed.shape(), moving.shape(), "affine_prealign");
  if (iters < 0) throw std::invalid_argument("affine_prealign: iters must be >= 0");
  const Frame f = frame_of(fixed.shape());
  const auto fd = fixed.cast<double>();
  const auto md = moving.cast<double>();
  const auto fs = gaussian_blur(fd, smoothing_sigma);
  const auto ms = gaussian_blur(md, smoothing_sigma);

  Vars q{}, g{};
  double current = cost(fs, ms, q, f, &g);
  if (!std::isfinite(current)) throw std::runtime_error("affine_prealign: non-finite NCC loss at identity");
  double step = 1.0;  // voxels
  int it = 0;
  for (; it < iters && step >= 1e-3; ++it) {
    double norm = 0.0;
    for (double v : g) norm += v * v;
    norm = std::sqrt(norm);
    if (!(norm > 0.0)) break;
    bool accepted = false;
    while (step >= 1e-3) {
      Vars trial = q;
      for (int i = 0; i < 12; ++i) trial[i] -= step * g[i] / norm;
      const double c = cost(fs, ms, trial, f, nullptr);
      if (!std::isfinite(c)) throw std::runtime_error("affine_prealign: non-finite NCC loss during optimisation");
      if (c < current) {
        q = trial;
        step *= 1.5;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    current = cost(fs, ms, q, f, &g);
  }

  AffineResult res;
  res.iterations = it;
  const Vars zero{};
  res.ncc_before = cost(fd, md, zero, f, nullptr);
  const double after = cost(fd, md, q, f, nullptr);
  if (!std::isfinite(after)) throw std::runtime_error("affine_prealign: non-finite NCC loss for the result");
  if (after < res.ncc_before) {
    res.params = to_params(q, f);
    res.ncc_after = after;
  } else {
    res.params = identity_affine();
    res.ncc_after = res.ncc_before;
    res.fell_back = true;
  }
  res.warped = warp(moving, affine_field(res.params, fixed.shape()));
  res.warped.set_spacing(moving.spacing());
  res.warped.set_native(moving.native());
  return res;
}

}  // namespace ttoreg
