#include "ttoreg/diffops.hpp"

#include <algorithm>

namespace ttoreg {

namespace {

void require_differentiable(const Shape3& s) {
  if (s.nx < 2 || s.ny < 2 || s.nz < 2) {
    throw std::invalid_argument("finite differences need at least 2 voxels per axis, got " + to_string(s));
  }
}

std::size_t axis_stride(const Shape3& s, int axis) {
  return axis == 0 ? 1 : axis == 1 ? static_cast<std::size_t>(s.nx) : static_cast<std::size_t>(s.nx) * s.ny;
}

}  // namespace

template <typename T>
void forward_difference(std::span<const T> g, const Shape3& s, int axis, std::span<T> out) {
  require_differentiable(s);
  const std::size_t st = axis_stride(s, axis);
  const int n_axis = s[axis];
  std::size_t i = 0;
  for (int z = 0; z < s.nz; ++z)
    for (int y = 0; y < s.ny; ++y)
      for (int x = 0; x < s.nx; ++x, ++i) {
        const int pos = axis == 0 ? x : axis == 1 ? y : z;
        out[i] = pos + 1 < n_axis ? g[i + st] - g[i] : T(0);
      }
}

template <typename T>
void forward_difference_adjoint_add(std::span<const T> h, const Shape3& s, int axis, std::span<T> out) {
  const std::size_t st = axis_stride(s, axis);
  const int n_axis = s[axis];
  std::size_t i = 0;
  for (int z = 0; z < s.nz; ++z)
    for (int y = 0; y < s.ny; ++y)
      for (int x = 0; x < s.nx; ++x, ++i) {
        const int pos = axis == 0 ? x : axis == 1 ? y : z;
        if (pos + 1 < n_axis) {
          out[i + st] += h[i];
          out[i] -= h[i];
        }
      }
}

template <typename T>
std::array<BasicVolume<T>, 3> spatial_gradient(const BasicVolume<T>& g) {
  require_differentiable(g.shape());
  std::array<BasicVolume<T>, 3> out;
  for (int a = 0; a < 3; ++a) {
    out[a] = BasicVolume<T>(g.shape(), g.spacing());
    forward_difference<T>(g.values(), g.shape(), a, out[a].values());
  }
  return out;
}

template <typename T>
std::array<BasicVolume<T>, 9> spatial_gradient(const DisplacementField<T>& u) {
  require_differentiable(u.shape());
  std::array<BasicVolume<T>, 9> out;
  for (int c = 0; c < 3; ++c)
    for (int a = 0; a < 3; ++a) {
      out[3 * c + a] = BasicVolume<T>(u.shape());
      forward_difference<T>(u.component(c), u.shape(), a, out[3 * c + a].values());
    }
  return out;
}

template <typename T>
BasicVolume<T> divergence(const DisplacementField<T>& u) {
  require_differentiable(u.shape());
  BasicVolume<T> div(u.shape());
  std::vector<T> tmp(u.voxels());
  for (int a = 0; a < 3; ++a) {
    forward_difference<T>(u.component(a), u.shape(), a, tmp);
    for (std::size_t i = 0; i < tmp.size(); ++i) div[i] += tmp[i];
  }
  return div;
}

template void forward_difference(std::span<const float>, const Shape3&, int, std::span<float>);
template void forward_difference(std::span<const double>, const Shape3&, int, std::span<double>);
template void forward_difference_adjoint_add(std::span<const float>, const Shape3&, int, std::span<float>);
template void forward_difference_adjoint_add(std::span<const double>, const Shape3&, int, std::span<double>);
template std::array<BasicVolume<float>, 3> spatial_gradient(const BasicVolume<float>&);
template std::array<BasicVolume<double>, 3> spatial_gradient(const BasicVolume<double>&);
template std::array<BasicVolume<float>, 9> spatial_gradient(const DisplacementField<float>&);
template std::array<BasicVolume<double>, 9> spatial_gradient(const DisplacementField<double>&);
template BasicVolume<float> divergence(const DisplacementField<float>&);
template BasicVolume<double> divergence(const DisplacementField<double>&);

}  // namespace ttoreg
