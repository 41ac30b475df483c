#include "ttoreg/warp.hpp"

#include <algorithm>
#include <cmath>

namespace ttoreg {

namespace {

template <typename T>
struct Corners {
  int x0, y0, z0;
  T fx, fy, fz;
  T v[2][2][2];  // v[dz][dy][dx]
};

template <typename T>
inline void gather(const BasicVolume<T>& m, T px, T py, T pz, Corners<T>& c) {
  const Shape3& s = m.shape();
  const T flx = std::floor(px), fly = std::floor(py), flz = std::floor(pz);
  c.x0 = static_cast<int>(flx);
  c.y0 = static_cast<int>(fly);
  c.z0 = static_cast<int>(flz);
  c.fx = px - flx;
  c.fy = py - fly;
  c.fz = pz - flz;
  const bool interior = c.x0 >= 0 && c.y0 >= 0 && c.z0 >= 0 && c.x0 + 1 < s.nx && c.y0 + 1 < s.ny && c.z0 + 1 < s.nz;
  if (interior) {
    const std::size_t base = s.index(c.x0, c.y0, c.z0);
    const std::size_t sy = static_cast<std::size_t>(s.nx);
    const std::size_t sz = sy * static_cast<std::size_t>(s.ny);
    const T* d = m.values().data();
    c.v[0][0][0] = d[base];
    c.v[0][0][1] = d[base + 1];
    c.v[0][1][0] = d[base + sy];
    c.v[0][1][1] = d[base + sy + 1];
    c.v[1][0][0] = d[base + sz];
    c.v[1][0][1] = d[base + sz + 1];
    c.v[1][1][0] = d[base + sz + sy];
    c.v[1][1][1] = d[base + sz + sy + 1];
    return;
  }
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const int x = c.x0 + dx, y = c.y0 + dy, z = c.z0 + dz;
        const bool in = x >= 0 && y >= 0 && z >= 0 && x < s.nx && y < s.ny && z < s.nz;
        c.v[dz][dy][dx] = in ? m.at(x, y, z) : T(0);
      }
}

template <typename T>
inline T interpolate(const Corners<T>& c) {
  const T c00 = c.v[0][0][0] + c.fx * (c.v[0][0][1] - c.v[0][0][0]);
  const T c10 = c.v[0][1][0] + c.fx * (c.v[0][1][1] - c.v[0][1][0]);
  const T c01 = c.v[1][0][0] + c.fx * (c.v[1][0][1] - c.v[1][0][0]);
  const T c11 = c.v[1][1][0] + c.fx * (c.v[1][1][1] - c.v[1][1][0]);
  const T c0 = c00 + c.fy * (c10 - c00);
  const T c1 = c01 + c.fy * (c11 - c01);
  return c0 + c.fz * (c1 - c0);
}

}  // namespace

template <typename T>
BasicVolume<T> warp(const BasicVolume<T>& moving, const DisplacementField<T>& u) {
  require_same_shape(moving.shape(), u.shape(), "warp");
  const Shape3& s = moving.shape();
  BasicVolume<T> out(s, moving.spacing());
  auto ux = u.component(0), uy = u.component(1), uz = u.component(2);
  Corners<T> c;
  std::size_t i = 0;
  for (int z = 0; z < s.nz; ++z)
    for (int y = 0; y < s.ny; ++y)
      for (int x = 0; x < s.nx; ++x, ++i) {
        gather(moving, static_cast<T>(x) + ux[i], static_cast<T>(y) + uy[i], static_cast<T>(z) + uz[i], c);
        out[i] = interpolate(c);
      }
  out.set_native(moving.native());
  return out;
}

template <typename T>
void warp_backward(const BasicVolume<T>& moving, const DisplacementField<T>& u, std::span<const T> grad_out,
                   DisplacementField<T>* grad_u, BasicVolume<T>* grad_moving) {
  require_same_shape(moving.shape(), u.shape(), "warp_backward");
  const Shape3& s = moving.shape();
  if (grad_out.size() != s.size()) throw std::invalid_argument("warp_backward: gradient size mismatch");
  if (grad_u) require_same_shape(grad_u->shape(), s, "warp_backward grad_u");
  if (grad_moving) require_same_shape(grad_moving->shape(), s, "warp_backward grad_moving");
  auto ux = u.component(0), uy = u.component(1), uz = u.component(2);
  Corners<T> c;
  std::size_t i = 0;
  for (int z = 0; z < s.nz; ++z)
    for (int y = 0; y < s.ny; ++y)
      for (int x = 0; x < s.nx; ++x, ++i) {
        const T g = grad_out[i];
        if (g == T(0)) continue;
        gather(moving, static_cast<T>(x) + ux[i], static_cast<T>(y) + uy[i], static_cast<T>(z) + uz[i], c);
        if (grad_u) {
          const T fx = c.fx, fy = c.fy, fz = c.fz;
          // d/dx
          const T ax0 = (c.v[0][0][1] - c.v[0][0][0]) * (1 - fy) + (c.v[0][1][1] - c.v[0][1][0]) * fy;
          const T ax1 = (c.v[1][0][1] - c.v[1][0][0]) * (1 - fy) + (c.v[1][1][1] - c.v[1][1][0]) * fy;
          const T dx = ax0 * (1 - fz) + ax1 * fz;
          // d/dy
          const T a00 = c.v[0][0][0] + fx * (c.v[0][0][1] - c.v[0][0][0]);
          const T a10 = c.v[0][1][0] + fx * (c.v[0][1][1] - c.v[0][1][0]);
          const T a01 = c.v[1][0][0] + fx * (c.v[1][0][1] - c.v[1][0][0]);
          const T a11 = c.v[1][1][0] + fx * (c.v[1][1][1] - c.v[1][1][0]);
          const T dy = (a10 - a00) * (1 - fz) + (a11 - a01) * fz;
          // d/dz
          const T b0 = a00 + fy * (a10 - a00);
          const T b1 = a01 + fy * (a11 - a01);
          const T dz = b1 - b0;
          grad_u->component(0)[i] += g * dx;
          grad_u->component(1)[i] += g * dy;
          grad_u->component(2)[i] += g * dz;
        }
        if (grad_moving) {
          for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                const int xx = c.x0 + dx, yy = c.y0 + dy, zz = c.z0 + dz;
                if (xx < 0 || yy < 0 || zz < 0 || xx >= s.nx || yy >= s.ny || zz >= s.nz) continue;
                const T w = (dx ? c.fx : 1 - c.fx) * (dy ? c.fy : 1 - c.fy) * (dz ? c.fz : 1 - c.fz);
                grad_moving->at(xx, yy, zz) += g * w;
              }
        }
      }
}

template <typename T>
BasicVolume<T> warp_nearest(const BasicVolume<T>& labels, const DisplacementField<T>& u) {
  require_same_shape(labels.shape(), u.shape(), "warp_nearest");
  const Shape3& s = labels.shape();
  BasicVolume<T> out(s, labels.spacing());
  std::size_t i = 0;
  for (int z = 0; z < s.nz; ++z)
    for (int y = 0; y < s.ny; ++y)
      for (int x = 0; x < s.nx; ++x, ++i) {
        const int sx = std::clamp(static_cast<int>(std::lround(x + u.component(0)[i])), 0, s.nx - 1);
        const int sy = std::clamp(static_cast<int>(std::lround(y + u.component(1)[i])), 0, s.ny - 1);
        const int sz = std::clamp(static_cast<int>(std::lround(z + u.component(2)[i])), 0, s.nz - 1);
        out[i] = labels.at(sx, sy, sz);
      }
  return out;
}

template <typename T>
T sample_trilinear_zero(const BasicVolume<T>& vol, double x, double y, double z) {
  Corners<T> c;
  gather(vol, static_cast<T>(x), static_cast<T>(y), static_cast<T>(z), c);
  return interpolate(c);
}

template <typename T>
T sample_trilinear_clamped(std::span<const T> data, const Shape3& s, double x, double y, double z) {
  x = std::clamp(x, 0.0, static_cast<double>(s.nx - 1));
  y = std::clamp(y, 0.0, static_cast<double>(s.ny - 1));
  z = std::clamp(z, 0.0, static_cast<double>(s.nz - 1));
  const int x0 = std::min(static_cast<int>(x), s.nx - 1), y0 = std::min(static_cast<int>(y), s.ny - 1),
            z0 = std::min(static_cast<int>(z), s.nz - 1);
  const int x1 = std::min(x0 + 1, s.nx - 1), y1 = std::min(y0 + 1, s.ny - 1), z1 = std::min(z0 + 1, s.nz - 1);
  const double fx = x - x0, fy = y - y0, fz = z - z0;
  auto v = [&](int a, int b, int c) { return static_cast<double>(data[s.index(a, b, c)]); };
  const double c00 = v(x0, y0, z0) + fx * (v(x1, y0, z0) - v(x0, y0, z0));
  const double c10 = v(x0, y1, z0) + fx * (v(x1, y1, z0) - v(x0, y1, z0));
  const double c01 = v(x0, y0, z1) + fx * (v(x1, y0, z1) - v(x0, y0, z1));
  const double c11 = v(x0, y1, z1) + fx * (v(x1, y1, z1) - v(x0, y1, z1));
  const double c0 = c00 + fy * (c10 - c00);
  const double c1 = c01 + fy * (c11 - c01);
  return static_cast<T>(c0 + fz * (c1 - c0));
}

template BasicVolume<float> warp(const BasicVolume<float>&, const DisplacementField<float>&);
template BasicVolume<double> warp(const BasicVolume<double>&, const DisplacementField<double>&);
template void warp_backward(const BasicVolume<float>&, const DisplacementField<float>&, std::span<const float>,
                            DisplacementField<float>*, BasicVolume<float>*);
template void warp_backward(const BasicVolume<double>&, const DisplacementField<double>&, std::span<const double>,
                            DisplacementField<double>*, BasicVolume<double>*);
template BasicVolume<float> warp_nearest(const BasicVolume<float>&, const DisplacementField<float>&);
template BasicVolume<double> warp_nearest(const BasicVolume<double>&, const DisplacementField<double>&);
template float sample_trilinear_zero(const BasicVolume<float>&, double, double, double);
template double sample_trilinear_zero(const BasicVolume<double>&, double, double, double);
template float sample_trilinear_clamped(std::span<const float>, const Shape3&, double, double, double);
template double sample_trilinear_clamped(std::span<const double>, const Shape3&, double, double, double);

}  // namespace ttoreg
