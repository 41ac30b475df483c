#include "ttoreg/resample.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace ttoreg {

template <typename T>
BasicVolume<T> normalize_intensity(const BasicVolume<T>& vol) {
  BasicVolume<T> out = vol;
  const T lo = vol.min_value();
  const T hi = vol.max_value();
  const double range = static_cast<double>(hi) - static_cast<double>(lo);
  auto vals = out.values();
  if (!(range > 0.0)) {
    std::fill(vals.begin(), vals.end(), T(0));
    return out;
  }
  for (auto& v : vals) v = static_cast<T>((static_cast<double>(v) - static_cast<double>(lo)) / range);
  return out;
}

template BasicVolume<float> normalize_intensity(const BasicVolume<float>&);
template BasicVolume<double> normalize_intensity(const BasicVolume<double>&);

template <typename T>
BasicVolume<T> gaussian_blur(const BasicVolume<T>& vol, double sigma) {
  if (!(sigma > 0.0)) return vol;
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * r + 1);
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& w : k) w /= sum;
  const Shape3 s = vol.shape();
  std::vector<double> a(vol.values().begin(), vol.values().end()), b(a.size());
  for (int axis = 0; axis < 3; ++axis) {
    const int n = s[axis];
    const std::size_t st = axis == 0 ? 1 : axis == 1 ? static_cast<std::size_t>(s.nx) : static_cast<std::size_t>(s.nx) * s.ny;
    std::size_t i = 0;
    for (int z = 0; z < s.nz; ++z)
      for (int y = 0; y < s.ny; ++y)
        for (int x = 0; x < s.nx; ++x, ++i) {
          const int p = axis == 0 ? x : axis == 1 ? y : z;
          const std::size_t base = i - static_cast<std::size_t>(p) * st;
          double acc = 0.0;
          for (int j = -r; j <= r; ++j) {
            const int q = std::clamp(p + j, 0, n - 1);
            acc += k[j + r] * a[base + static_cast<std::size_t>(q) * st];
          }
          b[i] = acc;
        }
    std::swap(a, b);
  }
  BasicVolume<T> out = vol;
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = static_cast<T>(a[i]);
  return out;
}

template BasicVolume<float> gaussian_blur(const BasicVolume<float>&, double);
template BasicVolume<double> gaussian_blur(const BasicVolume<double>&, double);

int nearest_multiple_of_16(int n) {
  if (n < 1) throw std::invalid_argument("dimension must be >= 1");
  // n = 16q + r; r >= 8 rounds up (ties included).
  const int q = n / 16;
  const int r = n % 16;
  const int m = (r >= 8 ? q + 1 : q) * 16;
  return std::max(m, 16);
}

int ceil_multiple_of_16(int n) {
  if (n < 1) throw std::invalid_argument("dimension must be >= 1");
  return ((n + 15) / 16) * 16;
}

namespace {

struct AxisMap {
  std::vector<int> i0;
  std::vector<int> i1;
  std::vector<double> w1;
  std::vector<int> nearest;
};

AxisMap make_axis_map(int n_in, int n_out) {
  AxisMap m;
  m.i0.resize(n_out);
  m.i1.resize(n_out);
  m.w1.resize(n_out);
  m.nearest.resize(n_out);
  const double scale = static_cast<double>(n_in) / static_cast<double>(n_out);
  for (int o = 0; o < n_out; ++o) {
    double p = (o + 0.5) * scale - 0.5;
    p = std::clamp(p, 0.0, static_cast<double>(n_in - 1));
    const int lo = static_cast<int>(std::floor(p));
    const int hi = std::min(lo + 1, n_in - 1);
    m.i0[o] = lo;
    m.i1[o] = hi;
    m.w1[o] = p - lo;
    m.nearest[o] = std::clamp(static_cast<int>(std::lround(p)), 0, n_in - 1);
  }
  return m;
}

std::vector<float> resample_grid(std::span<const float> in, const Shape3& si, const Shape3& so,
                                 ResampleMethod method) {
  const AxisMap mx = make_axis_map(si.nx, so.nx);
  const AxisMap my = make_axis_map(si.ny, so.ny);
  const AxisMap mz = make_axis_map(si.nz, so.nz);
  std::vector<float> out(so.size());
  for (int z = 0; z < so.nz; ++z) {
    for (int y = 0; y < so.ny; ++y) {
      for (int x = 0; x < so.nx; ++x) {
        double v;
        if (method == ResampleMethod::Nearest) {
          v = in[si.index(mx.nearest[x], my.nearest[y], mz.nearest[z])];
        } else {
          const double wx = mx.w1[x], wy = my.w1[y], wz = mz.w1[z];
          auto s = [&](int ix, int iy, int iz) { return static_cast<double>(in[si.index(ix, iy, iz)]); };
          const int x0 = mx.i0[x], x1 = mx.i1[x], y0 = my.i0[y], y1 = my.i1[y], z0 = mz.i0[z], z1 = mz.i1[z];
          const double c00 = s(x0, y0, z0) * (1 - wx) + s(x1, y0, z0) * wx;
          const double c10 = s(x0, y1, z0) * (1 - wx) + s(x1, y1, z0) * wx;
          const double c01 = s(x0, y0, z1) * (1 - wx) + s(x1, y0, z1) * wx;
          const double c11 = s(x0, y1, z1) * (1 - wx) + s(x1, y1, z1) * wx;
          const double c0 = c00 * (1 - wy) + c10 * wy;
          const double c1 = c01 * (1 - wy) + c11 * wy;
          v = c0 * (1 - wz) + c1 * wz;
        }
        out[so.index(x, y, z)] = static_cast<float>(v);
      }
    }
  }
  return out;
}

Spacing3 rescaled_spacing(const Spacing3& sp, const Shape3& from, const Shape3& to) {
  return {sp.sx * from.nx / to.nx, sp.sy * from.ny / to.ny, sp.sz * from.nz / to.nz};
}

}  // namespace

Volume3D resample(const Volume3D& vol, Shape3 target, ResampleMethod method) {
  if (!target.positive()) throw std::invalid_argument("resample target must be positive");
  if (target == vol.shape()) return vol;
  Volume3D out(target, rescaled_spacing(vol.spacing(), vol.shape(), target),
               resample_grid(vol.values(), vol.shape(), target, method));
  out.set_native(vol.native());
  out.set_opaque_header(vol.opaque_header());
  return out;
}

std::pair<Volume3D, ResampleRecord> pad_or_resample_for_network(const Volume3D& vol, ResizeMode mode) {
  const Shape3 s = vol.shape();
  ResampleRecord rec;
  rec.original_shape = s;
  rec.original_spacing = vol.spacing();
  rec.mode = mode;
  rec.method = ResampleMethod::Trilinear;
  const NativeGeometry native{s, vol.spacing()};

  if (mode == ResizeMode::Pad) {
    const Shape3 t{ceil_multiple_of_16(s.nx), ceil_multiple_of_16(s.ny), ceil_multiple_of_16(s.nz)};
    rec.resampled_shape = t;
    rec.resampled_spacing = vol.spacing();
    rec.pad_offset = {(t.nx - s.nx) / 2, (t.ny - s.ny) / 2, (t.nz - s.nz) / 2};
    Volume3D out(t, vol.spacing());
    for (int z = 0; z < s.nz; ++z)
      for (int y = 0; y < s.ny; ++y)
        for (int x = 0; x < s.nx; ++x)
          out.at(x + rec.pad_offset[0], y + rec.pad_offset[1], z + rec.pad_offset[2]) = vol.at(x, y, z);
    out.set_native(native);
    return {std::move(out), rec};
  }

  const Shape3 t{nearest_multiple_of_16(s.nx), nearest_multiple_of_16(s.ny), nearest_multiple_of_16(s.nz)};
  rec.resampled_shape = t;
  Volume3D out = resample(vol, t, ResampleMethod::Trilinear);
  rec.resampled_spacing = out.spacing();
  out.set_native(native);
  return {std::move(out), rec};
}

Volume3D restore_native(const Volume3D& vol, const ResampleRecord& rec) {
  if (!(vol.shape() == rec.resampled_shape)) {
    throw std::invalid_argument("restore_native: volume shape " + to_string(vol.shape()) +
                                " does not match record " + to_string(rec.resampled_shape));
  }
  const Shape3 s = rec.original_shape;
  if (rec.mode == ResizeMode::Pad) {
    Volume3D out(s, rec.original_spacing);
    for (int z = 0; z < s.nz; ++z)
      for (int y = 0; y < s.ny; ++y)
        for (int x = 0; x < s.nx; ++x)
          out.at(x, y, z) = vol.at(x + rec.pad_offset[0], y + rec.pad_offset[1], z + rec.pad_offset[2]);
    return out;
  }
  if (rec.identity()) {
    Volume3D out = vol;
    out.set_spacing(rec.original_spacing);
    out.set_native(std::nullopt);
    return out;
  }
  return Volume3D(s, rec.original_spacing, resample_grid(vol.values(), vol.shape(), s, rec.method));
}

Field3D restore_native_field(const Field3D& field, const ResampleRecord& rec) {
  if (!(field.shape() == rec.resampled_shape)) {
    throw std::invalid_argument("restore_native_field: field shape does not match record");
  }
  const Shape3 s = rec.original_shape;
  Field3D out(s);
  if (rec.mode == ResizeMode::Pad) {
    for (int c = 0; c < 3; ++c)
      for (int z = 0; z < s.nz; ++z)
        for (int y = 0; y < s.ny; ++y)
          for (int x = 0; x < s.nx; ++x)
            out.at(c, x, y, z) = field.at(c, x + rec.pad_offset[0], y + rec.pad_offset[1], z + rec.pad_offset[2]);
    return out;
  }
  for (int c = 0; c < 3; ++c) {
    const double scale = static_cast<double>(s[c]) / static_cast<double>(field.shape()[c]);
    std::vector<float> comp = field.shape() == s
                                  ? std::vector<float>(field.component(c).begin(), field.component(c).end())
                                  : resample_grid(field.component(c), field.shape(), s, ResampleMethod::Trilinear);
    auto dst = out.component(c);
    for (std::size_t i = 0; i < comp.size(); ++i) dst[i] = static_cast<float>(comp[i] * scale);
  }
  return out;
}

}  // namespace ttoreg
