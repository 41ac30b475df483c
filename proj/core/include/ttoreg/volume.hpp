#pragma once

// Volume, displacement-field and mask containers.
//
// Axis convention: a shape is (nx, ny, nz), also written (H, W, D). Buffers
// are stored x-fastest: index = x + nx * (y + ny * z). Displacements are in
// voxel units along (x, y, z) and stored component-major (all u_x, then all
// u_y, then all u_z).

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ttoreg {

/// Raised for problems the caller can fix (bad input, bad config, missing file).
class UserError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Shape3 {
  int nx = 0;
  int ny = 0;
  int nz = 0;

  constexpr std::size_t size() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
           static_cast<std::size_t>(nz);
  }
  constexpr int operator[](int axis) const { return axis == 0 ? nx : axis == 1 ? ny : nz; }
  constexpr std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(nx) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(ny) * static_cast<std::size_t>(z));
  }
  constexpr bool positive() const { return nx > 0 && ny > 0 && nz > 0; }
  friend constexpr bool operator==(const Shape3&, const Shape3&) = default;
};

std::string to_string(const Shape3& s);

struct Spacing3 {
  double sx = 1.0;
  double sy = 1.0;
  double sz = 1.0;

  constexpr double operator[](int axis) const { return axis == 0 ? sx : axis == 1 ? sy : sz; }
  constexpr bool positive() const { return sx > 0.0 && sy > 0.0 && sz > 0.0; }
  friend constexpr bool operator==(const Spacing3&, const Spacing3&) = default;
};

/// Geometry before any network resampling/padding.
struct NativeGeometry {
  Shape3 shape;
  Spacing3 spacing;
  friend bool operator==(const NativeGeometry&, const NativeGeometry&) = default;
};

/// Scalar grid with voxel spacing. Also used for derived scalar fields
/// (divergence, MI maps).
template <typename T>
class BasicVolume {
 public:
  using value_type = T;

  BasicVolume() = default;
  explicit BasicVolume(Shape3 shape, Spacing3 spacing = {}, T fill = T(0));
  BasicVolume(Shape3 shape, Spacing3 spacing, std::vector<T> data);

  const Shape3& shape() const { return shape_; }
  const Spacing3& spacing() const { return spacing_; }
  void set_spacing(Spacing3 spacing);
  std::size_t size() const { return data_.size(); }

  T& at(int x, int y, int z) { return data_[shape_.index(x, y, z)]; }
  const T& at(int x, int y, int z) const { return data_[shape_.index(x, y, z)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& buffer() { return data_; }
  const std::vector<T>& buffer() const { return data_; }

  const std::optional<NativeGeometry>& native() const { return native_; }
  void set_native(std::optional<NativeGeometry> g) { native_ = std::move(g); }

  /// Opaque header bytes carried through NIfTI round trips (orientation etc.).
  const std::vector<std::uint8_t>& opaque_header() const { return opaque_; }
  void set_opaque_header(std::vector<std::uint8_t> h) { opaque_ = std::move(h); }

  T min_value() const;
  T max_value() const;

  template <typename U>
  BasicVolume<U> cast() const {
    BasicVolume<U> out(shape_, spacing_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    out.set_native(native_);
    out.set_opaque_header(opaque_);
    return out;
  }

 private:
  Shape3 shape_{};
  Spacing3 spacing_{};
  std::vector<T> data_;
  std::optional<NativeGeometry> native_;
  std::vector<std::uint8_t> opaque_;
};

using Volume3D = BasicVolume<float>;

/// Voxel-wise 3-vector field u; phi(x) = x + u(x).
template <typename T>
class DisplacementField {
 public:
  DisplacementField() = default;
  explicit DisplacementField(Shape3 shape, T fill = T(0));

  const Shape3& shape() const { return shape_; }
  std::size_t voxels() const { return shape_.size(); }

  std::span<T> component(int c) { return {data_.data() + c * voxels(), voxels()}; }
  std::span<const T> component(int c) const { return {data_.data() + c * voxels(), voxels()}; }
  T& at(int c, int x, int y, int z) { return data_[c * voxels() + shape_.index(x, y, z)]; }
  const T& at(int c, int x, int y, int z) const { return data_[c * voxels() + shape_.index(x, y, z)]; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& buffer() { return data_; }
  const std::vector<T>& buffer() const { return data_; }

  /// Mean Euclidean norm of u over all voxels.
  double mean_magnitude() const;
  double max_magnitude() const;

  template <typename U>
  DisplacementField<U> cast() const {
    DisplacementField<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.values()[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  Shape3 shape_{};
  std::vector<T> data_;
};

using Field3D = DisplacementField<float>;

/// Mean endpoint error: mean over voxels of |a(x) - b(x)|.
template <typename T>
double mean_endpoint_error(const DisplacementField<T>& a, const DisplacementField<T>& b);

class Mask3D {
 public:
  Mask3D() = default;
  explicit Mask3D(Shape3 shape, bool fill = false);
  Mask3D(Shape3 shape, std::vector<std::uint8_t> values);

  const Shape3& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }
  bool operator[](std::size_t i) const { return values_[i] != 0; }
  void set(std::size_t i, bool v) { values_[i] = v ? 1 : 0; }
  bool at(int x, int y, int z) const { return values_[shape_.index(x, y, z)] != 0; }
  void set(int x, int y, int z, bool v) { values_[shape_.index(x, y, z)] = v ? 1 : 0; }
  std::size_t count() const;
  std::span<const std::uint8_t> values() const { return values_; }

  /// Voxels with value > threshold.
  template <typename T>
  static Mask3D from_volume(const BasicVolume<T>& v, double threshold = 0.5);

 private:
  Shape3 shape_{};
  std::vector<std::uint8_t> values_;
};

enum class ResampleMethod { Trilinear, Nearest };
enum class ResizeMode { Resample, Pad };

struct ResampleRecord {
  Shape3 original_shape;
  Spacing3 original_spacing;
  Shape3 resampled_shape;
  Spacing3 resampled_spacing;
  ResampleMethod method = ResampleMethod::Trilinear;
  ResizeMode mode = ResizeMode::Resample;
  /// Pad mode only: offset of the original grid inside the padded grid.
  std::array<int, 3> pad_offset{0, 0, 0};

  bool identity() const { return original_shape == resampled_shape; }
};

void require_same_shape(const Shape3& a, const Shape3& b, const char* what);

}  // namespace ttoreg
