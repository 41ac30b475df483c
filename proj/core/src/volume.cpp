#include "ttoreg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ttoreg {

std::string to_string(const Shape3& s) {
  std::ostringstream os;
  os << '(' << s.nx << ", " << s.ny << ", " << s.nz << ')';
  return os.str();
}

void require_same_shape(const Shape3& a, const Shape3& b, const char* what) {
  if (!(a == b)) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + to_string(a) + " vs " +
                                to_string(b));
  }
}

namespace {
void check_geometry(const Shape3& shape, const Spacing3& spacing) {
  if (!shape.positive()) throw std::invalid_argument("volume shape must be positive: " + to_string(shape));
  if (!spacing.positive()) throw std::invalid_argument("volume spacing must be strictly positive");
}
}  // namespace

template <typename T>
BasicVolume<T>::BasicVolume(Shape3 shape, Spacing3 spacing, T fill)
    : shape_(shape), spacing_(spacing), data_(shape.size(), fill) {
  check_geometry(shape_, spacing_);
}

template <typename T>
BasicVolume<T>::BasicVolume(Shape3 shape, Spacing3 spacing, std::vector<T> data)
    : shape_(shape), spacing_(spacing), data_(std::move(data)) {
  check_geometry(shape_, spacing_);
  if (data_.size() != shape_.size()) {
    throw std::invalid_argument("intensity buffer length " + std::to_string(data_.size()) +
                                " does not match shape " + to_string(shape_));
  }
}

template <typename T>
void BasicVolume<T>::set_spacing(Spacing3 spacing) {
  check_geometry(shape_, spacing);
  spacing_ = spacing;
}

template <typename T>
T BasicVolume<T>::min_value() const {
  return data_.empty() ? T(0) : *std::min_element(data_.begin(), data_.end());
}

template <typename T>
T BasicVolume<T>::max_value() const {
  return data_.empty() ? T(0) : *std::max_element(data_.begin(), data_.end());
}

template <typename T>
DisplacementField<T>::DisplacementField(Shape3 shape, T fill) : shape_(shape), data_(3 * shape.size(), fill) {
  if (!shape.positive()) throw std::invalid_argument("field shape must be positive: " + to_string(shape));
}

template <typename T>
double DisplacementField<T>::mean_magnitude() const {
  const std::size_t n = voxels();
  if (n == 0) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = data_[i], b = data_[n + i], c = data_[2 * n + i];
    acc += std::sqrt(a * a + b * b + c * c);
  }
  return acc / static_cast<double>(n);
}

template <typename T>
double DisplacementField<T>::max_magnitude() const {
  const std::size_t n = voxels();
  double best = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = data_[i], b = data_[n + i], c = data_[2 * n + i];
    best = std::max(best, std::sqrt(a * a + b * b + c * c));
  }
  return best;
}

template <typename T>
double mean_endpoint_error(const DisplacementField<T>& a, const DisplacementField<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mean_endpoint_error");
  const std::size_t n = a.voxels();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double d = static_cast<double>(a.component(c)[i]) - static_cast<double>(b.component(c)[i]);
      s += d * d;
    }
    acc += std::sqrt(s);
  }
  return n ? acc / static_cast<double>(n) : 0.0;
}

Mask3D::Mask3D(Shape3 shape, bool fill) : shape_(shape), values_(shape.size(), fill ? 1 : 0) {}

Mask3D::Mask3D(Shape3 shape, std::vector<std::uint8_t> values) : shape_(shape), values_(std::move(values)) {
  if (values_.size() != shape_.size()) throw std::invalid_argument("mask buffer length does not match shape");
  for (auto& v : values_) {
    if (v > 1) throw std::invalid_argument("mask values must be 0 or 1");
  }
}

std::size_t Mask3D::count() const {
  return static_cast<std::size_t>(std::count(values_.begin(), values_.end(), std::uint8_t{1}));
}

template <typename T>
Mask3D Mask3D::from_volume(const BasicVolume<T>& v, double threshold) {
  std::vector<std::uint8_t> vals(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) vals[i] = static_cast<double>(v[i]) > threshold ? 1 : 0;
  return Mask3D(v.shape(), std::move(vals));
}

template class BasicVolume<float>;
template class BasicVolume<double>;
template class DisplacementField<float>;
template class DisplacementField<double>;
template double mean_endpoint_error(const DisplacementField<float>&, const DisplacementField<float>&);
template double mean_endpoint_error(const DisplacementField<double>&, const DisplacementField<double>&);
template Mask3D Mask3D::from_volume(const BasicVolume<float>&, double);
template Mask3D Mask3D::from_volume(const BasicVolume<double>&, double);

}  // namespace ttoreg
