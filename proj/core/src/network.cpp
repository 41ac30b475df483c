#include "ttoreg/network.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <stdexcept>

namespace ttoreg {

namespace {

// Columns per im2col block; keeps the column buffer cache-resident.
constexpr std::size_t kChunk = 512;

// Every buffer handed to Eigen is 64-byte aligned and every channel stride is a
// multiple of 16 elements. Eigen peels vectorised loops according to pointer
// alignment, so this keeps results independent of where malloc puts things.
template <typename T>
using AVec = std::vector<T, Eigen::aligned_allocator<T>>;

template <typename T>
AVec<T> aligned_copy(const T* p, std::size_t n) {
  return AVec<T>(p, p + n);
}

inline std::size_t round_up16(std::size_t n) { return (n + 15) / 16 * 16; }

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

// Channel-major activations with a one-voxel zero border on every side, so a
// 3x3x3 neighbourhood is a fixed set of flat offsets.
template <typename T>
struct Tensor {
  int c = 0;
  Shape3 s{};
  int px = 0, py = 0, pz = 0;
  std::size_t pv = 0;
  AVec<T> d;

  Tensor() = default;
  Tensor(int channels, Shape3 shape)
      : c(channels),
        s(shape),
        px(shape.nx + 2),
        py(shape.ny + 2),
        pz(shape.nz + 2),
        pv(round_up16(static_cast<std::size_t>(px) * py * pz)),
        d(static_cast<std::size_t>(channels) * pv, T(0)) {}

  std::size_t pidx(int x, int y, int z) const {
    return static_cast<std::size_t>(x + 1) +
           static_cast<std::size_t>(px) * (static_cast<std::size_t>(y + 1) + static_cast<std::size_t>(py) * (z + 1));
  }
  std::size_t first() const { return pidx(0, 0, 0); }
  std::size_t last() const { return pidx(s.nx - 1, s.ny - 1, s.nz - 1); }
  T* ch(int i) { return d.data() + static_cast<std::size_t>(i) * pv; }
  const T* ch(int i) const { return d.data() + static_cast<std::size_t>(i) * pv; }
};

template <typename T>
void zero_border(Tensor<T>& t) {
  for (int c = 0; c < t.c; ++c) {
    T* base = t.ch(c);
    for (int z = 0; z < t.pz; ++z)
      for (int y = 0; y < t.py; ++y) {
        T* row = base + static_cast<std::size_t>(t.px) * (y + static_cast<std::size_t>(t.py) * z);
        if (z == 0 || z == t.pz - 1 || y == 0 || y == t.py - 1) {
          std::fill(row, row + t.px, T(0));
        } else {
          row[0] = T(0);
          row[t.px - 1] = T(0);
        }
      }
  }
}

template <typename T>
std::array<std::ptrdiff_t, 27> neighbour_offsets(const Tensor<T>& t) {
  std::array<std::ptrdiff_t, 27> off{};
  int k = 0;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx)
        off[k++] = dx + static_cast<std::ptrdiff_t>(t.px) * (dy + static_cast<std::ptrdiff_t>(t.py) * dz);
  return off;
}

template <typename T>
void im2col(const Tensor<T>& in, const std::array<std::ptrdiff_t, 27>& off, std::size_t p0, std::size_t n,
            T* col) {
  for (int ci = 0; ci < in.c; ++ci) {
    const T* src = in.ch(ci) + p0;
    for (int k = 0; k < 27; ++k) {
      std::memcpy(col, src + off[k], n * sizeof(T));
      col += n;
    }
  }
}

template <typename T>
void conv3_forward(const Tensor<T>& in, const T* w, const T* b, Tensor<T>& out, T slope) {
  const int cin = in.c, cout = out.c, K = cin * 27;
  const auto off = neighbour_offsets(in);
  const std::size_t first = in.first(), last = in.last();
  AVec<T> col(static_cast<std::size_t>(K) * kChunk);
  const AVec<T> wa = aligned_copy(w, static_cast<std::size_t>(cout) * K);
  Eigen::Map<const RowMat<T>> W(wa.data(), cout, K);
  for (std::size_t p0 = first; p0 <= last; p0 += kChunk) {
    const std::size_t n = std::min(kChunk, last + 1 - p0);
    im2col(in, off, p0, n, col.data());
    Eigen::Map<const RowMat<T>> C(col.data(), K, static_cast<Eigen::Index>(n));
    StridedMap<T> O(out.d.data() + p0, cout, static_cast<Eigen::Index>(n), Eigen::OuterStride<>(out.pv));
    O.noalias() = W * C;
    for (int co = 0; co < cout; ++co) {
      T* row = out.ch(co) + p0;
      const T bias = b[co];
      for (std::size_t j = 0; j < n; ++j) {
        const T v = row[j] + bias;
        row[j] = v > T(0) ? v : slope * v;
      }
    }
  }
  zero_border(out);
}

// dout holds dL/d(activation output) and is overwritten with dL/d(pre-activation).
template <typename T>
void conv3_backward(const Tensor<T>& in, const Tensor<T>& out, Tensor<T>& dout, const T* w, T* dw, T* db,
                    Tensor<T>* din, T slope) {
  const int cin = in.c, cout = out.c, K = cin * 27;
  zero_border(dout);
  for (std::size_t i = 0; i < dout.d.size(); ++i) {
    if (!(out.d[i] > T(0))) dout.d[i] *= slope;
  }
  const auto off = neighbour_offsets(in);
  const std::size_t first = in.first(), last = in.last();
  AVec<T> col(static_cast<std::size_t>(K) * kChunk);
  AVec<T> dcol(din ? static_cast<std::size_t>(K) * kChunk : 0);
  const AVec<T> wa = aligned_copy(w, static_cast<std::size_t>(cout) * K);
  AVec<T> dwa(static_cast<std::size_t>(cout) * K, T(0));
  Eigen::Map<const RowMat<T>> W(wa.data(), cout, K);
  Eigen::Map<RowMat<T>> dW(dwa.data(), cout, K);
  for (std::size_t p0 = first; p0 <= last; p0 += kChunk) {
    const std::size_t n = std::min(kChunk, last + 1 - p0);
    im2col(in, off, p0, n, col.data());
    Eigen::Map<const RowMat<T>> C(col.data(), K, static_cast<Eigen::Index>(n));
    ConstStridedMap<T> D(dout.d.data() + p0, cout, static_cast<Eigen::Index>(n), Eigen::OuterStride<>(dout.pv));
    dW.noalias() += D * C.transpose();
    for (int co = 0; co < cout; ++co) {
      const T* row = dout.ch(co) + p0;
      T acc = T(0);
      for (std::size_t j = 0; j < n; ++j) acc += row[j];
      db[co] += acc;
    }
    if (din) {
      Eigen::Map<RowMat<T>> DC(dcol.data(), K, static_cast<Eigen::Index>(n));
      DC.noalias() = W.transpose() * D;
      const T* src = dcol.data();
      for (int ci = 0; ci < cin; ++ci) {
        T* dst = din->ch(ci) + p0;
        for (int k = 0; k < 27; ++k) {
          T* d = dst + off[k];
          for (std::size_t j = 0; j < n; ++j) d[j] += src[j];
          src += n;
        }
      }
    }
  }
  for (std::size_t i = 0; i < dwa.size(); ++i) dw[i] += dwa[i];
  if (din) zero_border(*din);
}

template <typename T>
void maxpool_forward(const Tensor<T>& in, Tensor<T>& out, std::vector<std::uint8_t>& arg) {
  const Shape3 so = out.s;
  arg.assign(static_cast<std::size_t>(out.c) * so.size(), 0);
  std::size_t a = 0;
  for (int c = 0; c < in.c; ++c) {
    const T* src = in.ch(c);
    T* dst = out.ch(c);
    for (int z = 0; z < so.nz; ++z)
      for (int y = 0; y < so.ny; ++y)
        for (int x = 0; x < so.nx; ++x, ++a) {
          T best = src[in.pidx(2 * x, 2 * y, 2 * z)];
          std::uint8_t which = 0;
          for (std::uint8_t k = 1; k < 8; ++k) {
            const T v = src[in.pidx(2 * x + (k & 1), 2 * y + ((k >> 1) & 1), 2 * z + ((k >> 2) & 1))];
            if (v > best) {
              best = v;
              which = k;
            }
          }
          dst[out.pidx(x, y, z)] = best;
          arg[a] = which;
        }
  }
}

template <typename T>
void maxpool_backward(const Tensor<T>& dout, const std::vector<std::uint8_t>& arg, Tensor<T>& din) {
  const Shape3 so = dout.s;
  std::size_t a = 0;
  for (int c = 0; c < dout.c; ++c) {
    const T* src = dout.ch(c);
    T* dst = din.ch(c);
    for (int z = 0; z < so.nz; ++z)
      for (int y = 0; y < so.ny; ++y)
        for (int x = 0; x < so.nx; ++x, ++a) {
          const std::uint8_t k = arg[a];
          dst[din.pidx(2 * x + (k & 1), 2 * y + ((k >> 1) & 1), 2 * z + ((k >> 2) & 1))] += src[dout.pidx(x, y, z)];
        }
  }
}

template <typename T>
void upsample_forward(const Tensor<T>& in, Tensor<T>& out) {
  const Shape3 so = out.s;
  for (int c = 0; c < in.c; ++c) {
    const T* src = in.ch(c);
    T* dst = out.ch(c);
    for (int z = 0; z < so.nz; ++z)
      for (int y = 0; y < so.ny; ++y) {
        T* row = dst + out.pidx(0, y, z);
        const T* srow = src + in.pidx(0, y / 2, z / 2);
        for (int x = 0; x < so.nx; ++x) row[x] = srow[x / 2];
      }
  }
}

template <typename T>
void upsample_backward(const Tensor<T>& dout, Tensor<T>& din) {
  const Shape3 so = dout.s;
  for (int c = 0; c < dout.c; ++c) {
    const T* src = dout.ch(c);
    T* dst = din.ch(c);
    for (int z = 0; z < so.nz; ++z)
      for (int y = 0; y < so.ny; ++y) {
        const T* row = src + dout.pidx(0, y, z);
        T* drow = dst + din.pidx(0, y / 2, z / 2);
        for (int x = 0; x < so.nx; ++x) drow[x / 2] += row[x];
      }
  }
}

template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out(a.c + b.c, a.s);
  std::copy(a.d.begin(), a.d.end(), out.d.begin());
  std::copy(b.d.begin(), b.d.end(), out.d.begin() + static_cast<std::ptrdiff_t>(a.d.size()));
  return out;
}

template <typename T>
void split_add(const Tensor<T>& dcat, Tensor<T>& da, Tensor<T>& db) {
  const std::size_t na = da.d.size();
  for (std::size_t i = 0; i < na; ++i) da.d[i] += dcat.d[i];
  for (std::size_t i = 0; i < db.d.size(); ++i) db.d[i] += dcat.d[na + i];
}

Shape3 half(const Shape3& s) { return {s.nx / 2, s.ny / 2, s.nz / 2}; }

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

template <typename T>
struct ForwardCache<T>::Impl {
  Shape3 shape{};
  Tensor<T> input;
  std::vector<Tensor<T>> enc;
  std::vector<Tensor<T>> pooled;
  std::vector<std::vector<std::uint8_t>> argmax;
  Tensor<T> bottleneck;
  std::vector<Tensor<T>> cat;
  std::vector<Tensor<T>> dec;
  std::vector<Tensor<T>> refine;
};

template <typename T>
ForwardCache<T>::ForwardCache() : impl_(std::make_unique<Impl>()) {}
template <typename T>
ForwardCache<T>::~ForwardCache() = default;
template <typename T>
ForwardCache<T>::ForwardCache(ForwardCache&&) noexcept = default;
template <typename T>
ForwardCache<T>& ForwardCache<T>::operator=(ForwardCache&&) noexcept = default;

std::string to_string(NetworkRole role) { return role == NetworkRole::Teacher ? "teacher" : "student"; }

NetworkRole network_role_from_string(const std::string& s) {
  if (s == "teacher") return NetworkRole::Teacher;
  if (s == "student") return NetworkRole::Student;
  throw std::invalid_argument("unknown network role '" + s + "'");
}

NetworkConfig NetworkConfig::teacher() {
  NetworkConfig c;
  c.encoder_channels = {16, 32, 32, 64};
  c.bottleneck_channels = 64;
  c.decoder_channels = {64, 32, 32, 16};
  return c;
}

NetworkConfig NetworkConfig::student() {
  NetworkConfig c;
  c.encoder_channels = {16, 24, 24, 32};
  c.bottleneck_channels = 32;
  c.decoder_channels = {32, 24, 24, 16};
  return c;
}

void NetworkConfig::validate() const {
  if (encoder_channels.empty()) throw std::invalid_argument("NetworkConfig: need at least one encoder level");
  if (decoder_channels.size() != encoder_channels.size()) {
    throw std::invalid_argument("NetworkConfig: decoder must mirror the encoder length");
  }
  auto positive = [](int v) { return v > 0; };
  if (!std::all_of(encoder_channels.begin(), encoder_channels.end(), positive) ||
      !std::all_of(decoder_channels.begin(), decoder_channels.end(), positive) || bottleneck_channels <= 0) {
    throw std::invalid_argument("NetworkConfig: channel counts must be positive");
  }
  if (refine_blocks < 0 || (refine_blocks > 0 && refine_channels <= 0)) {
    throw std::invalid_argument("NetworkConfig: invalid refinement settings");
  }
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) throw std::invalid_argument("NetworkConfig: leaky_slope must be in (0, 1)");
  if (in_channels != 2) throw std::invalid_argument("NetworkConfig: in_channels must be 2 (fixed, moving)");
  if (out_channels != 3) throw std::invalid_argument("NetworkConfig: out_channels must be 3");
  if (levels() > 8) throw std::invalid_argument("NetworkConfig: too many levels");
}

std::size_t NetworkConfig::expected_param_count() const {
  validate();
  auto conv = [](std::size_t cin, std::size_t cout, std::size_t k3) { return cin * cout * k3 + cout; };
  const int L = levels();
  std::size_t total = 0;
  int prev = in_channels;
  for (int l = 0; l < L; ++l) {
    total += conv(prev, encoder_channels[l], 27);
    prev = encoder_channels[l];
  }
  total += conv(prev, bottleneck_channels, 27);
  int d_in = bottleneck_channels + encoder_channels[L - 1];
  for (int j = 0; j < L; ++j) {
    total += conv(d_in, decoder_channels[j], 27);
    if (j + 1 < L) d_in = decoder_channels[j] + encoder_channels[L - 2 - j];
  }
  prev = decoder_channels[L - 1];
  for (int r = 0; r < refine_blocks; ++r) {
    total += conv(prev, refine_channels, 27);
    prev = refine_channels;
  }
  total += conv(prev, out_channels, 1);
  return total;
}

template <typename T>
Network<T>::Network(NetworkConfig cfg, std::uint64_t seed, NetworkRole role)
    : cfg_(std::move(cfg)), seed_(seed), role_(role) {
  cfg_.validate();
  layout();
  initialise();
}

template <typename T>
void Network<T>::layout() {
  tensors_.clear();
  std::size_t offset = 0;
  auto add_conv = [&](const std::string& name, int cin, int cout, int k) {
    ParamTensor w{name + ".weight", {cout, cin, k, k, k}, offset, static_cast<std::size_t>(cout) * cin * k * k * k};
    offset += w.size;
    ParamTensor b{name + ".bias", {cout}, offset, static_cast<std::size_t>(cout)};
    offset += b.size;
    tensors_.push_back(std::move(w));
    tensors_.push_back(std::move(b));
  };
  const int L = cfg_.levels();
  int prev = cfg_.in_channels;
  for (int l = 0; l < L; ++l) {
    add_conv("enc" + std::to_string(l), prev, cfg_.encoder_channels[l], 3);
    prev = cfg_.encoder_channels[l];
  }
  add_conv("bottleneck", prev, cfg_.bottleneck_channels, 3);
  int d_in = cfg_.bottleneck_channels + cfg_.encoder_channels[L - 1];
  for (int j = 0; j < L; ++j) {
    add_conv("dec" + std::to_string(j), d_in, cfg_.decoder_channels[j], 3);
    if (j + 1 < L) d_in = cfg_.decoder_channels[j] + cfg_.encoder_channels[L - 2 - j];
  }
  prev = cfg_.decoder_channels[L - 1];
  for (int r = 0; r < cfg_.refine_blocks; ++r) {
    add_conv("refine" + std::to_string(r), prev, cfg_.refine_channels, 3);
    prev = cfg_.refine_channels;
  }
  add_conv("head", prev, cfg_.out_channels, 1);
  params_.assign(offset, T(0));
}

template <typename T>
void Network<T>::initialise() {
  std::mt19937_64 rng(seed_);
  const double a = cfg_.leaky_slope;
  const double gain = std::sqrt(2.0 / (1.0 + a * a));
  for (const auto& t : tensors_) {
    if (t.shape.size() != 5 || t.name.rfind("head", 0) == 0) continue;  // biases and head stay zero
    const double fan_in = static_cast<double>(t.shape[1]) * t.shape[2] * t.shape[3] * t.shape[4];
    std::normal_distribution<double> dist(0.0, gain / std::sqrt(fan_in));
    for (std::size_t i = 0; i < t.size; ++i) params_[t.offset + i] = static_cast<T>(dist(rng));
  }
}

template <typename T>
std::span<T> Network<T>::tensor(const std::string& name) {
  for (const auto& t : tensors_)
    if (t.name == name) return std::span<T>(params_).subspan(t.offset, t.size);
  throw std::out_of_range("no parameter tensor named " + name);
}

template <typename T>
std::span<const T> Network<T>::tensor(const std::string& name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return std::span<const T>(params_).subspan(t.offset, t.size);
  throw std::out_of_range("no parameter tensor named " + name);
}

template <typename T>
std::uint64_t Network<T>::parameter_checksum() const {
  return fnv1a(params_.data(), params_.size() * sizeof(T));
}

template <typename T>
DisplacementField<T> Network<T>::forward(const BasicVolume<T>& fixed, const BasicVolume<T>& moving,
                                         ForwardCache<T>* cache) const {
  require_same_shape(fixed.shape(), moving.shape(), "network forward");
  const Shape3 s = fixed.shape();
  const int div = cfg_.spatial_divisor();
  if (s.nx % div || s.ny % div || s.nz % div) {
    throw std::invalid_argument("network input shape " + to_string(s) + " is not divisible by " +
                                std::to_string(div));
  }
  ForwardCache<T> local;
  auto& st = (cache ? *cache : local).impl();
  st = {};
  st.shape = s;
  const T slope = static_cast<T>(cfg_.leaky_slope);
  const int L = cfg_.levels();
  auto W = [&](const std::string& n) { return tensor(n + ".weight").data(); };
  auto B = [&](const std::string& n) { return tensor(n + ".bias").data(); };

  st.input = Tensor<T>(2, s);
  for (int z = 0; z < s.nz; ++z)
    for (int y = 0; y < s.ny; ++y)
      for (int x = 0; x < s.nx; ++x) {
        const std::size_t p = st.input.pidx(x, y, z);
        st.input.ch(0)[p] = fixed.at(x, y, z);
        st.input.ch(1)[p] = moving.at(x, y, z);
      }

  st.enc.resize(L);
  st.pooled.resize(L > 1 ? L - 1 : 0);
  st.argmax.resize(st.pooled.size());
  Shape3 level_shape = s;
  for (int l = 0; l < L; ++l) {
    const Tensor<T>& in = l == 0 ? st.input : st.pooled[l - 1];
    st.enc[l] = Tensor<T>(cfg_.encoder_channels[l], level_shape);
    conv3_forward(in, W("enc" + std::to_string(l)), B("enc" + std::to_string(l)), st.enc[l], slope);
    if (l + 1 < L) {
      level_shape = half(level_shape);
      st.pooled[l] = Tensor<T>(st.enc[l].c, level_shape);
      maxpool_forward(st.enc[l], st.pooled[l], st.argmax[l]);
    }
  }
  st.bottleneck = Tensor<T>(cfg_.bottleneck_channels, level_shape);
  conv3_forward(st.enc[L - 1], W("bottleneck"), B("bottleneck"), st.bottleneck, slope);

  st.cat.resize(L);
  st.dec.resize(L);
  for (int j = 0; j < L; ++j) {
    if (j == 0) {
      st.cat[0] = concat(st.bottleneck, st.enc[L - 1]);
    } else {
      const Tensor<T>& skip = st.enc[L - 1 - j];
      Tensor<T> up(st.dec[j - 1].c, skip.s);
      upsample_forward(st.dec[j - 1], up);
      st.cat[j] = concat(up, skip);
    }
    st.dec[j] = Tensor<T>(cfg_.decoder_channels[j], st.cat[j].s);
    conv3_forward(st.cat[j], W("dec" + std::to_string(j)), B("dec" + std::to_string(j)), st.dec[j], slope);
  }

  st.refine.resize(cfg_.refine_blocks);
  for (int r = 0; r < cfg_.refine_blocks; ++r) {
    const Tensor<T>& in = r == 0 ? st.dec[L - 1] : st.refine[r - 1];
    st.refine[r] = Tensor<T>(cfg_.refine_channels, s);
    conv3_forward(in, W("refine" + std::to_string(r)), B("refine" + std::to_string(r)), st.refine[r], slope);
  }
  const Tensor<T>& feat = cfg_.refine_blocks > 0 ? st.refine.back() : st.dec[L - 1];

  // 1x1x1 head over the whole flat range, then read back the interior.
  const std::size_t first = feat.first(), n = feat.last() - first + 1;
  Tensor<T> head(3, s);
  const AVec<T> wh = aligned_copy(W("head"), static_cast<std::size_t>(3) * feat.c);
  Eigen::Map<const RowMat<T>> Wh(wh.data(), 3, feat.c);
  ConstStridedMap<T> F(feat.d.data() + first, feat.c, static_cast<Eigen::Index>(n), Eigen::OuterStride<>(feat.pv));
  StridedMap<T> H(head.d.data() + first, 3, static_cast<Eigen::Index>(n), Eigen::OuterStride<>(head.pv));
  H.noalias() = Wh * F;
  const T* bh = B("head");
  DisplacementField<T> u(s);
  for (int c = 0; c < 3; ++c) {
    auto comp = u.component(c);
    std::size_t i = 0;
    for (int z = 0; z < s.nz; ++z)
      for (int y = 0; y < s.ny; ++y) {
        const T* row = head.ch(c) + head.pidx(0, y, z);
        for (int x = 0; x < s.nx; ++x, ++i) comp[i] = row[x] + bh[c];
      }
  }
  return u;
}

template <typename T>
void Network<T>::backward(const ForwardCache<T>& cache, const DisplacementField<T>& grad_u,
                          std::span<T> grad_params) const {
  const auto& st = cache.impl();
  require_same_shape(grad_u.shape(), st.shape, "network backward");
  if (grad_params.size() != params_.size()) throw std::invalid_argument("network backward: gradient size mismatch");
  const Shape3 s = st.shape;
  const T slope = static_cast<T>(cfg_.leaky_slope);
  const int L = cfg_.levels();
  auto find = [&](const std::string& n) -> const ParamTensor& {
    for (const auto& t : tensors_)
      if (t.name == n) return t;
    throw std::out_of_range(n);
  };
  auto W = [&](const std::string& n) { return params_.data() + find(n + ".weight").offset; };
  auto GW = [&](const std::string& n) { return grad_params.data() + find(n + ".weight").offset; };
  auto GB = [&](const std::string& n) { return grad_params.data() + find(n + ".bias").offset; };

  // Head.
  const Tensor<T>& feat = cfg_.refine_blocks > 0 ? st.refine.back() : st.dec[L - 1];
  Tensor<T> dhead(3, s);
  for (int c = 0; c < 3; ++c) {
    auto comp = grad_u.component(c);
    std::size_t i = 0;
    for (int z = 0; z < s.nz; ++z)
      for (int y = 0; y < s.ny; ++y) {
        T* row = dhead.ch(c) + dhead.pidx(0, y, z);
        for (int x = 0; x < s.nx; ++x, ++i) row[x] = comp[i];
      }
  }
  const std::size_t first = feat.first(), n = feat.last() - first + 1;
  {
    ConstStridedMap<T> D(dhead.d.data() + first, 3, static_cast<Eigen::Index>(n), Eigen::OuterStride<>(dhead.pv));
    ConstStridedMap<T> F(feat.d.data() + first, feat.c, static_cast<Eigen::Index>(n), Eigen::OuterStride<>(feat.pv));
    AVec<T> dwh(static_cast<std::size_t>(3) * feat.c, T(0));
    Eigen::Map<RowMat<T>> dWh(dwh.data(), 3, feat.c);
    dWh.noalias() = D * F.transpose();
    T* gw = GW("head");
    for (std::size_t i = 0; i < dwh.size(); ++i) gw[i] += dwh[i];
    T* gb = GB("head");
    for (int c = 0; c < 3; ++c) {
      const T* row = dhead.ch(c) + first;
      T acc = T(0);
      for (std::size_t j = 0; j < n; ++j) acc += row[j];
      gb[c] += acc;
    }
  }
  Tensor<T> dfeat(feat.c, s);
  {
    const AVec<T> wh = aligned_copy(W("head"), static_cast<std::size_t>(3) * feat.c);
    Eigen::Map<const RowMat<T>> Wh(wh.data(), 3, feat.c);
    ConstStridedMap<T> D(dhead.d.data() + first, 3, static_cast<Eigen::Index>(n), Eigen::OuterStride<>(dhead.pv));
    StridedMap<T> dF(dfeat.d.data() + first, feat.c, static_cast<Eigen::Index>(n), Eigen::OuterStride<>(dfeat.pv));
    dF.noalias() = Wh.transpose() * D;
  }

  // Refinement blocks.
  Tensor<T> dcur = std::move(dfeat);
  for (int r = cfg_.refine_blocks - 1; r >= 0; --r) {
    const Tensor<T>& in = r == 0 ? st.dec[L - 1] : st.refine[r - 1];
    Tensor<T> din(in.c, in.s);
    const std::string name = "refine" + std::to_string(r);
    conv3_backward(in, st.refine[r], dcur, W(name), GW(name), GB(name), &din, slope);
    dcur = std::move(din);
  }

  // Decoder.
  std::vector<Tensor<T>> denc(L);
  for (int l = 0; l < L; ++l) denc[l] = Tensor<T>(st.enc[l].c, st.enc[l].s);
  Tensor<T> dbott;
  for (int j = L - 1; j >= 0; --j) {
    Tensor<T> dcat(st.cat[j].c, st.cat[j].s);
    const std::string name = "dec" + std::to_string(j);
    conv3_backward(st.cat[j], st.dec[j], dcur, W(name), GW(name), GB(name), &dcat, slope);
    if (j == 0) {
      dbott = Tensor<T>(st.bottleneck.c, st.bottleneck.s);
      split_add(dcat, dbott, denc[L - 1]);
    } else {
      Tensor<T> dup(st.dec[j - 1].c, st.cat[j].s);
      split_add(dcat, dup, denc[L - 1 - j]);
      Tensor<T> dprev(st.dec[j - 1].c, st.dec[j - 1].s);
      upsample_backward(dup, dprev);
      dcur = std::move(dprev);
    }
  }
  conv3_backward(st.enc[L - 1], st.bottleneck, dbott, W("bottleneck"), GW("bottleneck"), GB("bottleneck"),
                 &denc[L - 1], slope);

  // Encoder.
  for (int l = L - 1; l >= 0; --l) {
    const std::string name = "enc" + std::to_string(l);
    if (l == 0) {
      conv3_backward(st.input, st.enc[0], denc[0], W(name), GW(name), GB(name), static_cast<Tensor<T>*>(nullptr), slope);
    } else {
      Tensor<T> dpool(st.pooled[l - 1].c, st.pooled[l - 1].s);
      conv3_backward(st.pooled[l - 1], st.enc[l], denc[l], W(name), GW(name), GB(name), &dpool, slope);
      maxpool_backward(dpool, st.argmax[l - 1], denc[l - 1]);
    }
  }
}

template class ForwardCache<float>;
template class ForwardCache<double>;
template class Network<float>;
template class Network<double>;

}  // namespace ttoreg
