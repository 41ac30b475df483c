#pragma once

// Independent reference implementations used as test oracles. They are
// written for clarity, not speed, and share no code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "ttoreg/volume.hpp"

namespace oracle {

using ttoreg::BasicVolume;
using ttoreg::DisplacementField;
using ttoreg::Shape3;

template <typename T>
BasicVolume<T> random_volume(const Shape3& s, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  BasicVolume<T> v(s);
  for (auto& x : v.values()) x = static_cast<T>(d(rng));
  return v;
}

template <typename T>
DisplacementField<T> random_field(const Shape3& s, std::uint64_t seed, double amplitude) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-amplitude, amplitude);
  DisplacementField<T> u(s);
  for (auto& x : u.values()) x = static_cast<T>(d(rng));
  return u;
}

/// Trilinear lookup written corner by corner; corners outside the grid read 0.
inline double trilinear_zero(const BasicVolume<double>& v, double x, double y, double z) {
  const Shape3 s = v.shape();
  auto value = [&](int i, int j, int k) -> double {
    if (i < 0 || j < 0 || k < 0 || i >= s.nx || j >= s.ny || k >= s.nz) return 0.0;
    return v.at(i, j, k);
  };
  const int i = static_cast<int>(std::floor(x)), j = static_cast<int>(std::floor(y)), k = static_cast<int>(std::floor(z));
  const double fx = x - i, fy = y - j, fz = z - k;
  double out = 0.0;
  for (int c = 0; c < 8; ++c) {
    const int di = c & 1, dj = (c >> 1) & 1, dk = (c >> 2) & 1;
    const double w = (di ? fx : 1 - fx) * (dj ? fy : 1 - fy) * (dk ? fz : 1 - fz);
    out += w * value(i + di, j + dj, k + dk);
  }
  return out;
}

inline BasicVolume<double> warp(const BasicVolume<double>& m, const DisplacementField<double>& u) {
  BasicVolume<double> out(m.shape());
  const Shape3 s = m.shape();
  for (int z = 0; z < s.nz; ++z)
    for (int y = 0; y < s.ny; ++y)
      for (int x = 0; x < s.nx; ++x)
        out.at(x, y, z) = trilinear_zero(m, x + u.at(0, x, y, z), y + u.at(1, x, y, z), z + u.at(2, x, y, z));
  return out;
}

/// Forward difference by explicit index arithmetic (replicate boundary).
inline double diff(const std::function<double(int, int, int)>& g, const Shape3& s, int axis, int x, int y, int z) {
  const int p[3] = {x, y, z};
  if (p[axis] + 1 >= s[axis]) return 0.0;
  return g(x + (axis == 0), y + (axis == 1), z + (axis == 2)) - g(x, y, z);
}

inline double smoothness(const DisplacementField<double>& u) {
  const Shape3 s = u.shape();
  double sum = 0.0;
  for (int c = 0; c < 3; ++c)
    for (int z = 0; z < s.nz; ++z)
      for (int y = 0; y < s.ny; ++y)
        for (int x = 0; x < s.nx; ++x)
          for (int a = 0; a < 3; ++a) {
            const double d = diff([&](int i, int j, int k) { return u.at(c, i, j, k); }, s, a, x, y, z);
            sum += d * d;
          }
  return sum / static_cast<double>(s.size());
}

inline std::vector<double> divergence(const DisplacementField<double>& u) {
  const Shape3 s = u.shape();
  std::vector<double> out(s.size());
  for (int z = 0; z < s.nz; ++z)
    for (int y = 0; y < s.ny; ++y)
      for (int x = 0; x < s.nx; ++x) {
        double d = 0.0;
        for (int a = 0; a < 3; ++a) d += diff([&](int i, int j, int k) { return u.at(a, i, j, k); }, s, a, x, y, z);
        out[s.index(x, y, z)] = d;
      }
  return out;
}

/// MI from entropies, H(A) + H(B) - H(A, B), with bins found by
/// floor(v * bins) clamped to the last bin.
inline double hard_mi(const std::vector<double>& a, const std::vector<double>& b, int bins) {
  std::map<int, double> ca, cb;
  std::map<std::pair<int, int>, double> cab;
  auto bin = [&](double v) {
    v = std::min(1.0, std::max(0.0, v));
    int k = static_cast<int>(std::floor(v * bins));
    return k >= bins ? bins - 1 : k;
  };
  for (std::size_t i = 0; i < a.size(); ++i) {
    const int ia = bin(a[i]), ib = bin(b[i]);
    ca[ia] += 1;
    cb[ib] += 1;
    cab[{ia, ib}] += 1;
  }
  const double n = static_cast<double>(a.size());
  auto entropy = [n](const auto& counts) {
    double h = 0.0;
    for (const auto& kv : counts) {
      const double p = kv.second / n;
      h -= p * std::log(p);
    }
    return h;
  };
  return entropy(ca) + entropy(cb) - entropy(cab);
}

inline double hard_entropy(const std::vector<double>& a, int bins) {
  return hard_mi(a, a, bins);  // I(A;A) = H(A) for hard bins
}

/// Soft-binned MI with untruncated Gaussian weights, normalised per sample,
/// and p log(p + 1e-8) terms.
inline double soft_mi(const std::vector<double>& a, const std::vector<double>& b, int bins, double sigma) {
  const std::size_t n = a.size();
  std::vector<double> joint(static_cast<std::size_t>(bins) * bins, 0.0), pa(bins, 0.0), pb(bins, 0.0);
  auto weights = [&](double v) {
    std::vector<double> w(bins);
    double z = 0.0;
    for (int k = 0; k < bins; ++k) {
      const double d = v - (k + 0.5) / bins;
      w[k] = std::exp(-d * d / (2 * sigma * sigma));
      z += w[k];
    }
    for (auto& x : w) x /= z;
    return w;
  };
  for (std::size_t i = 0; i < n; ++i) {
    const auto wa = weights(a[i]), wb = weights(b[i]);
    for (int p = 0; p < bins; ++p) {
      pa[p] += wa[p] / n;
      pb[p] += wb[p] / n;
      for (int q = 0; q < bins; ++q) joint[p * bins + q] += wa[p] * wb[q] / n;
    }
  }
  auto f = [](double p) { return p * std::log(p + 1e-8); };
  double mi = 0.0;
  for (double p : joint) mi += f(p);
  for (double p : pa) mi -= f(p);
  for (double p : pb) mi -= f(p);
  return mi;
}

/// Central finite-difference comparison of an analytic gradient.
/// Returns the worst relative error |fd - an| / max(|fd| + |an|, floor).
inline double worst_relative_error(const std::function<double()>& f, std::span<double> x, std::span<const double> analytic,
                                   double h, double floor, std::size_t max_checks = 0, std::uint64_t seed = 1) {
  std::vector<std::size_t> idx(x.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  if (max_checks && max_checks < idx.size()) {
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(max_checks);
  }
  double worst = 0.0;
  for (std::size_t i : idx) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = f();
    x[i] = orig - h;
    const double fm = f();
    x[i] = orig;
    const double fd = (fp - fm) / (2 * h);
    const double err = std::abs(fd - analytic[i]) / std::max(std::abs(fd) + std::abs(analytic[i]), floor);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace oracle
