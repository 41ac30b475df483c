#include "ttoreg/synthdata.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <stdexcept>

#include "ttoreg/resample.hpp"
#include "ttoreg/warp.hpp"

namespace ttoreg {

namespace {

// Uniform cubic B-spline over a lattice whose knot k sits at (k - 1) * spacing.
struct Spline1D {
  std::vector<int> base;
  std::vector<std::array<double, 4>> w;
};

int lattice_size(int n, double spacing) { return static_cast<int>(std::floor((n - 1) / spacing)) + 4; }

Spline1D spline_axis(int n, double spacing) {
  Spline1D s;
  s.base.resize(n);
  s.w.resize(n);
  for (int x = 0; x < n; ++x) {
    const double t = x / spacing;
    const int i = static_cast<int>(std::floor(t));
    const double u = t - i, u2 = u * u, u3 = u2 * u;
    s.base[x] = i;
    s.w[x] = {(1 - u) * (1 - u) * (1 - u) / 6.0, (3 * u3 - 6 * u2 + 4) / 6.0, (-3 * u3 + 3 * u2 + 3 * u + 1) / 6.0,
              u3 / 6.0};
  }
  return s;
}

// Dense x-fastest grid from a lattice of size (lx, ly, lz).
std::vector<double> spline_dense(const std::vector<double>& lat, int lx, int ly, int lz, double spacing,
                                 const Shape3& s) {
  const Spline1D ax = spline_axis(s.nx, spacing), ay = spline_axis(s.ny, spacing), az = spline_axis(s.nz, spacing);
  std::vector<double> a(static_cast<std::size_t>(s.nx) * ly * lz);
  for (int k = 0; k < lz; ++k)
    for (int j = 0; j < ly; ++j)
      for (int x = 0; x < s.nx; ++x) {
        double acc = 0.0;
        for (int t = 0; t < 4; ++t) acc += ax.w[x][t] * lat[(ax.base[x] + t) + static_cast<std::size_t>(lx) * (j + static_cast<std::size_t>(ly) * k)];
        a[x + static_cast<std::size_t>(s.nx) * (j + static_cast<std::size_t>(ly) * k)] = acc;
      }
  std::vector<double> b(static_cast<std::size_t>(s.nx) * s.ny * lz);
  for (int k = 0; k < lz; ++k)
    for (int y = 0; y < s.ny; ++y)
      for (int x = 0; x < s.nx; ++x) {
        double acc = 0.0;
        for (int t = 0; t < 4; ++t) acc += ay.w[y][t] * a[x + static_cast<std::size_t>(s.nx) * ((ay.base[y] + t) + static_cast<std::size_t>(ly) * k)];
        b[x + static_cast<std::size_t>(s.nx) * (y + static_cast<std::size_t>(s.ny) * k)] = acc;
      }
  std::vector<double> out(s.size());
  for (int z = 0; z < s.nz; ++z)
    for (int y = 0; y < s.ny; ++y)
      for (int x = 0; x < s.nx; ++x) {
        double acc = 0.0;
        for (int t = 0; t < 4; ++t) acc += az.w[z][t] * b[x + static_cast<std::size_t>(s.nx) * (y + static_cast<std::size_t>(s.ny) * (az.base[z] + t))];
        out[s.index(x, y, z)] = acc;
      }
  return out;
}

template <typename Draw>
std::vector<double> spline_field(const Shape3& s, double spacing, Draw&& draw) {
  const int lx = lattice_size(s.nx, spacing), ly = lattice_size(s.ny, spacing), lz = lattice_size(s.nz, spacing);
  std::vector<double> lat(static_cast<std::size_t>(lx) * ly * lz);
  for (auto& v : lat) v = draw();
  return spline_dense(lat, lx, ly, lz, spacing, s);
}

void require_grid(const Shape3& s) {
  if (!s.positive()) throw std::invalid_argument("synthdata: degenerate shape " + to_string(s));
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

int LabelMap::present_count() const {
  std::vector<bool> seen(num_labels, false);
  for (auto l : labels) seen[l] = true;
  return static_cast<int>(std::count(seen.begin(), seen.end(), true));
}

std::size_t LabelMap::count(int id) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), static_cast<std::uint8_t>(id)));
}

Mask3D LabelMap::mask(int id) const {
  std::vector<std::uint8_t> m(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) m[i] = labels[i] == id ? 1 : 0;
  return Mask3D(shape, std::move(m));
}

Volume3D LabelMap::as_volume() const {
  Volume3D v(shape);
  for (std::size_t i = 0; i < labels.size(); ++i) v[i] = static_cast<float>(labels[i]);
  return v;
}

LabelMap LabelMap::from_volume(const Volume3D& v, int num_labels) {
  LabelMap m;
  m.shape = v.shape();
  m.num_labels = num_labels;
  m.labels.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const long id = std::lround(v[i]);
    if (id < 0 || id >= num_labels) throw std::invalid_argument("label value out of range");
    m.labels[i] = static_cast<std::uint8_t>(id);
  }
  return m;
}

LabelMap sample_label_map(std::uint64_t seed, const Shape3& shape, int num_labels, double label_scale) {
  require_grid(shape);
  if (num_labels < 2 || num_labels > 32) throw std::invalid_argument("sample_label_map: num_labels must be in [2, 32]");
  if (!(label_scale >= 4.0)) throw std::invalid_argument("sample_label_map: label_scale must be >= 4");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t n = shape.size();
  std::vector<std::vector<float>> score(num_labels);
  for (int l = 0; l < num_labels; ++l) {
    const auto coarse = spline_field(shape, label_scale, [&] { return normal(rng); });
    const auto fine = spline_field(shape, 0.5 * label_scale, [&] { return normal(rng); });
    score[l].resize(n);
    for (std::size_t i = 0; i < n; ++i) score[l][i] = static_cast<float>(coarse[i] + 0.5 * fine[i]);
  }
  LabelMap m;
  m.shape = shape;
  m.num_labels = num_labels;
  m.labels.resize(n);
  std::vector<bool> active(num_labels, true);
  auto relabel = [&](std::size_t i) {
    int best = -1;
    for (int l = 0; l < num_labels; ++l)
      if (active[l] && (best < 0 || score[l][i] > score[best][i])) best = l;
    m.labels[i] = static_cast<std::uint8_t>(best);
  };
  for (std::size_t i = 0; i < n; ++i) relabel(i);

  const double min_count = 0.005 * static_cast<double>(n);
  while (true) {
    std::vector<std::size_t> counts(num_labels, 0);
    for (auto l : m.labels) ++counts[l];
    int present = 0, victim = -1;
    for (int l = 0; l < num_labels; ++l) {
      if (!active[l]) continue;
      if (counts[l] == 0) {
        active[l] = false;
        continue;
      }
      ++present;
      if (counts[l] < min_count && (victim < 0 || counts[l] < counts[victim])) victim = l;
    }
    if (victim < 0 || present <= 2) break;
    active[victim] = false;
    for (std::size_t i = 0; i < n; ++i)
      if (m.labels[i] == victim) relabel(i);
  }
  return m;
}

Field3D random_bspline_ddf(std::uint64_t seed, const Shape3& shape, double control_spacing, double sigma) {
  require_grid(shape);
  if (!(control_spacing >= 4.0)) throw std::invalid_argument("random_bspline_ddf: control_spacing must be >= 4");
  if (!(sigma >= 0.0)) throw std::invalid_argument("random_bspline_ddf: sigma must be >= 0");
  Field3D u(shape);
  if (sigma == 0.0) return u;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  auto draw = [&] {
    double v;
    do v = normal(rng);
    while (std::abs(v) > 4.0 * sigma);
    return v;
  };
  for (int c = 0; c < 3; ++c) {
    const auto dense = spline_field(shape, control_spacing, draw);
    const int n = shape[c];
    std::vector<double> taper(n);
    for (int k = 0; k < n; ++k) {
      const double t = std::min(1.0, std::min(k, n - 1 - k) / control_spacing);
      taper[k] = t * t * (3.0 - 2.0 * t);
    }
    auto comp = u.component(c);
    std::size_t i = 0;
    for (int z = 0; z < shape.nz; ++z)
      for (int y = 0; y < shape.ny; ++y)
        for (int x = 0; x < shape.nx; ++x, ++i) {
          const int k = c == 0 ? x : c == 1 ? y : z;
          comp[i] = static_cast<float>(dense[i] * taper[k]);
        }
  }
  return u;
}

Field3D invert_field(const Field3D& u, int iterations) {
  const Shape3 s = u.shape();
  Field3D v(s);
  Field3D next(s);
  for (int it = 0; it < iterations; ++it) {
    std::size_t i = 0;
    for (int z = 0; z < s.nz; ++z)
      for (int y = 0; y < s.ny; ++y)
        for (int x = 0; x < s.nx; ++x, ++i) {
          const double px = x + v.component(0)[i], py = y + v.component(1)[i], pz = z + v.component(2)[i];
          for (int c = 0; c < 3; ++c) {
            next.component(c)[i] = -sample_trilinear_clamped<float>(u.component(c), s, px, py, pz);
          }
        }
    std::swap(v, next);
  }
  return v;
}

void RenderConfig::validate() const {
  if (!(blur_min >= 0.0 && blur_max >= blur_min)) throw std::invalid_argument("render: invalid blur range");
  if (!(noise_max >= 0.0)) throw std::invalid_argument("render: noise_max must be >= 0");
  if (!(bias_min > 0.0 && bias_max >= bias_min)) throw std::invalid_argument("render: invalid bias range");
  if (!(gamma_min > 0.0 && gamma_max >= gamma_min)) throw std::invalid_argument("render: invalid gamma range");
}

Volume3D render_intensity(const LabelMap& labels, std::uint64_t seed, std::uint64_t modality_seed,
                          const RenderConfig& cfg) {
  require_grid(labels.shape);
  cfg.validate();
  const Shape3 s = labels.shape;
  std::mt19937_64 mod_rng(modality_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> means(labels.num_labels);
  for (auto& m : means) m = unit(mod_rng);

  std::mt19937_64 rng(seed);
  const double blur_sigma = cfg.blur_min + (cfg.blur_max - cfg.blur_min) * unit(rng);
  const double noise_sigma = cfg.noise_max * unit(rng);
  const double gamma = std::exp(std::log(cfg.gamma_min) + (std::log(cfg.gamma_max) - std::log(cfg.gamma_min)) * unit(rng));

  Volume3D img(s);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(means[labels.labels[i]]);
  if (cfg.blur) img = gaussian_blur(img, blur_sigma);
  if (cfg.bias) {
    const double lo = std::log(cfg.bias_min), hi = std::log(cfg.bias_max);
    const auto log_bias = spline_field(s, 32.0, [&] { return lo + (hi - lo) * unit(rng); });
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(img[i] * std::exp(log_bias[i]));
  }
  if (cfg.noise && noise_sigma > 0.0) {
    std::normal_distribution<double> normal(0.0, noise_sigma);
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(img[i] + normal(rng));
  }
  for (std::size_t i = 0; i < img.size(); ++i) {
    double v = std::clamp(static_cast<double>(img[i]), 0.0, 1.0);
    if (cfg.gamma) v = std::pow(v, gamma);
    img[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return img;
}

void GeneratorConfig::validate() const {
  if (!shape.positive() || shape.nx % 16 || shape.ny % 16 || shape.nz % 16) {
    throw std::invalid_argument("generator shape must be a positive multiple of 16, got " + to_string(shape));
  }
  if (num_labels < 2 || num_labels > 32) throw std::invalid_argument("generator num_labels must be in [2, 32]");
  if (!(label_scale >= 4.0)) throw std::invalid_argument("generator label_scale must be >= 4");
  if (!(control_spacing >= 4.0)) throw std::invalid_argument("generator control_spacing must be >= 4");
  if (!(sigma >= 0.0)) throw std::invalid_argument("generator sigma must be >= 0");
  render.validate();
}

SyntheticPair generate_pair(std::uint64_t seed, const GeneratorConfig& cfg) {
  cfg.validate();
  SyntheticPair p;
  p.seed = seed;
  p.fixed_labels = sample_label_map(derive_seed(seed, 1), cfg.shape, cfg.num_labels, cfg.label_scale);
  p.gt_ddf = random_bspline_ddf(derive_seed(seed, 2), cfg.shape, cfg.control_spacing, cfg.sigma);
  if (cfg.sigma > 0.0) {
    const Field3D inverse = invert_field(p.gt_ddf);
    p.moving_labels = LabelMap::from_volume(warp_nearest(p.fixed_labels.as_volume(), inverse), cfg.num_labels);
  } else {
    p.moving_labels = p.fixed_labels;
  }
  p.fixed = render_intensity(p.fixed_labels, derive_seed(seed, 3), derive_seed(seed, 4), cfg.render);
  p.moving = render_intensity(p.moving_labels, derive_seed(seed, 5), derive_seed(seed, 6), cfg.render);
  return p;
}

}  // namespace ttoreg
