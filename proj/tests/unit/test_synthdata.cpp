#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "oracles.hpp"
#include "ttoreg/diffops.hpp"
#include "ttoreg/losses.hpp"
#include "ttoreg/synthdata.hpp"
#include "ttoreg/warp.hpp"

using namespace ttoreg;

namespace {

double dice_of(const LabelMap& a, const Volume3D& b, int label) {
  std::size_t inter = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.labels.size(); ++i) {
    const bool x = a.labels[i] == label, y = static_cast<int>(b[i]) == label;
    inter += x && y;
    na += x;
    nb += y;
  }
  return na + nb == 0 ? 1.0 : 2.0 * inter / (na + nb);
}

}  // namespace

TEST_CASE("derive_seed separates streams") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 20; ++s)
    for (std::uint64_t k = 0; k < 20; ++k) seen.insert(derive_seed(s, k));
  CHECK(seen.size() == 400);
  CHECK(derive_seed(3, 4) == derive_seed(3, 4));
}

TEST_CASE("label maps") {
  const Shape3 s{32, 32, 32};
  auto a = sample_label_map(7, s, 8), b = sample_label_map(7, s, 8);
  CHECK(a.labels == b.labels);
  CHECK(a.labels != sample_label_map(8, s, 8).labels);

  auto bin = sample_label_map(3, s, 2);
  CHECK(bin.count(0) > 0);
  CHECK(bin.count(1) > 0);
  CHECK(bin.count(0) + bin.count(1) == s.size());

  double regions = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto m = sample_label_map(seed, s, 8);
    regions += m.present_count();
    for (int l = 0; l < 8; ++l) {
      const auto c = m.count(l);
      CHECK((c == 0 || c >= 0.005 * s.size()));
    }
  }
  CHECK(regions / 10 >= 6.0);
  CHECK_THROWS(sample_label_map(1, s, 1));
  CHECK_THROWS(sample_label_map(1, s, 33));
}

TEST_CASE("B-spline displacement fields") {
  const Shape3 s{64, 64, 64};
  auto zero = random_bspline_ddf(1, s, 8, 0.0);
  CHECK(zero.max_magnitude() == 0.0);
  CHECK(random_bspline_ddf(4, s, 8, 2.0).buffer() == random_bspline_ddf(4, s, 8, 2.0).buffer());

  std::vector<float> mags;
  double worst_grad = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto u = random_bspline_ddf(seed, s, 8, 2.0);
    for (std::size_t i = 0; i < s.size(); ++i) {
      const float x = u.component(0)[i], y = u.component(1)[i], z = u.component(2)[i];
      mags.push_back(std::sqrt(x * x + y * y + z * z));
    }
    auto g = spatial_gradient(u);
    for (std::size_t i = 0; i < s.size(); ++i) {
      double fro = 0;
      for (const auto& d : g) fro += static_cast<double>(d[i]) * d[i];
      worst_grad = std::max(worst_grad, std::sqrt(fro));
    }
  }
  std::nth_element(mags.begin(), mags.begin() + mags.size() * 999 / 1000, mags.end());
  CHECK(mags[mags.size() * 999 / 1000] <= 4 * 2.0);
  CHECK(worst_grad <= kDdfGradientBound * 2.0 / 8);

  auto u = random_bspline_ddf(3, s, 8, 2.0);
  std::mt19937_64 rng(1);
  double var = 0;
  for (float v : u.values()) var += static_cast<double>(v) * v;
  var /= u.values().size();
  std::normal_distribution<double> n(0, std::sqrt(var));
  Field3D noise(s);
  for (auto& v : noise.values()) v = static_cast<float>(n(rng));
  CHECK(smoothness(u) < smoothness(noise));
}

TEST_CASE("fields never sample through a face") {
  const Shape3 s{32, 48, 32};
  auto u = random_bspline_ddf(9, s, 8, 4.0);
  for (int z = 0; z < s.nz; ++z)
    for (int y = 0; y < s.ny; ++y) {
      CHECK(u.at(0, 0, y, z) == 0.0f);
      CHECK(u.at(0, s.nx - 1, y, z) == 0.0f);
    }
  for (int x = 0; x < s.nx; ++x) CHECK(u.at(1, x, s.ny - 1, 3) == 0.0f);
}

TEST_CASE("field inversion") {
  auto u = random_bspline_ddf(2, {32, 32, 32}, 8, 2.0);
  auto v = invert_field(u);
  // u(x + v(x)) + v(x) ~ 0 away from the border.
  double worst = 0;
  for (int z = 8; z < 24; ++z)
    for (int y = 8; y < 24; ++y)
      for (int x = 8; x < 24; ++x)
        for (int c = 0; c < 3; ++c) {
          const double px = x + v.at(0, x, y, z), py = y + v.at(1, x, y, z), pz = z + v.at(2, x, y, z);
          const double r = sample_trilinear_clamped<float>(u.component(c), u.shape(), px, py, pz) + v.at(c, x, y, z);
          worst = std::max(worst, std::abs(r));
        }
  CHECK(worst < 1e-3);
}

TEST_CASE("rendering") {
  auto labels = sample_label_map(5, {32, 32, 32}, 6);
  RenderConfig plain;
  plain.blur = plain.noise = plain.bias = plain.gamma = false;
  auto img = render_intensity(labels, 1, 2, plain);
  std::vector<std::set<float>> values(6);
  for (std::size_t i = 0; i < img.size(); ++i) values[labels.labels[i]].insert(img[i]);
  for (const auto& v : values) CHECK(v.size() <= 1);

  RenderConfig full;
  auto a = render_intensity(labels, 3, 4, full);
  CHECK(a.buffer() == render_intensity(labels, 3, 4, full).buffer());
  CHECK(a.min_value() >= 0.0f);
  CHECK(a.max_value() <= 1.0f);

  auto b = render_intensity(labels, 5, 6, full);
  LossWeights cfg;
  BasicVolume<float> shuffled = b;
  std::mt19937_64 rng(1);
  std::shuffle(shuffled.buffer().begin(), shuffled.buffer().end(), rng);
  const double pair = multi_axis_mi(a, b, cfg);
  CHECK(std::isfinite(pair));
  CHECK(pair < multi_axis_mi(a, shuffled, cfg));

  RenderConfig broken;
  broken.gamma_min = 0;
  CHECK_THROWS(render_intensity(labels, 1, 1, broken));
}

TEST_CASE("synthetic pairs") {
  GeneratorConfig cfg;
  cfg.shape = {32, 32, 32};
  auto p = generate_pair(11, cfg), q = generate_pair(11, cfg);
  CHECK(p.fixed.buffer() == q.fixed.buffer());
  CHECK(p.moving.buffer() == q.moving.buffer());
  CHECK(p.gt_ddf.buffer() == q.gt_ddf.buffer());
  CHECK(p.moving.shape() == cfg.shape);
  CHECK(p.moving_labels.shape == cfg.shape);

  GeneratorConfig still = cfg;
  still.sigma = 0;
  auto r = generate_pair(11, still);
  CHECK(r.gt_ddf.max_magnitude() == 0.0);
  CHECK(r.moving_labels.labels == r.fixed_labels.labels);
  CHECK(r.fixed.buffer() != r.moving.buffer());

  GeneratorConfig odd = cfg;
  odd.shape = {30, 32, 32};
  CHECK_THROWS(generate_pair(1, odd));
}

TEST_CASE("ground truth explains the moving image") {
  GeneratorConfig cfg;  // 64^3, default sigma
  LossWeights w;
  double mean_mag = 0;
  double worst_dice = 1.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto p = generate_pair(seed, cfg);
    mean_mag += p.gt_ddf.mean_magnitude();
    CHECK(multi_axis_mi(p.fixed, warp(p.moving, p.gt_ddf), w) < multi_axis_mi(p.fixed, p.moving, w));
    auto back = warp_nearest(p.moving_labels.as_volume(), p.gt_ddf);
    for (int l = 0; l < cfg.num_labels; ++l)
      if (p.fixed_labels.count(l) > 0) worst_dice = std::min(worst_dice, dice_of(p.fixed_labels, back, l));
  }
  mean_mag /= 20;
  MESSAGE("mean |gt_ddf| = " << mean_mag << ", worst per-label dice = " << worst_dice);
  CHECK(mean_mag >= 0.5);
  CHECK(mean_mag <= 6.0);
  CHECK(worst_dice >= 0.85);
}
