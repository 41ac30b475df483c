#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "ttoreg/affine.hpp"
#include "ttoreg/diffops.hpp"
#include "ttoreg/io.hpp"
#include "ttoreg/losses.hpp"
#include "ttoreg/resample.hpp"
#include "ttoreg/warp.hpp"

namespace fs = std::filesystem;
using namespace ttoreg;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("ttoreg_core_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Volume3D smooth_blobs(Shape3 s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(0.2, 0.8), amp(0.3, 1.0), wid(0.08, 0.2);
  struct Blob { double x, y, z, a, w; };
  std::vector<Blob> blobs;
  for (int i = 0; i < 6; ++i) blobs.push_back({pos(rng) * s.nx, pos(rng) * s.ny, pos(rng) * s.nz, amp(rng), wid(rng) * s.nx});
  Volume3D v(s);
  for (int z = 0; z < s.nz; ++z)
    for (int y = 0; y < s.ny; ++y)
      for (int x = 0; x < s.nx; ++x) {
        double f = 0;
        for (const auto& b : blobs) {
          const double d2 = (x - b.x) * (x - b.x) + (y - b.y) * (y - b.y) + (z - b.z) * (z - b.z);
          f += b.a * std::exp(-d2 / (2 * b.w * b.w));
        }
        v.at(x, y, z) = static_cast<float>(f);
      }
  return v;
}

}  // namespace

TEST_CASE("raw+json zero volume round trip") {
  auto dir = scratch("zeros");
  Volume3D v({8, 8, 8});
  save_volume(v, dir / "z.json");
  auto w = load_volume(dir / "z.json");
  CHECK(w.shape() == Shape3{8, 8, 8});
  for (float x : w.values()) CHECK(x == 0.0f);
}

TEST_CASE("save and load keep intensities and spacing exactly") {
  auto dir = scratch("roundtrip");
  auto v = oracle::random_volume<float>({7, 5, 3}, 11, -3.0, 9.0);
  v.set_spacing({0.5, 1.25, 3.0});
  for (const char* name : {"a.json", "a.nii", "a.nii.gz"}) {
    save_volume(v, dir / name);
    auto w = load_volume(dir / name);
    REQUIRE(w.shape() == v.shape());
    CHECK(w.spacing() == v.spacing());
    CHECK(w.buffer() == v.buffer());
  }
}

TEST_CASE("NIfTI spacing is reported") {
  auto dir = scratch("spacing");
  Volume3D v({4, 4, 2}, {0.4297, 0.4297, 6.0});
  save_volume(v, dir / "s.nii");
  auto w = load_volume(dir / "s.nii");
  CHECK(w.spacing().sx == doctest::Approx(0.4297).epsilon(1e-6));
  CHECK(w.spacing().sy == doctest::Approx(0.4297).epsilon(1e-6));
  CHECK(w.spacing().sz == doctest::Approx(6.0));
}

TEST_CASE("file size is header plus payload") {
  auto dir = scratch("size");
  Volume3D v({6, 5, 4}, {}, 1.0f);
  save_volume(v, dir / "c.nii");
  CHECK(fs::file_size(dir / "c.nii") == 352 + 6 * 5 * 4 * 4);
  save_volume(v, dir / "c.json");
  CHECK(fs::file_size(dir / "c.raw") == 6 * 5 * 4 * 4);
}

TEST_CASE("malformed inputs are user errors") {
  auto dir = scratch("bad");
  CHECK_THROWS_AS(load_volume(dir / "missing.nii"), UserError);
  {
    std::ofstream f(dir / "junk.nii", std::ios::binary);
    f << std::string(400, 'x');
  }
  CHECK_THROWS_AS(load_volume(dir / "junk.nii"), UserError);
  save_volume(Volume3D({4, 4, 4}), dir / "short.json");
  fs::resize_file(dir / "short.raw", 100);
  CHECK_THROWS_AS(load_volume(dir / "short.json"), UserError);
  {
    std::ofstream f(dir / "hdr.json");
    f << "{\"shape\": [4, 4], \"spacing\": [1, 1, 1], \"dtype\": \"f32\"}";
  }
  CHECK_THROWS_AS(load_volume(dir / "hdr.json"), UserError);
  CHECK_THROWS_AS(load_volume(dir / "x.txt"), UserError);
}

TEST_CASE("displacement field round trip") {
  auto dir = scratch("field");
  auto u = oracle::random_field<float>({5, 4, 3}, 3, 2.0);
  for (auto fmt : {VolumeFormat::RawJson, VolumeFormat::Nifti}) {
    auto p = with_format_extension(dir / "u", fmt);
    save_field(u, {1, 1, 1}, p, fmt);
    auto w = load_field(p);
    CHECK(w.shape() == u.shape());
    CHECK(w.buffer() == u.buffer());
  }
}

TEST_CASE("series from a directory is ordered by name") {
  auto dir = scratch("series");
  for (int t : {2, 0, 1}) save_volume(Volume3D({3, 3, 3}, {}, static_cast<float>(t)), dir / ("f" + std::to_string(t) + ".json"));
  auto s = load_series(dir);
  REQUIRE(s.size() == 3);
  for (int t = 0; t < 3; ++t) CHECK(s[t][0] == static_cast<float>(t));
}

TEST_CASE("normalize_intensity") {
  Volume3D v({3, 1, 1}, {}, std::vector<float>{2, 4, 6});
  auto n = normalize_intensity(v);
  CHECK(n[0] == 0.0f);
  CHECK(n[1] == doctest::Approx(0.5));
  CHECK(n[2] == 1.0f);
  auto c = normalize_intensity(Volume3D({4, 4, 4}, {}, 7.0f));
  for (float x : c.values()) CHECK(x == 0.0f);

  auto r = oracle::random_volume<float>({9, 8, 7}, 5, -40, 300);
  auto m = normalize_intensity(r);
  CHECK(m.min_value() == 0.0f);
  CHECK(m.max_value() == 1.0f);
  std::vector<std::size_t> a(r.size()), b(r.size());
  std::iota(a.begin(), a.end(), 0);
  std::iota(b.begin(), b.end(), 0);
  std::stable_sort(a.begin(), a.end(), [&](auto i, auto j) { return r[i] < r[j]; });
  std::stable_sort(b.begin(), b.end(), [&](auto i, auto j) { return m[i] < m[j]; });
  CHECK(a == b);
}

TEST_CASE("multiple-of-16 geometry") {
  CHECK(nearest_multiple_of_16(120) == 128);
  CHECK(nearest_multiple_of_16(89) == 96);
  CHECK(nearest_multiple_of_16(256) == 256);
  for (int n = 1; n <= 600; ++n) {
    const int q = n / 16, r = n % 16;
    int expect = (r >= 8 ? q + 1 : q) * 16;
    if (expect < 16) expect = 16;
    CHECK(nearest_multiple_of_16(n) == expect);
    CHECK(ceil_multiple_of_16(n) == (n + 15) / 16 * 16);
  }
  auto [v, rec] = pad_or_resample_for_network(Volume3D({32, 32, 32}));
  CHECK(rec.identity());
  CHECK(v.shape() == Shape3{32, 32, 32});

  std::mt19937 rng(4);
  std::uniform_int_distribution<int> d(9, 70);
  for (int i = 0; i < 10; ++i) {
    Shape3 s{d(rng), d(rng), d(rng)};
    for (auto mode : {ResizeMode::Resample, ResizeMode::Pad}) {
      auto [w, rr] = pad_or_resample_for_network(Volume3D(s), mode);
      for (int a = 0; a < 3; ++a) CHECK(w.shape()[a] % 16 == 0);
    }
  }
}

TEST_CASE("clinical-sized volumes map to the network grid") {
  auto [a, ra] = pad_or_resample_for_network(Volume3D({256, 256, 120}));
  CHECK(a.shape() == Shape3{256, 256, 128});
  auto [b, rb] = pad_or_resample_for_network(Volume3D({512, 512, 89}));
  CHECK(b.shape() == Shape3{512, 512, 96});
  CHECK(rb.original_shape == Shape3{512, 512, 89});
}

TEST_CASE("pad and restore is exact; resample restores geometry") {
  auto v = oracle::random_volume<float>({20, 18, 120}, 8);
  auto [p, rec] = pad_or_resample_for_network(v, ResizeMode::Pad);
  CHECK(p.shape() == Shape3{32, 32, 128});
  auto back = restore_native(p, rec);
  CHECK(back.shape() == v.shape());
  CHECK(back.buffer() == v.buffer());

  auto w = smooth_blobs({24, 20, 89}, 2);
  auto [q, rq] = pad_or_resample_for_network(w, ResizeMode::Resample);
  CHECK(q.shape() == Shape3{32, 16, 96});
  auto wb = restore_native(q, rq);
  REQUIRE(wb.shape() == w.shape());
  double mae = 0;
  for (std::size_t i = 0; i < w.size(); ++i) mae += std::abs(wb[i] - w[i]);
  mae /= w.size();
  CHECK(mae < 0.01 * (w.max_value() - w.min_value()));
}

TEST_CASE("restored fields are rescaled to native voxels") {
  Field3D f({32, 32, 32}, 2.0f);
  ResampleRecord rec;
  rec.original_shape = {16, 64, 32};
  rec.resampled_shape = {32, 32, 32};
  auto g = restore_native_field(f, rec);
  CHECK(g.shape() == Shape3{16, 64, 32});
  CHECK(g.at(0, 3, 3, 3) == doctest::Approx(1.0));
  CHECK(g.at(1, 3, 3, 3) == doctest::Approx(4.0));
  CHECK(g.at(2, 3, 3, 3) == doctest::Approx(2.0));
}

TEST_CASE("warp identity and integer and half shifts") {
  auto m = oracle::random_volume<float>({9, 8, 7}, 1);
  auto w = warp(m, Field3D(m.shape()));
  for (std::size_t i = 0; i < m.size(); ++i) CHECK(std::abs(w[i] - m[i]) < 1e-6);

  Volume3D ramp({10, 6, 6});
  for (int z = 0; z < 6; ++z)
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 10; ++x) ramp.at(x, y, z) = static_cast<float>(x * x + 3 * y);
  Field3D one(ramp.shape());
  for (auto& v : one.component(0)) v = 1.0f;
  auto s1 = warp(ramp, one);
  Field3D half(ramp.shape());
  for (auto& v : half.component(0)) v = 0.5f;
  auto s2 = warp(ramp, half);
  for (int z = 0; z < 6; ++z)
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x + 1 < 10; ++x) {
        CHECK(s1.at(x, y, z) == ramp.at(x + 1, y, z));
        CHECK(s2.at(x, y, z) == doctest::Approx(0.5 * (ramp.at(x, y, z) + ramp.at(x + 1, y, z))));
      }
}

TEST_CASE("warp matches the corner-by-corner oracle and is linear in the image") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto m = oracle::random_volume<double>({8, 8, 8}, seed);
    auto u = oracle::random_field<double>({8, 8, 8}, seed + 100, 3.0);
    auto w = warp(m, u);
    auto o = oracle::warp(m, u);
    for (std::size_t i = 0; i < m.size(); ++i) CHECK(std::abs(w[i] - o[i]) < 1e-12);
    auto m2 = oracle::random_volume<double>({8, 8, 8}, seed + 7);
    BasicVolume<double> lin(m.shape());
    for (std::size_t i = 0; i < m.size(); ++i) lin[i] = 2.0 * m[i] - 3.0 * m2[i];
    auto wl = warp(lin, u), w2 = warp(m2, u);
    for (std::size_t i = 0; i < m.size(); ++i) CHECK(std::abs(wl[i] - (2.0 * w[i] - 3.0 * w2[i])) < 1e-10);
  }
}

TEST_CASE("warp_nearest picks the nearest voxel") {
  Volume3D lab({6, 1, 1}, {}, std::vector<float>{0, 1, 2, 3, 4, 5});
  Field3D u(lab.shape());
  for (auto& v : u.component(0)) v = 1.4f;
  auto w = warp_nearest(lab, u);
  CHECK(w[0] == 1.0f);
  CHECK(w[3] == 4.0f);
  CHECK(w[5] == 5.0f);  // clamped
}

TEST_CASE("spatial gradient") {
  auto c = spatial_gradient(BasicVolume<double>({5, 5, 5}, {}, 3.0));
  for (const auto& g : c)
    for (double v : g.values()) CHECK(v == 0.0);
  BasicVolume<double> r({6, 5, 4});
  for (int z = 0; z < 4; ++z)
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 6; ++x) r.at(x, y, z) = 2.0 * y + 7;
  auto g = spatial_gradient(r);
  for (int z = 0; z < 4; ++z)
    for (int y = 0; y + 1 < 5; ++y)
      for (int x = 0; x < 6; ++x) CHECK(g[1].at(x, y, z) == 2.0);

  auto u = oracle::random_field<double>({5, 5, 5}, 9, 1.0);
  auto gu = spatial_gradient(u);
  const Shape3 s = u.shape();
  for (int c2 = 0; c2 < 3; ++c2)
    for (int a = 0; a < 3; ++a)
      for (int z = 0; z < 5; ++z)
        for (int y = 0; y < 5; ++y)
          for (int x = 0; x < 5; ++x)
            CHECK(gu[3 * c2 + a].at(x, y, z) ==
                  oracle::diff([&](int i, int j, int k) { return u.at(c2, i, j, k); }, s, a, x, y, z));
}

TEST_CASE("forward difference adjoint") {
  auto g = oracle::random_volume<double>({5, 4, 3}, 2);
  auto h = oracle::random_volume<double>({5, 4, 3}, 3);
  for (int a = 0; a < 3; ++a) {
    std::vector<double> dg(g.size()), ath(g.size(), 0.0);
    forward_difference<double>(g.values(), g.shape(), a, dg);
    forward_difference_adjoint_add<double>(h.values(), g.shape(), a, ath);
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      lhs += dg[i] * h[i];
      rhs += g[i] * ath[i];
    }
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("divergence") {
  auto c = divergence(DisplacementField<double>({5, 5, 5}, 1.5));
  for (double v : c.values()) CHECK(v == 0.0);
  DisplacementField<double> e({6, 6, 6});
  for (int z = 0; z < 6; ++z)
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x) {
        e.at(0, x, y, z) = x;
        e.at(1, x, y, z) = y;
        e.at(2, x, y, z) = z;
      }
  auto d = divergence(e);
  for (int z = 0; z < 5; ++z)
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 5; ++x) CHECK(d.at(x, y, z) == 3.0);

  auto u = oracle::random_field<double>({5, 6, 4}, 4, 2.0);
  auto du = divergence(u);
  auto o = oracle::divergence(u);
  for (std::size_t i = 0; i < o.size(); ++i) CHECK(du[i] == doctest::Approx(o[i]).epsilon(1e-14));
}

TEST_CASE("affine prealignment") {
  const Shape3 s{32, 32, 32};
  auto f = smooth_blobs(s, 21);

  auto same = affine_prealign(f, f);
  const auto id = identity_affine();
  for (int i = 0; i < 12; ++i) CHECK(std::abs(same.params[i] - id[i]) < 1e-3);

  // moving(x) = fixed(x - 3 e_x): the sampling field that aligns it is +3 along x.
  Field3D shift(s);
  for (auto& v : shift.component(0)) v = -3.0f;
  auto moved = warp(f, shift);
  auto r = affine_prealign(f, moved);
  CHECK(std::abs(r.params[9] - 3.0) < 0.5);
  CHECK(std::abs(r.params[10]) < 0.5);
  CHECK(std::abs(r.params[11]) < 0.5);

  const double a = 5.0 * M_PI / 180.0;
  AffineParams rot = identity_affine();
  rot[0] = std::cos(a);
  rot[1] = -std::sin(a);
  rot[3] = std::sin(a);
  rot[4] = std::cos(a);
  auto rotated = warp(f, affine_field(rot, s));
  auto rr = affine_prealign(f, rotated);
  CHECK(rr.ncc_after < rr.ncc_before);
  CHECK(rr.ncc_after == doctest::Approx(ncc_loss(f, rr.warped)).epsilon(1e-4));
}
