#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "ttoreg/checkpoint.hpp"
#include "ttoreg/network.hpp"

namespace fs = std::filesystem;
using namespace ttoreg;

namespace {

NetworkConfig tiny_config(int levels, int refine) {
  NetworkConfig c;
  c.encoder_channels.assign(levels, 2);
  c.bottleneck_channels = 2;
  c.decoder_channels.assign(levels, 2);
  c.refine_channels = 2;
  c.refine_blocks = refine;
  return c;
}

template <typename T>
void perturb(Network<T>& net, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (auto& p : net.parameters()) p += static_cast<T>(n(rng));
}

// Straightforward multi-channel reference layers.
struct Act {
  int c;
  Shape3 s;
  std::vector<double> v;
  Act(int channels, Shape3 shape) : c(channels), s(shape), v(channels * shape.size(), 0.0) {}
  double& at(int ch, int x, int y, int z) { return v[ch * s.size() + s.index(x, y, z)]; }
  double get(int ch, int x, int y, int z) const {
    if (x < 0 || y < 0 || z < 0 || x >= s.nx || y >= s.ny || z >= s.nz) return 0.0;
    return v[ch * s.size() + s.index(x, y, z)];
  }
};

Act conv(const Act& in, std::span<const double> w, std::span<const double> b, int cout, int k, double slope,
         bool activate) {
  Act out(cout, in.s);
  const int r = k / 2;
  for (int o = 0; o < cout; ++o)
    for (int z = 0; z < in.s.nz; ++z)
      for (int y = 0; y < in.s.ny; ++y)
        for (int x = 0; x < in.s.nx; ++x) {
          double acc = b[o];
          for (int i = 0; i < in.c; ++i)
            for (int kz = 0; kz < k; ++kz)
              for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx)
                  acc += w[(((o * in.c + i) * k + kz) * k + ky) * k + kx] * in.get(i, x + kx - r, y + ky - r, z + kz - r);
          out.at(o, x, y, z) = activate && acc < 0 ? slope * acc : acc;
        }
  return out;
}

Act pool(const Act& in) {
  Act out(in.c, {in.s.nx / 2, in.s.ny / 2, in.s.nz / 2});
  for (int c = 0; c < in.c; ++c)
    for (int z = 0; z < out.s.nz; ++z)
      for (int y = 0; y < out.s.ny; ++y)
        for (int x = 0; x < out.s.nx; ++x) {
          double m = -1e300;
          for (int d = 0; d < 8; ++d) m = std::max(m, in.get(c, 2 * x + (d & 1), 2 * y + (d >> 1 & 1), 2 * z + (d >> 2 & 1)));
          out.at(c, x, y, z) = m;
        }
  return out;
}

Act upsample(const Act& in, Shape3 target) {
  Act out(in.c, target);
  for (int c = 0; c < in.c; ++c)
    for (int z = 0; z < target.nz; ++z)
      for (int y = 0; y < target.ny; ++y)
        for (int x = 0; x < target.nx; ++x) out.at(c, x, y, z) = in.get(c, x / 2, y / 2, z / 2);
  return out;
}

Act concat(const Act& a, const Act& b) {
  Act out(a.c + b.c, a.s);
  std::copy(a.v.begin(), a.v.end(), out.v.begin());
  std::copy(b.v.begin(), b.v.end(), out.v.begin() + a.v.size());
  return out;
}

DisplacementField<double> reference_forward(const Network<double>& net, const BasicVolume<double>& f,
                                            const BasicVolume<double>& m) {
  const auto& cfg = net.config();
  const double a = cfg.leaky_slope;
  auto layer = [&](const Act& in, const std::string& name, int cout, int k, bool act) {
    return conv(in, net.tensor(name + ".weight"), net.tensor(name + ".bias"), cout, k, a, act);
  };
  Act x(2, f.shape());
  std::copy(f.values().begin(), f.values().end(), x.v.begin());
  std::copy(m.values().begin(), m.values().end(), x.v.begin() + f.size());
  const int L = cfg.levels();
  std::vector<Act> enc;
  Act cur = x;
  for (int l = 0; l < L; ++l) {
    enc.push_back(layer(cur, "enc" + std::to_string(l), cfg.encoder_channels[l], 3, true));
    if (l + 1 < L) cur = pool(enc.back());
  }
  Act d = layer(concat(layer(enc.back(), "bottleneck", cfg.bottleneck_channels, 3, true), enc.back()), "dec0",
                cfg.decoder_channels[0], 3, true);
  for (int j = 1; j < L; ++j) {
    const Act& skip = enc[L - 1 - j];
    d = layer(concat(upsample(d, skip.s), skip), "dec" + std::to_string(j), cfg.decoder_channels[j], 3, true);
  }
  for (int r = 0; r < cfg.refine_blocks; ++r) d = layer(d, "refine" + std::to_string(r), cfg.refine_channels, 3, true);
  Act h = layer(d, "head", 3, 1, false);
  DisplacementField<double> u(f.shape());
  std::copy(h.v.begin(), h.v.end(), u.values().begin());
  return u;
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("ttoreg_net_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("parameter counts of the reference architectures") {
  const auto t = NetworkConfig::teacher(), s = NetworkConfig::student();
  RegistrationNetwork teacher(t, 1, NetworkRole::Teacher), student(s, 1, NetworkRole::Student);
  CHECK(teacher.param_count() == t.expected_param_count());
  CHECK(student.param_count() == s.expected_param_count());
  CHECK(std::abs(static_cast<double>(teacher.param_count()) - 0.6e6) <= 0.15 * 0.6e6);
  CHECK(std::abs(static_cast<double>(student.param_count()) - 0.23e6) <= 0.15 * 0.23e6);
  CHECK(static_cast<double>(teacher.param_count()) / student.param_count() >= 2.5);
}

TEST_CASE("parameter count equals the sum over named tensors") {
  for (const auto& cfg : {NetworkConfig::teacher(), NetworkConfig::student(), tiny_config(2, 1)}) {
    RegistrationNetwork net(cfg, 3, NetworkRole::Student);
    std::size_t sum = 0;
    for (const auto& t : net.tensors()) {
      std::size_t prod = 1;
      for (int d : t.shape) prod *= d;
      CHECK(prod == t.size);
      CHECK(t.offset == sum);
      sum += t.size;
    }
    CHECK(sum == net.param_count());
  }
}

TEST_CASE("a single 3x3x3 conv from 2 to 16 channels has 880 parameters") {
  NetworkConfig c = tiny_config(1, 0);
  c.encoder_channels = {16};
  RegistrationNetwork net(c, 1, NetworkRole::Student);
  CHECK(net.tensor("enc0.weight").size() + net.tensor("enc0.bias").size() == 880);
}

TEST_CASE("initialisation is seeded and starts at the identity") {
  const auto cfg = NetworkConfig::student();
  RegistrationNetwork a(cfg, 5, NetworkRole::Student), b(cfg, 5, NetworkRole::Student), c(cfg, 6, NetworkRole::Student);
  CHECK(std::equal(a.parameters().begin(), a.parameters().end(), b.parameters().begin()));
  CHECK(a.parameter_checksum() == b.parameter_checksum());
  CHECK(a.parameter_checksum() != c.parameter_checksum());
  auto f = oracle::random_volume<float>({16, 16, 16}, 1);
  auto m = oracle::random_volume<float>({16, 16, 16}, 2);
  CHECK(a.forward(f, m).max_magnitude() < 0.5);
}

TEST_CASE("output shape contract and purity") {
  RegistrationNetwork net(NetworkConfig::student(), 2, NetworkRole::Student);
  perturb(net, 9, 0.01);
  for (Shape3 s : {Shape3{16, 16, 16}, Shape3{32, 32, 32}, Shape3{48, 32, 16}}) {
    auto f = oracle::random_volume<float>(s, 1), m = oracle::random_volume<float>(s, 2);
    auto u1 = net.forward(f, m);
    auto u2 = net.forward(f, m);
    CHECK(u1.shape() == s);
    CHECK(u1.buffer() == u2.buffer());
  }
  auto bad = oracle::random_volume<float>({20, 16, 16}, 1);
  CHECK_THROWS(net.forward(bad, bad));
}

TEST_CASE("forward pass matches a naive reference implementation") {
  for (int levels : {1, 2, 3}) {
    NetworkConfig cfg;
    cfg.encoder_channels.assign(levels, 3);
    cfg.encoder_channels[0] = 4;
    cfg.bottleneck_channels = 5;
    cfg.decoder_channels.assign(levels, 3);
    cfg.refine_channels = 2;
    cfg.refine_blocks = 1;
    Network<double> net(cfg, 11, NetworkRole::Student);
    perturb(net, 12 + levels, 0.3);
    auto f = oracle::random_volume<double>({8, 8, 8}, 3), m = oracle::random_volume<double>({8, 8, 8}, 4);
    auto u = net.forward(f, m);
    auto r = reference_forward(net, f, m);
    double worst = 0;
    for (std::size_t i = 0; i < u.values().size(); ++i) worst = std::max(worst, std::abs(u.values()[i] - r.values()[i]));
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("backward matches finite differences on a tiny network") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Network<double> net(tiny_config(4, 1), seed, NetworkRole::Student);
    perturb(net, seed + 100, 0.3);
    const Shape3 s{8, 8, 8};
    auto f = oracle::random_volume<double>(s, seed + 1), m = oracle::random_volume<double>(s, seed + 2);
    auto g = oracle::random_field<double>(s, seed + 3, 1.0);
    auto objective = [&] {
      auto u = net.forward(f, m);
      double acc = 0;
      for (std::size_t i = 0; i < u.values().size(); ++i) acc += u.values()[i] * g.values()[i];
      return acc;
    };
    ForwardCache<double> cache;
    net.forward(f, m, &cache);
    std::vector<double> grad(net.param_count(), 0.0);
    net.backward(cache, g, grad);
    CHECK(oracle::worst_relative_error(objective, net.parameters(), grad, 1e-6, 1e-6) < 1e-3);
  }
}

TEST_CASE("checkpoints round trip and reject bad input") {
  auto dir = scratch("ckpt");
  RegistrationNetwork net(NetworkConfig::student(), 4, NetworkRole::Student);
  perturb(net, 5, 0.02);
  save_checkpoint(net, dir / "s.ck", R"({"note":"x"})");
  auto loaded = load_checkpoint(dir / "s.ck", NetworkConfig::student());
  CHECK(loaded.network.parameter_checksum() == net.parameter_checksum());
  CHECK(loaded.network.role() == NetworkRole::Student);
  CHECK(loaded.meta_json.find("\"note\"") != std::string::npos);
  auto f = oracle::random_volume<float>({16, 16, 16}, 1), m = oracle::random_volume<float>({16, 16, 16}, 2);
  CHECK(loaded.network.forward(f, m).buffer() == net.forward(f, m).buffer());

  CHECK_THROWS_AS(load_checkpoint(dir / "s.ck", NetworkConfig::teacher()), UserError);
  CHECK_THROWS_AS(load_checkpoint(dir / "absent.ck"), UserError);

  fs::copy_file(dir / "s.ck", dir / "t.ck");
  {
    std::fstream io(dir / "t.ck", std::ios::in | std::ios::out | std::ios::binary);
    io.seekg(static_cast<std::streamoff>(fs::file_size(dir / "t.ck") / 2));
    char c = 0;
    io.read(&c, 1);
    c = static_cast<char>(c ^ 0x10);
    io.seekp(static_cast<std::streamoff>(fs::file_size(dir / "t.ck") / 2));
    io.write(&c, 1);
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "t.ck"), UserError);

  {
    std::ofstream junk(dir / "j.ck", std::ios::binary);
    junk << "not a checkpoint at all";
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "j.ck"), UserError);
}

TEST_CASE("config json round trip") {
  for (const auto& c : {NetworkConfig::teacher(), NetworkConfig::student()})
    CHECK(network_config_from_json(network_config_to_json(c)) == c);
}
