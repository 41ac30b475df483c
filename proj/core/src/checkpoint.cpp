#include "ttoreg/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <json.hpp>

namespace ttoreg {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'T', 'T', 'O', 'R', 'E', 'G', 'C', 'K'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename U>
void put(std::string& buf, U v) {
  char b[sizeof(U)];
  std::memcpy(b, &v, sizeof(U));
  buf.append(b, sizeof(U));
}

template <typename U>
U get(const std::string& buf, std::size_t& pos) {
  if (pos + sizeof(U) > buf.size()) throw UserError("checkpoint truncated");
  U v;
  std::memcpy(&v, buf.data() + pos, sizeof(U));
  pos += sizeof(U);
  return v;
}

json config_json(const NetworkConfig& c) {
  return json{{"encoder_channels", c.encoder_channels},
              {"bottleneck_channels", c.bottleneck_channels},
              {"decoder_channels", c.decoder_channels},
              {"refine_channels", c.refine_channels},
              {"refine_blocks", c.refine_blocks},
              {"leaky_slope", c.leaky_slope},
              {"in_channels", c.in_channels},
              {"out_channels", c.out_channels}};
}

NetworkConfig config_from(const json& j) {
  NetworkConfig c;
  c.encoder_channels = j.at("encoder_channels").get<std::vector<int>>();
  c.bottleneck_channels = j.at("bottleneck_channels").get<int>();
  c.decoder_channels = j.at("decoder_channels").get<std::vector<int>>();
  c.refine_channels = j.at("refine_channels").get<int>();
  c.refine_blocks = j.at("refine_blocks").get<int>();
  c.leaky_slope = j.at("leaky_slope").get<double>();
  c.in_channels = j.at("in_channels").get<int>();
  c.out_channels = j.at("out_channels").get<int>();
  return c;
}

std::uint32_t crc(const std::string& buf, std::size_t n) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(n)));
}

}  // namespace

std::string network_config_to_json(const NetworkConfig& cfg) { return config_json(cfg).dump(); }

NetworkConfig network_config_from_json(const std::string& json_text) { return config_from(json::parse(json_text)); }

void save_checkpoint(const RegistrationNetwork& net, const std::filesystem::path& path, const std::string& meta_json) {
  json header;
  header["config"] = config_json(net.config());
  header["seed"] = net.seed();
  header["role"] = to_string(net.role());
  header["param_count"] = net.param_count();
  json tensors = json::array();
  for (const auto& t : net.tensors()) {
    tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", t.offset}, {"size", t.size}});
  }
  header["tensors"] = std::move(tensors);
  header["meta"] = json::parse(meta_json);
  const std::string h = header.dump();

  std::string buf(kMagic, sizeof(kMagic));
  put<std::uint32_t>(buf, kCheckpointVersion);
  put<std::uint64_t>(buf, h.size());
  buf += h;
  const auto params = net.parameters();
  buf.append(reinterpret_cast<const char*>(params.data()), params.size() * sizeof(float));
  put<std::uint32_t>(buf, crc(buf, buf.size()));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw UserError("cannot write checkpoint " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw UserError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<NetworkConfig>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UserError("checkpoint not found: " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = " (" + path.string() + ")";
  if (buf.size() < sizeof(kMagic) + 16 || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
    throw UserError("not a checkpoint file" + where);
  }
  std::size_t pos = buf.size() - 4;
  const auto stored = get<std::uint32_t>(buf, pos);
  if (stored != crc(buf, buf.size() - 4)) throw UserError("checkpoint checksum mismatch, file is corrupt" + where);

  pos = sizeof(kMagic);
  const auto version = get<std::uint32_t>(buf, pos);
  if (version != kCheckpointVersion) throw UserError("unsupported checkpoint version " + std::to_string(version) + where);
  const auto hlen = get<std::uint64_t>(buf, pos);
  if (pos + hlen > buf.size() - 4) throw UserError("checkpoint header truncated" + where);
  json header;
  try {
    header = json::parse(buf.substr(pos, hlen));
  } catch (const json::exception& e) {
    throw UserError(std::string("checkpoint header is not valid JSON: ") + e.what() + where);
  }
  pos += hlen;

  const NetworkConfig cfg = config_from(header.at("config"));
  if (expected && !(*expected == cfg)) {
    throw UserError("checkpoint network config " + config_json(cfg).dump() + " does not match expected " +
                    config_json(*expected).dump() + where);
  }
  RegistrationNetwork net(cfg, header.at("seed").get<std::uint64_t>(),
                          network_role_from_string(header.at("role").get<std::string>()));
  const std::size_t n = header.at("param_count").get<std::size_t>();
  if (n != net.param_count() || pos + n * sizeof(float) != buf.size() - 4) {
    throw UserError("checkpoint parameter block does not match its config" + where);
  }
  std::memcpy(net.parameters().data(), buf.data() + pos, n * sizeof(float));
  return Checkpoint{std::move(net), header.value("meta", json::object()).dump()};
}

}  // namespace ttoreg
