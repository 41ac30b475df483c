#pragma once

// Network checkpoint container, version 1:
//
//   bytes 0-7   magic "TTOREGCK"
//   u32         format version
//   u64         header length H
//   H bytes     JSON header {config, seed, role, param_count, tensors[{name, shape, offset, size}], meta}
//   4 * N       float32 parameters, little-endian, in tensor order
//   u32         CRC-32 of every preceding byte
//
// All integers are little-endian.

#include <filesystem>
#include <optional>
#include <string>

#include "ttoreg/network.hpp"

namespace ttoreg {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  RegistrationNetwork network;
  /// Free-form provenance stored alongside the weights (JSON text).
  std::string meta_json;
};

std::string network_config_to_json(const NetworkConfig& cfg);
NetworkConfig network_config_from_json(const std::string& json_text);

void save_checkpoint(const RegistrationNetwork& net, const std::filesystem::path& path,
                     const std::string& meta_json = "{}");

/// Throws UserError on a missing, corrupt or (when `expected` is set)
/// mismatching checkpoint.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<NetworkConfig>& expected = std::nullopt);

}  // namespace ttoreg
