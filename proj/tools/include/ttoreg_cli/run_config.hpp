#pragma once

// Single JSON run configuration shared by every command.
//
// The effective configuration is the defaults (see default_config_json())
// with the user's document merged on top. Keys that do not exist in the
// defaults are rejected, as are values whose JSON type differs from the
// default's.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ttoreg/eval.hpp"
#include "ttoreg/io.hpp"
#include "ttoreg/losses.hpp"
#include "ttoreg/network.hpp"
#include "ttoreg/synthdata.hpp"
#include "ttoreg/training.hpp"

namespace ttoreg::cli {

struct StageTrain {
  TrainConfig train;
  GeneratorConfig gen;
};

struct RunConfig {
  nlohmann::json effective;  // merged document, the source of the hash

  std::uint64_t seed = 0;
  VolumeFormat format = VolumeFormat::RawJson;
  int synth_count = 1;
  GeneratorConfig synth;
  LossWeights losses;
  NetworkConfig teacher_net;
  NetworkConfig student_net;
  StageTrain train_teacher;
  StageTrain distill;
  TTOConfig tto;
  bool affine_prealign = false;
  int affine_iterations = 100;
  PmmConfig pmm;
  int checkerboard_tile = 8;

  /// 16 hex digits of FNV-1a over the canonical dump of `effective`.
  std::string hash() const;
};

nlohmann::json default_config_json();

/// Merges `user` into the defaults and builds the typed config. Throws
/// UserError on unknown keys, type mismatches or invalid values.
RunConfig make_run_config(const nlohmann::json& user);

/// Reads a config file (empty path: defaults only), then applies dotted
/// overrides such as {"tto.max_epochs", "10"}. Override values are parsed as
/// JSON when possible and otherwise taken as strings.
RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::pair<std::string, std::string>>& overrides = {});

std::string fnv1a_hex(const std::string& text);

}  // namespace ttoreg::cli
