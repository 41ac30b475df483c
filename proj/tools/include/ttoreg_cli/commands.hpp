#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ttoreg_cli/run_config.hpp"

namespace ttoreg::cli {

/// Writes cfg.synth_count pairs into out_dir/pair_NNNN plus manifest.json.
/// An existing manifest with a different config hash is refused.
void cmd_synthesize(const RunConfig& cfg, const std::filesystem::path& out_dir);

/// Writes the checkpoint and a JSON-lines log (default: <checkpoint>.log.jsonl).
void cmd_train_teacher(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                       const std::filesystem::path& log = {});
void cmd_distill(const RunConfig& cfg, const std::filesystem::path& teacher_checkpoint,
                 const std::filesystem::path& checkpoint, const std::filesystem::path& log = {});

struct RegisterArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path fixed;
  /// A volume file, a 4D NIfTI, or a directory of volumes.
  std::filesystem::path moving;
  std::filesystem::path out_dir;
};
void cmd_register(const RunConfig& cfg, const RegisterArgs& args);

struct EvaluateArgs {
  std::filesystem::path fixed;
  std::filesystem::path moving;
  std::filesystem::path out;  // report JSON
  std::filesystem::path domain;
  std::filesystem::path fixed_mask;
  std::filesystem::path moving_mask;
  std::filesystem::path overlays_dir;
  std::filesystem::path map_out;
  std::filesystem::path table;  // overlap table to create or extend
  std::string case_id = "case";
  std::string setting = "default";
};
void cmd_evaluate(const RunConfig& cfg, const EvaluateArgs& args);

/// Parses argv and dispatches; returns the process exit code
/// (0 success, 1 user error, 2 internal error).
int run_cli(int argc, char** argv);

}  // namespace ttoreg::cli
