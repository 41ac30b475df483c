#pragma once

// Stage drivers: teacher pretraining, distillation into the student, and
// per-pair test-time optimisation (TTO).

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ttoreg/losses.hpp"
#include "ttoreg/network.hpp"
#include "ttoreg/synthdata.hpp"

namespace ttoreg {

struct TrainConfig {
  int epochs = 300;
  int pairs_per_epoch = 500;
  double learning_rate = 1e-4;
  LossWeights weights;
  std::uint64_t seed = 0;
  /// Write a checkpoint every this many epochs (0: only at the end).
  int checkpoint_every = 0;
  /// Empty: keep everything in memory.
  std::filesystem::path checkpoint_path;
  /// JSON object text stored in each checkpoint's metadata.
  std::string provenance = "{}";

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  double wall_seconds = 0.0;
};

/// One JSON-lines record: {"epoch":..,"mean_loss":..,"wall_seconds":..}.
std::string to_json_line(const EpochRecord& r);

struct TrainResult {
  RegistrationNetwork network;
  std::vector<EpochRecord> log;
};

/// Raised when a training loss turns non-finite. The last good parameters
/// have been written to the configured checkpoint path, if any.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Seeds used by the drivers, all derived from TrainConfig::seed.
std::uint64_t network_init_seed(std::uint64_t seed, NetworkRole role);
std::uint64_t training_pair_seed(std::uint64_t seed, std::uint64_t index);

/// One generated pair per step, pretrain_loss, Adam.
TrainResult pretrain_teacher(const TrainConfig& cfg, const GeneratorConfig& gen, const EpochCallback& on_epoch = {});

/// Frozen teacher, kd_loss, Adam on a freshly initialised student.
TrainResult distill_student(const RegistrationNetwork& teacher, const TrainConfig& cfg, const GeneratorConfig& gen,
                            const EpochCallback& on_epoch = {}, const NetworkConfig& student = NetworkConfig::student());

/// Monotonic time in seconds. Injectable so stopping rules can be tested.
using Clock = std::function<double()>;
Clock steady_clock_seconds();

struct TTOConfig {
  int max_epochs = 100;
  double max_seconds = 60.0;
  double learning_rate = 1e-4;
  LossWeights weights;
  ResizeMode resize = ResizeMode::Resample;

  void validate() const;
};

enum class StopReason { EpochBudget, TimeBudget };
std::string to_string(StopReason r);

struct RegistrationResult {
  Field3D ddf;                     // native geometry of the fixed image
  Volume3D warped;                 // moving resampled into the fixed grid
  std::vector<double> loss_trace;  // tto_loss before each update
  int epochs_run = 0;
  StopReason stop_reason = StopReason::EpochBudget;
  double seconds = 0.0;
  bool degraded = false;  // non-finite loss hit; best-so-far parameters used
  std::string error;      // register_batch: failure message for this pair
};

/// Clones `net` and optimises the clone on (fixed, moving) until
/// cfg.max_epochs updates have been made or cfg.max_seconds have elapsed,
/// checked before each epoch. `fixed` and `moving` must share a shape.
RegistrationResult tto_register(const RegistrationNetwork& net, const Volume3D& fixed, const Volume3D& moving,
                                const TTOConfig& cfg, const Clock& clock = {});

struct PairRef {
  const Volume3D* fixed;
  const Volume3D* moving;
};

/// Independent TTO per pair from the same base network, in input order.
/// A failing pair yields a result with `error` set and the batch continues.
std::vector<RegistrationResult> register_batch(const RegistrationNetwork& net, const std::vector<PairRef>& pairs,
                                               const TTOConfig& cfg, const Clock& clock = {});

}  // namespace ttoreg
