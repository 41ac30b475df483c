#pragma once

// 3D U-Net mapping a (fixed, moving) pair to a dense displacement field.
//
// Layout for L encoder levels:
//   enc[l]      3x3x3 conv + LeakyReLU at 1/2^l resolution, then 2x2x2 max-pool (l < L-1)
//   bottleneck  3x3x3 conv + LeakyReLU at the coarsest level
//   dec[0]      conv over concat(bottleneck, enc[L-1])
//   dec[j]      nearest x2 upsample of dec[j-1], concat with enc[L-1-j], conv
//   refine[r]   full-resolution 3x3x3 conv + LeakyReLU blocks
//   head        1x1x1 conv to 3 channels, linear, zero-initialised
// Inputs enter as two channels (fixed, moving).

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ttoreg/volume.hpp"

namespace ttoreg {

enum class NetworkRole { Teacher, Student };

std::string to_string(NetworkRole role);
NetworkRole network_role_from_string(const std::string& s);

struct NetworkConfig {
  std::vector<int> encoder_channels;
  int bottleneck_channels = 0;
  std::vector<int> decoder_channels;
  int refine_channels = 16;
  int refine_blocks = 3;
  double leaky_slope = 0.2;
  int in_channels = 2;
  int out_channels = 3;

  static NetworkConfig teacher();
  static NetworkConfig student();

  void validate() const;
  int levels() const { return static_cast<int>(encoder_channels.size()); }
  /// Each spatial dimension must be a multiple of this.
  int spatial_divisor() const { return 1 << (levels() - 1); }
  /// Closed-form scalar parameter count of the architecture.
  std::size_t expected_param_count() const;

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

struct ParamTensor {
  std::string name;
  std::vector<int> shape;  // conv weights: {out, in, k, k, k}; biases: {out}
  std::size_t offset = 0;
  std::size_t size = 0;
};

template <typename T>
class ForwardCache {
 public:
  ForwardCache();
  ~ForwardCache();
  ForwardCache(ForwardCache&&) noexcept;
  ForwardCache& operator=(ForwardCache&&) noexcept;

  struct Impl;
  Impl& impl() { return *impl_; }
  const Impl& impl() const { return *impl_; }

 private:
  std::unique_ptr<Impl> impl_;
};

template <typename T>
class Network {
 public:
  Network(NetworkConfig cfg, std::uint64_t seed, NetworkRole role);

  const NetworkConfig& config() const { return cfg_; }
  NetworkRole role() const { return role_; }
  std::uint64_t seed() const { return seed_; }

  std::size_t param_count() const { return params_.size(); }
  std::span<T> parameters() { return params_; }
  std::span<const T> parameters() const { return params_; }
  const std::vector<ParamTensor>& tensors() const { return tensors_; }
  std::span<T> tensor(const std::string& name);
  std::span<const T> tensor(const std::string& name) const;

  /// Predicts u for a pair of equally shaped volumes whose dimensions are
  /// multiples of spatial_divisor(). Stores activations in `cache` when given.
  DisplacementField<T> forward(const BasicVolume<T>& fixed, const BasicVolume<T>& moving,
                               ForwardCache<T>* cache = nullptr) const;

  /// Accumulates dLoss/dparams into grad_params given dLoss/du for the
  /// forward pass recorded in `cache`.
  void backward(const ForwardCache<T>& cache, const DisplacementField<T>& grad_u, std::span<T> grad_params) const;

  /// Same weights in another scalar type.
  template <typename U>
  Network<U> cast() const {
    Network<U> out(cfg_, seed_, role_);
    auto dst = out.parameters();
    for (std::size_t i = 0; i < params_.size(); ++i) dst[i] = static_cast<U>(params_[i]);
    return out;
  }

  /// 64-bit FNV-1a over the raw parameter bytes.
  std::uint64_t parameter_checksum() const;

 private:
  void layout();
  void initialise();

  NetworkConfig cfg_;
  std::uint64_t seed_;
  NetworkRole role_;
  std::vector<T> params_;
  std::vector<ParamTensor> tensors_;
};

using RegistrationNetwork = Network<float>;

}  // namespace ttoreg
