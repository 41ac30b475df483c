#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace ttoreg {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias-corrected moments over a flat parameter vector.
template <typename T>
class Adam {
 public:
  Adam(std::size_t n, AdamConfig cfg);

  void step(std::span<T> params, std::span<const T> grads);
  long steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<T> m_;
  std::vector<T> v_;
  long t_ = 0;
};

}  // namespace ttoreg
