#include "ttoreg/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace ttoreg {

template <typename T>
Adam<T>::Adam(std::size_t n, AdamConfig cfg) : cfg_(cfg), m_(n, T(0)), v_(n, T(0)) {
  if (!(cfg.learning_rate >= 0.0)) throw std::invalid_argument("Adam: learning rate must be >= 0");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) {
    throw std::invalid_argument("Adam: betas must be in [0, 1)");
  }
}

template <typename T>
void Adam<T>::step(std::span<T> params, std::span<const T> grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) throw std::invalid_argument("Adam: size mismatch");
  ++t_;
  if (cfg_.learning_rate == 0.0) return;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double step = cfg_.learning_rate / c1;
  const double inv_c2 = 1.0 / c2;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    const double m = b1 * m_[i] + (1.0 - b1) * g;
    const double v = b2 * v_[i] + (1.0 - b2) * g * g;
    m_[i] = static_cast<T>(m);
    v_[i] = static_cast<T>(v);
    params[i] = static_cast<T>(params[i] - step * m / (std::sqrt(v * inv_c2) + cfg_.epsilon));
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace ttoreg
