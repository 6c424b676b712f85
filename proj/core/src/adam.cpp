#include "latentaug/adam.hpp"

#include <cmath>

#include "latentaug/error.hpp"

namespace latentaug {

AdamState::AdamState(const Shape& shape, AdamConfig config)
    : config_(config), m_(shape), v_(shape) {}

void AdamState::step(Tensor& params, const Tensor& grads, double lr) {
  check(lr > 0.0, "adam: learning rate must be positive, got ", lr);
  check(params.same_shape(m_), "adam: params shape ", shape_str(params.shape()),
        " does not match state shape ", shape_str(m_.shape()));
  check(grads.same_shape(m_), "adam: grads shape ", shape_str(grads.shape()),
        " does not match state shape ", shape_str(m_.shape()));
  check(grads.all_finite(), "adam: non-finite gradient");

  ++step_count_;
  double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_count_));
  double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_count_));
  for (int64_t i = 0; i < params.numel(); ++i) {
    double gi = grads[i];
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * gi;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * gi * gi;
    double mhat = m_[i] / c1;
    double vhat = v_[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
  }
}

void AdamOptimizer::step(std::map<std::string, Tensor>& params,
                         const std::map<std::string, Tensor>& grads, double lr) {
  for (auto& [name, tensor] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) continue;
    auto [state_it, inserted] = states_.try_emplace(name, tensor.shape(), config_);
    state_it->second.step(tensor, it->second, lr);
  }
}

}  // namespace latentaug
