#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "latentaug/tensor.hpp"

namespace latentaug {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction for a single parameter tensor.
class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(const Shape& shape, AdamConfig config = {});

  // One update in place. Rejects non-positive learning rates, shape
  // mismatches and non-finite gradients.
  void step(Tensor& params, const Tensor& grads, double lr);

  int64_t step_count() const { return step_count_; }
  const Tensor& first_moment() const { return m_; }
  const Tensor& second_moment() const { return v_; }

 private:
  AdamConfig config_;
  int64_t step_count_ = 0;
  Tensor m_, v_;
};

// Convenience wrapper over a named parameter set; keeps one AdamState per
// tensor, created on first use.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamConfig config = {}) : config_(config) {}

  void step(std::map<std::string, Tensor>& params, const std::map<std::string, Tensor>& grads,
            double lr);

 private:
  AdamConfig config_;
  std::map<std::string, AdamState> states_;
};

}  // namespace latentaug
