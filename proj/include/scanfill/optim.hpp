#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "scanfill/tensor.hpp"

namespace scanfill::ad {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Step-decayed learning rate: lr * decay^floor(epoch / step_epochs).
double step_decay_lr(double base_lr, double decay, std::size_t step_epochs, std::size_t epoch);

template <typename T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, AdamConfig config);

  /// Applies one update from the parameters' accumulated gradients, then
  /// clears them.
  void step();
  void zero_grad();

  void set_lr(double lr) { config_.lr = lr; }
  double lr() const { return config_.lr; }
  std::size_t steps() const { return steps_; }

  /// First/second moment buffers (one per parameter, same order) and the step
  /// counter, for checkpointing.
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }
  void set_steps(std::size_t s) { steps_ = s; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<Tensor<T>> m_, v_;
  AdamConfig config_;
  std::size_t steps_ = 0;
};

}  // namespace scanfill::ad
