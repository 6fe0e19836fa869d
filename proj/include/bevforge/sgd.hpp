#pragma once

#include <vector>

#include "bevforge/tensor.hpp"

namespace bevforge {

// SGD with momentum and weight decay:
//   v <- momentum·v + grad + weight_decay·param
//   param <- param - lr·v
// Gradients are zeroed after each step. Throws MissingGradient when a
// parameter has no populated gradient.
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<Tensor> params, double momentum, double weight_decay);

  void step(double lr);
  void zero_grad();

  const std::vector<Tensor>& params() const { return params_; }
  std::vector<std::vector<double>>& velocities() { return velocity_; }
  const std::vector<std::vector<double>>& velocities() const { return velocity_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  double momentum_;
  double weight_decay_;
};

// One-shot form of the update (stateless callers own the velocity buffers).
void sgd_step(std::vector<Tensor>& params, std::vector<std::vector<double>>& velocity, double lr,
              double momentum, double weight_decay);

}  // namespace bevforge
