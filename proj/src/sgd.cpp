#include "bevforge/sgd.hpp"

namespace bevforge {

SgdOptimizer::SgdOptimizer(std::vector<Tensor> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  velocity_.reserve(params_.size());
  for (const Tensor& p : params_) velocity_.emplace_back(p.numel(), 0.0);
}

void sgd_step(std::vector<Tensor>& params, std::vector<std::vector<double>>& velocity, double lr,
              double momentum, double weight_decay) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (!p.has_grad()) throw MissingGradient("sgd_step: parameter has no gradient");
    std::vector<double>& v = velocity[i];
    std::vector<double>& data = p.mutable_data();
    const std::vector<double>& g = p.grad();
    for (std::size_t j = 0; j < data.size(); ++j) {
      v[j] = momentum * v[j] + g[j] + weight_decay * data[j];
      data[j] -= lr * v[j];
    }
    p.zero_grad();
  }
}

void SgdOptimizer::step(double lr) { sgd_step(params_, velocity_, lr, momentum_, weight_decay_); }

void SgdOptimizer::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

}  // namespace bevforge
