#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "bevforge/ops.hpp"
#include "bevforge/tensor.hpp"

namespace bevforge::testing {

// Central-finite-difference gradient oracle, independent of the backward
// implementation it checks. `build` constructs the scalar loss tensor from
// the leaves' current data; the helper backprops once for the analytic
// gradients, then sweeps every element of every leaf with central
// differences of the re-built forward value.
//
// Error metric per element: |g_ad - g_fd| / max(1e-3, |g_ad|, |g_fd|), so
// near-zero gradients are held to an absolute tolerance of 1e-3 * tol.
struct GradCheckResult {
  double max_rel_err = 0.0;
  bool ok(double tol) const { return max_rel_err < tol; }
};

inline GradCheckResult grad_check_tensor(const std::function<Tensor()>& build,
                                         std::vector<Tensor> leaves, double h = 1e-5) {
  GradCheckResult result;
  for (Tensor& leaf : leaves) leaf.clear_grad();
  Tape::active().reset();
  Tensor loss = build();
  backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (Tensor& leaf : leaves)
    analytic.push_back(leaf.has_grad() ? leaf.grad() : std::vector<double>(leaf.numel(), 0.0));

  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor& leaf = leaves[li];
    std::vector<double>& data = leaf.mutable_data();
    for (int i = 0; i < leaf.numel(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      Tape::active().reset();
      const double fp = build().value();
      data[i] = saved - h;
      Tape::active().reset();
      const double fm = build().value();
      data[i] = saved;
      const double fd = (fp - fm) / (2.0 * h);
      const double ad = analytic[li][i];
      const double denom = std::max({1e-3, std::fabs(ad), std::fabs(fd)});
      result.max_rel_err = std::max(result.max_rel_err, std::fabs(ad - fd) / denom);
    }
  }
  Tape::active().reset();
  return result;
}

}  // namespace bevforge::testing
