#include "clfa/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace clfa {

GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& options) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor out = f();
  if (out.numel() != 1) throw DimensionError("grad_check: function must return a scalar");
  out.backward();

  GradCheckReport report;
  for (auto& t : inputs) {
    const std::vector<double> analytic = t.grad();
    const std::size_t n = t.numel();
    std::size_t stride = 1;
    if (options.max_probes_per_input > 0 && n > options.max_probes_per_input) {
      stride = (n + options.max_probes_per_input - 1) / options.max_probes_per_input;
    }
    double max_diff = 0.0, scale = 0.0;
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < n; i += stride) {
      const double original = values[i];
      values[i] = original + options.step;
      const double up = f().item();
      values[i] = original - options.step;
      const double down = f().item();
      values[i] = original;
      const double numeric = (up - down) / (2.0 * options.step);
      max_diff = std::max(max_diff, std::abs(numeric - analytic[i]));
      scale = std::max({scale, std::abs(numeric), std::abs(analytic[i])});
      ++report.probes;
    }
    report.max_abs_error = std::max(report.max_abs_error, max_diff);
    if (scale > options.vanishing) report.max_rel_error = std::max(report.max_rel_error, max_diff / scale);
  }
  return report;
}

}  // namespace clfa
