#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "clfa/tensor.hpp"

namespace clfa {

struct GradCheckOptions {
  double step = 1e-5;
  // Entries probed per input; 0 probes every entry. Probes are picked with a
  // fixed stride so repeated checks are reproducible.
  std::size_t max_probes_per_input = 0;
  // An input whose analytic and numeric gradients both stay below this in
  // infinity norm counts as vanishing: its relative error is 0 and only the
  // absolute error is reported. Finite-difference round-off sits near 1e-10.
  double vanishing = 1e-8;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t probes = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences. `f` must rebuild its graph from `inputs` on every call.
///
/// Relative error for an input is max|analytic - numeric| divided by the
/// larger infinity norm of the two gradient vectors (0 when both vanish).
/// A constant function has analytic gradient exactly 0.
GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& options = {});

}  // namespace clfa
