#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lsk/tensor.hpp"

namespace lsk {

// One parameter buffer to check: the live storage the loss closure reads,
// and the analytic gradient claimed for it.
struct ParamView {
  std::string name;
  double* data = nullptr;
  i64 count = 0;
  const double* analytic = nullptr;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  i64 worst_index = -1;
  i64 coords_checked = 0;

  bool passed(double tol) const { return max_rel_err < tol; }
};

// Central finite differences against analytic gradients. For each selected
// coordinate v: fd = (loss(v+eps) - loss(v-eps)) / (2 eps), error =
// |fd - analytic| / max(1, |fd|, |analytic|). Coordinates are perturbed in
// place and restored; stride subsamples large buffers deterministically.
GradCheckReport check_gradients(const std::function<double()>& loss,
                                std::span<ParamView> params, double eps = 1e-5,
                                i64 stride = 1);

}  // namespace lsk
