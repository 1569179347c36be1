#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "scanfill/tensor.hpp"

namespace scanfill::ad {

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t worst_index = 0;
  double analytic = 0;  // at worst_index
  double numeric = 0;
};

/// Compares reverse-mode gradients of a scalar function with central finite
/// differences. Relative error per coordinate is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
/// `coords` restricts the comparison to a subset of coordinates.
GradCheckResult grad_check(const std::function<Tensord(const Tensord&)>& fn, const Tensord& point,
                           double step = 1e-5, const std::vector<std::size_t>& coords = {});

}  // namespace scanfill::ad
