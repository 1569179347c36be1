#pragma once

#include <string>
#include <vector>

namespace scanfill {

struct GradSuiteRow {
  std::string name;
  double max_rel_error = 0;
  double tolerance = 0;
  bool passed = false;
};

/// Names of the finite-difference checks, in run order.
std::vector<std::string> gradient_suite_names();

/// Runs every check in double precision. `corrupt` names one check whose
/// input gradient is scaled by 1.5 on the way back, so that check must fail;
/// unknown names raise ConfigError.
std::vector<GradSuiteRow> run_gradient_suite(const std::string& corrupt = {});

}  // namespace scanfill
