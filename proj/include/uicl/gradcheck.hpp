#pragma once

// Central finite-difference check of the analytic backward pass, reported per
// parameter group, on the full training objective with a fixed draw.

#include <cstdint>
#include <string>
#include <vector>

#include "uicl/masked_dit.hpp"

namespace uicl {

struct GradcheckOptions {
  ModelConfig model{8, 16, 2, 2, 4, 10};
  std::uint64_t seed = 0;
  double step = 1e-4;
  double tolerance = 1e-4;
  double init_stddev = 0.3;
  // Relative error is |a - f| / max(|a|, |f|, floor).
  double denominator_floor = 1e-3;
  // Test fixture: scales the analytic gradient of this group by 1.5.
  std::string corrupt_group;
};

struct GradcheckGroup {
  std::string name;
  std::size_t count = 0;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckGroup> groups;
  double max_rel_error = 0.0;
  bool passed = false;
};

GradcheckReport run_gradcheck(const GradcheckOptions& options);

}  // namespace uicl
