#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "fdif/autodiff.hpp"

namespace fdif {

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;  // where |analytic| > abs_floor
  double max_abs_err = 0.0;  // where |analytic| <= abs_floor
  int checked = 0;
  bool pass = false;
};

struct GradCheckConfig {
  double step = 1e-5;       // central-difference half step
  double rel_tol = 1e-4;
  double abs_tol = 1e-8;
  double abs_floor = 1e-8;  // |analytic| below this switches to absolute comparison
  int instances_per_op = 20;
  uint64_t seed = 13;
};

// Central-difference comparison of an analytic gradient against a scalar
// function of a flat vector. `f` must be a pure function of `x`.
GradCheckResult check_gradient(const std::string& name,
                               const std::function<double(const std::vector<double>&)>& f,
                               const std::vector<double>& x, const std::vector<double>& analytic,
                               const GradCheckConfig& cfg);

// The full finite-difference suite: every differentiable tape op on random
// instances, then the end-to-end kl-of-forward composition at n=8, m=4.
std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckConfig& cfg = {},
                                                 std::ostream* log = nullptr);

bool all_passed(const std::vector<GradCheckResult>& results);

}  // namespace fdif
