#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ugg/numerics/params.hpp"

namespace ugg {

struct GradReport {
  std::string parameter;
  std::vector<double> analytic;
  std::vector<double> numeric;
  double max_relative_error = 0.0;
  bool pass = false;
  std::string note;  // set when probing hit a non-finite loss
  // Entries excluded because a kink lies within 2h of the probe point.
  std::size_t kink_skipped = 0;
  // Entries whose mismatch is below the floating-point noise of the central
  // difference, 8 * eps * |f| / h.
  std::size_t roundoff_limited = 0;
};

// Evaluates the loss at `params`; fills `grads` (same names/shapes) when non-null.
using DifferentiableFn = std::function<double(const ParamSet& params, ParamSet* grads)>;

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  // Matrices with more entries than this are probed on a seeded subsample.
  std::size_t subsample_above = 10000;
  std::size_t subsample_count = 200;
  std::uint64_t seed = 0;
};

// Central differences (f(x+h) - f(x-h)) / 2h against the analytic gradient;
// relative error |a - n| / max(|a|, |n|, 1e-8). One report per parameter.
// A failing entry is excluded from the error when its absolute mismatch is
// within roundoff, or when a second-order one-sided difference matches the
// analytic gradient (a kink lies on the other side).
std::vector<GradReport> grad_check(const DifferentiableFn& loss, const ParamSet& params,
                                   const GradCheckOptions& options = {});

}  // namespace ugg
