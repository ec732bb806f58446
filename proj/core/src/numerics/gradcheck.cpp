#include "ugg/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ugg/numerics/rng.hpp"

namespace ugg {

namespace {

double relative_error(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8}); }

std::vector<std::size_t> probe_indices(std::size_t n, const GradCheckOptions& opt,
                                       const std::string& name) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (n <= opt.subsample_above) return idx;
  // Partial Fisher-Yates with a stream keyed by the parameter name.
  RngStream rng(opt.seed, derive_stream(0, name.c_str()));
  const std::size_t k = std::min(opt.subsample_count, n);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

std::vector<GradReport> grad_check(const DifferentiableFn& loss, const ParamSet& params,
                                   const GradCheckOptions& opt) {
  ParamSet analytic = params.zeros_like();
  const double base = loss(params, &analytic);

  std::vector<GradReport> reports;
  ParamSet probe = params;
  for (auto& [name, value] : probe.entries()) {
    GradReport rep;
    rep.parameter = name;
    if (!std::isfinite(base)) {
      rep.note = "non-finite loss at base point";
      rep.max_relative_error = std::numeric_limits<double>::infinity();
      reports.push_back(std::move(rep));
      continue;
    }
    const Matrix& grad = analytic.at(name);
    for (std::size_t i : probe_indices(value.size(), opt, name)) {
      const double orig = value[i];
      value[i] = orig + opt.step;
      const double up = loss(probe, nullptr);
      value[i] = orig - opt.step;
      const double down = loss(probe, nullptr);
      value[i] = orig;

      const double a = grad[i];
      const double n = (up - down) / (2.0 * opt.step);
      rep.analytic.push_back(a);
      rep.numeric.push_back(n);
      if (!std::isfinite(up) || !std::isfinite(down)) {
        rep.note = "non-finite loss while probing entry " + std::to_string(i);
        rep.max_relative_error = std::numeric_limits<double>::infinity();
        continue;
      }
      const double rel = relative_error(a, n);
      if (rel > opt.tolerance) {
        // Floating-point noise of the central difference.
        const double noise = 8.0 * std::numeric_limits<double>::epsilon() *
                             std::max({std::abs(base), std::abs(up), std::abs(down)}) / opt.step;
        if (std::abs(a - n) <= noise) {
          ++rep.roundoff_limited;
          continue;
        }
        // Second-order one-sided stencils; for smooth f either one is less
        // accurate than the central difference. Their coefficients carry four
        // times the central noise.
        value[i] = orig + 2.0 * opt.step;
        const double up2 = loss(probe, nullptr);
        value[i] = orig - 2.0 * opt.step;
        const double down2 = loss(probe, nullptr);
        value[i] = orig;
        const double forward = (-up2 + 4.0 * up - 3.0 * base) / (2.0 * opt.step);
        const double backward = (3.0 * base - 4.0 * down + down2) / (2.0 * opt.step);
        const double side_noise = 4.0 * std::max({noise, 8.0 * std::numeric_limits<double>::epsilon() *
                                                             std::max(std::abs(up2), std::abs(down2)) / opt.step});
        const auto agrees = [&](double estimate) {
          return relative_error(a, estimate) <= opt.tolerance || std::abs(a - estimate) <= side_noise;
        };
        if (agrees(forward) || agrees(backward)) {
          ++rep.kink_skipped;
          continue;
        }
      }
      rep.max_relative_error = std::max(rep.max_relative_error, rel);
    }
    rep.pass = rep.note.empty() && rep.max_relative_error <= opt.tolerance;
    reports.push_back(std::move(rep));
  }
  return reports;
}

}  // namespace ugg
