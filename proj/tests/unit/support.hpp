#pragma once

#include <gtest/gtest.h>

#include <functional>
#include <random>
#include <string>

#include "ugg/numerics/autodiff.hpp"
#include "ugg/numerics/gradcheck.hpp"
#include "ugg/numerics/params.hpp"

namespace ugg::testing {

// Independent of RngStream so oracles do not share the code under test.
inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& gen, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = dist(gen);
  return m;
}

// Naive triple loop, written apart from the library's matmul.
inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      out(i, j) = acc;
    }
  return out;
}

inline void expect_near(const Matrix& a, const Matrix& b, double tol, const std::string& what = "") {
  ASSERT_EQ(a.rows(), b.rows()) << what;
  ASSERT_EQ(a.cols(), b.cols()) << what;
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << what << " entry " << i;
}

using ScalarGraph = std::function<Var(Binding&)>;

// Runs grad_check on a scalar graph built from `params`.
inline std::vector<GradReport> check_graph(const ParamSet& params, const ScalarGraph& build,
                                           double tolerance = 1e-4) {
  DifferentiableFn fn = [&](const ParamSet& at, ParamSet* grads) {
    Tape tape(grads != nullptr);
    Binding p(tape, at);
    Var out = build(p);
    if (grads) {
      tape.backward(out);
      *grads = p.gradients();
    }
    return out.scalar();
  };
  GradCheckOptions opt;
  opt.tolerance = tolerance;
  return grad_check(fn, params, opt);
}

inline void expect_all_pass(const std::vector<GradReport>& reports) {
  ASSERT_FALSE(reports.empty());
  for (const GradReport& r : reports)
    EXPECT_TRUE(r.pass) << r.parameter << " max rel err " << r.max_relative_error << " " << r.note;
}

}  // namespace ugg::testing
