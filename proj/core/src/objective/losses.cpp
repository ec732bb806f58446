#include <algorithm>
#include <cmath>
#include <map>

#include "ugg/errors.hpp"
#include "ugg/objective.hpp"

namespace ugg::objective {

LossBreakdown total_loss(const LossBreakdown& parts, const TrainConfig& cfg) {
  const VariantFlags f = flags_of(cfg.variant);
  LossBreakdown out = parts;
  for (std::size_t m = 0; m < kModalityCount; ++m) {
    if (!f.graph_uncertainty && !f.moe_uncertainty) out.kl_cs[m] = 0.0;
    if (!f.moe_uncertainty) out.routing[m] = 0.0;
    if (!f.moe) out.balance[m] = 0.0;
  }
  out.total = out.ce + out.tri;
  for (std::size_t m = 0; m < kModalityCount; ++m) {
    out.total += cfg.lambda1 * out.kl_cs[m] + cfg.lambda2 * out.routing[m] + cfg.lambda3 * out.balance[m];
  }
  return out;
}

Var cross_entropy_id(Var logits, std::span<const std::uint32_t> labels) {
  const Matrix& z = logits.value();
  if (labels.size() != z.rows()) {
    throw ContractViolation("cross_entropy_id: " + std::to_string(labels.size()) + " labels for " +
                            std::to_string(z.rows()) + " rows");
  }
  if (z.rows() == 0) throw ContractViolation("cross_entropy_id: empty batch");
  Matrix prob(z.rows(), z.cols());
  double loss = 0.0;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    if (labels[r] >= z.cols()) {
      throw ContractViolation("cross_entropy_id: label " + std::to_string(labels[r]) + " out of range [0, " +
                              std::to_string(z.cols()) + ")");
    }
    const auto row = z.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double v : row) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    loss += lse - row[labels[r]];
    for (std::size_t c = 0; c < z.cols(); ++c) prob(r, c) = std::exp(row[c] - lse);
  }
  const double inv_b = 1.0 / static_cast<double>(z.rows());
  std::vector<std::uint32_t> lab(labels.begin(), labels.end());
  return logits.tape()->push(Matrix(1, 1, loss * inv_b), {logits},
                             [logits, prob, lab, inv_b](Tape& t, const Matrix&, const Matrix& g) {
                               Matrix& gz = t.grad(logits);
                               const double s = g[0] * inv_b;
                               for (std::size_t r = 0; r < prob.rows(); ++r) {
                                 for (std::size_t c = 0; c < prob.cols(); ++c) gz(r, c) += s * prob(r, c);
                                 gz(r, lab[r]) -= s;
                               }
                             });
}

double cross_entropy_id(const Matrix& logits, std::span<const std::uint32_t> labels) {
  Tape tape(false);
  return cross_entropy_id(tape.constant(logits), labels).scalar();
}

namespace {

constexpr double kDistFloor = 1e-12;

void check_triplet_batch(std::span<const std::uint32_t> labels) {
  std::map<std::uint32_t, std::size_t> counts;
  for (std::uint32_t l : labels) ++counts[l];
  if (counts.size() < 2) throw ContractViolation("batch_hard_triplet: need at least two identities");
  for (const auto& [label, n] : counts) {
    if (n < 2) {
      throw ContractViolation("batch_hard_triplet: identity " + std::to_string(label) +
                              " has a single instance in the batch");
    }
  }
}

}  // namespace

Var batch_hard_triplet(Var features, std::span<const std::uint32_t> labels, double margin) {
  const Matrix& x = features.value();
  const std::size_t b = x.rows();
  if (labels.size() != b) throw ContractViolation("batch_hard_triplet: label count != rows");
  check_triplet_batch(labels);

  Matrix dist(b, b);
  Matrix sq(b, b);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = i + 1; j < b; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < x.cols(); ++c) {
        const double d = x(i, c) - x(j, c);
        s += d * d;
      }
      sq(i, j) = sq(j, i) = s;
      dist(i, j) = dist(j, i) = std::sqrt(std::max(s, kDistFloor));
    }
    dist(i, i) = std::sqrt(kDistFloor);
  }

  struct Active {
    std::size_t anchor, pos, neg;
  };
  std::vector<Active> active;
  double loss = 0.0;
  for (std::size_t a = 0; a < b; ++a) {
    std::size_t pos = b, neg = b;
    for (std::size_t j = 0; j < b; ++j) {
      if (j == a) continue;
      if (labels[j] == labels[a]) {
        if (pos == b || dist(a, j) > dist(a, pos)) pos = j;
      } else if (neg == b || dist(a, j) < dist(a, neg)) {
        neg = j;
      }
    }
    const double v = dist(a, pos) - dist(a, neg) + margin;
    if (v > 0.0) {
      loss += v;
      active.push_back({a, pos, neg});
    }
  }
  const double inv_b = 1.0 / static_cast<double>(b);
  return features.tape()->push(
      Matrix(1, 1, loss * inv_b), {features},
      [features, active, dist, sq, inv_b](Tape& t, const Matrix&, const Matrix& g) {
        const Matrix& x = t.value(features);
        Matrix& gx = t.grad(features);
        const double s = g[0] * inv_b;
        // d|x_i - x_j| / dx_i = (x_i - x_j) / |x_i - x_j|; zero under the floor.
        auto push_pair = [&](std::size_t i, std::size_t j, double w) {
          if (sq(i, j) <= kDistFloor) return;
          const double k = w / dist(i, j);
          for (std::size_t c = 0; c < x.cols(); ++c) {
            const double d = (x(i, c) - x(j, c)) * k;
            gx(i, c) += d;
            gx(j, c) -= d;
          }
        };
        for (const auto& e : active) {
          push_pair(e.anchor, e.pos, s);
          push_pair(e.anchor, e.neg, -s);
        }
      });
}

double batch_hard_triplet(const Matrix& features, std::span<const std::uint32_t> labels, double margin) {
  Tape tape(false);
  return batch_hard_triplet(tape.constant(features), labels, margin).scalar();
}

}  // namespace ugg::objective
