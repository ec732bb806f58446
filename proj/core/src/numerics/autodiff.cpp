#include "ugg/numerics/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ugg/errors.hpp"

namespace ugg {

const Matrix& Var::value() const { return tape_->value(*this); }
const Matrix& Var::grad() const { return tape_->grad_or_empty(*this); }
bool Var::requires_grad() const { return tape_->requires_grad(*this); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ContractViolation("Var::scalar on " + v.shape_string());
  return v[0];
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, recording_, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::push(Matrix value, std::initializer_list<Var> inputs, Backward fn) {
  return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Tape::push(Matrix value, std::span<const Var> inputs, Backward fn) {
  bool needs = false;
  if (recording_) {
    for (const Var& in : inputs) {
      if (in.tape_ != this) throw ContractViolation("Tape::push: input from another tape");
      needs = needs || nodes_[in.id_].requires_grad;
    }
  }
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(fn) : Backward{}});
  return Var(this, nodes_.size() - 1);
}

Matrix& Tape::grad(Var v) {
  Node& n = nodes_[v.id_];
  if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var root) {
  if (!recording_) throw ContractViolation("Tape::backward on a non-recording tape");
  if (value(root).size() != 1) throw ContractViolation("Tape::backward: root must be scalar");
  grad(root)[0] = 1.0;
  for (std::size_t i = root.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && !n.grad.empty()) n.backward(*this, n.value, n.grad);
  }
}

namespace ad {

namespace {

template <typename F>
Matrix map(const Matrix& a, F f) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

Tape& tape_of(Var a) {
  if (!a.valid()) throw ContractViolation("autodiff: invalid Var");
  return *a.tape();
}

double stable_sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

double stable_softplus(double v) {
  return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}

}  // namespace

Var add(Var a, Var b) {
  Tape& t = tape_of(a);
  return t.push(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix&, const Matrix& g) {
    if (t.requires_grad(a)) t.grad(a) += g;
    if (t.requires_grad(b)) t.grad(b) += g;
  });
}

Var add_row(Var a, Var b) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (bv.rows() != 1 || bv.cols() != av.cols()) {
    throw ContractViolation("add_row: bias " + bv.shape_string() + " vs " + av.shape_string());
  }
  Matrix out = av;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv[c];
  return t.push(std::move(out), {a, b}, [a, b](Tape& t, const Matrix&, const Matrix& g) {
    if (t.requires_grad(a)) t.grad(a) += g;
    if (t.requires_grad(b)) {
      Matrix& gb = t.grad(b);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g(r, c);
    }
  });
}

Var mul_row(Var a, Var b) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (bv.rows() != 1 || bv.cols() != av.cols()) {
    throw ContractViolation("mul_row: scale " + bv.shape_string() + " vs " + av.shape_string());
  }
  Matrix out = av;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) *= bv[c];
  return t.push(std::move(out), {a, b}, [a, b](Tape& t, const Matrix&, const Matrix& g) {
    const Matrix& av = t.value(a);
    const Matrix& bv = t.value(b);
    if (t.requires_grad(a)) {
      Matrix& ga = t.grad(a);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) += g(r, c) * bv[c];
    }
    if (t.requires_grad(b)) {
      Matrix& gb = t.grad(b);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g(r, c) * av(r, c);
    }
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a);
  return t.push(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix&, const Matrix& g) {
    if (t.requires_grad(a)) t.grad(a) += g;
    if (t.requires_grad(b)) t.grad(b) -= g;
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a);
  return t.push(hadamard(a.value(), b.value()), {a, b},
                [a, b](Tape& t, const Matrix&, const Matrix& g) {
                  if (t.requires_grad(a)) t.grad(a) += hadamard(g, t.value(b));
                  if (t.requires_grad(b)) t.grad(b) += hadamard(g, t.value(a));
                });
}

Var scale(Var a, double s) {
  Tape& t = tape_of(a);
  return t.push(a.value() * s, {a},
                [a, s](Tape& t, const Matrix&, const Matrix& g) { t.grad(a) += g * s; });
}

Var scale_by(Var a, Var s) {
  Tape& t = tape_of(a);
  const double sv = s.scalar();
  return t.push(a.value() * sv, {a, s}, [a, s](Tape& t, const Matrix&, const Matrix& g) {
    const double sv = t.value(s)[0];
    if (t.requires_grad(a)) t.grad(a) += g * sv;
    if (t.requires_grad(s)) {
      const Matrix& av = t.value(a);
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
      t.grad(s)[0] += acc;
    }
  });
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a);
  return t.push(ugg::matmul(a.value(), b.value()), {a, b},
                [a, b](Tape& t, const Matrix&, const Matrix& g) {
                  if (t.requires_grad(a)) t.grad(a) += matmul_nt(g, t.value(b));
                  if (t.requires_grad(b)) t.grad(b) += matmul_tn(t.value(a), g);
                });
}

Var affine(Var x, Var w, Var b) { return add_row(matmul(x, w), b); }

Var relu(Var a) {
  Tape& t = tape_of(a);
  return t.push(map(a.value(), [](double v) { return v > 0.0 ? v : 0.0; }), {a},
                [a](Tape& t, const Matrix& y, const Matrix& g) {
                  Matrix& ga = t.grad(a);
                  for (std::size_t i = 0; i < g.size(); ++i)
                    if (y[i] > 0.0) ga[i] += g[i];
                });
}

Var sigmoid(Var a) {
  Tape& t = tape_of(a);
  return t.push(map(a.value(), stable_sigmoid), {a},
                [a](Tape& t, const Matrix& y, const Matrix& g) {
                  Matrix& ga = t.grad(a);
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
                });
}

Var softplus(Var a) {
  Tape& t = tape_of(a);
  return t.push(map(a.value(), stable_softplus), {a},
                [a](Tape& t, const Matrix&, const Matrix& g) {
                  const Matrix& av = t.value(a);
                  Matrix& ga = t.grad(a);
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * stable_sigmoid(av[i]);
                });
}

Var exp(Var a) {
  Tape& t = tape_of(a);
  return t.push(map(a.value(), [](double v) { return std::exp(v); }), {a},
                [a](Tape& t, const Matrix& y, const Matrix& g) { t.grad(a) += hadamard(g, y); });
}

Var square(Var a) {
  Tape& t = tape_of(a);
  return t.push(map(a.value(), [](double v) { return v * v; }), {a},
                [a](Tape& t, const Matrix&, const Matrix& g) {
                  const Matrix& av = t.value(a);
                  Matrix& ga = t.grad(a);
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * av[i] * g[i];
                });
}

Var clamp_min(Var a, double floor) {
  Tape& t = tape_of(a);
  return t.push(map(a.value(), [floor](double v) { return v < floor ? floor : v; }), {a},
                [a, floor](Tape& t, const Matrix&, const Matrix& g) {
                  const Matrix& av = t.value(a);
                  Matrix& ga = t.grad(a);
                  for (std::size_t i = 0; i < g.size(); ++i)
                    if (av[i] >= floor) ga[i] += g[i];
                });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  return t.push(Matrix(1, 1, ugg::sum(a.value())), {a},
                [a](Tape& t, const Matrix&, const Matrix& g) {
                  Matrix& ga = t.grad(a);
                  for (double& v : ga.values()) v += g[0];
                });
}

Var mean(Var a) {
  const auto n = static_cast<double>(a.value().size());
  if (n == 0) throw ContractViolation("mean of empty matrix");
  return scale(sum(a), 1.0 / n);
}

Var dot_const(Var a, const Matrix& c) {
  Tape& t = tape_of(a);
  require_same_shape(a.value(), c, "dot_const");
  double acc = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) acc += a.value()[i] * c[i];
  return t.push(Matrix(1, 1, acc), {a},
                [a, c](Tape& t, const Matrix&, const Matrix& g) { t.grad(a) += c * g[0]; });
}

Var rows(Var a, std::size_t begin, std::size_t end) {
  Tape& t = tape_of(a);
  return t.push(a.value().row_slice(begin, end), {a},
                [a, begin](Tape& t, const Matrix&, const Matrix& g) {
                  Matrix& ga = t.grad(a);
                  for (std::size_t r = 0; r < g.rows(); ++r)
                    for (std::size_t c = 0; c < g.cols(); ++c) ga(begin + r, c) += g(r, c);
                });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractViolation("concat_cols: no parts");
  Tape& t = tape_of(parts[0]);
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ContractViolation("concat_cols: row counts differ");
    offsets.push_back(cols);
    cols += p.cols();
  }
  Matrix out(rows, cols);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Matrix& pv = parts[i].value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < pv.cols(); ++c) out(r, offsets[i] + c) = pv(r, c);
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return t.push(std::move(out), parts,
                [ins, offsets](Tape& t, const Matrix&, const Matrix& g) {
                  for (std::size_t i = 0; i < ins.size(); ++i) {
                    if (!t.requires_grad(ins[i])) continue;
                    Matrix& gi = t.grad(ins[i]);
                    for (std::size_t r = 0; r < gi.rows(); ++r)
                      for (std::size_t c = 0; c < gi.cols(); ++c) gi(r, c) += g(r, offsets[i] + c);
                  }
                });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractViolation("concat_rows: no parts");
  Tape& t = tape_of(parts[0]);
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw ContractViolation("concat_rows: column counts differ");
    offsets.push_back(rows);
    rows += p.rows();
  }
  Matrix out(rows, cols);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Matrix& pv = parts[i].value();
    std::copy(pv.values().begin(), pv.values().end(),
              out.values().begin() + static_cast<std::ptrdiff_t>(offsets[i] * cols));
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return t.push(std::move(out), parts,
                [ins, offsets, cols](Tape& t, const Matrix&, const Matrix& g) {
                  for (std::size_t i = 0; i < ins.size(); ++i) {
                    if (!t.requires_grad(ins[i])) continue;
                    Matrix& gi = t.grad(ins[i]);
                    const std::size_t base = offsets[i] * cols;
                    for (std::size_t k = 0; k < gi.size(); ++k) gi[k] += g[base + k];
                  }
                });
}

Var mean_rows(Var a) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  if (av.rows() == 0) throw ContractViolation("mean_rows: no rows");
  Matrix out(1, av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c) out[c] += av(r, c);
  const double inv = 1.0 / static_cast<double>(av.rows());
  out *= inv;
  return t.push(std::move(out), {a}, [a, inv](Tape& t, const Matrix&, const Matrix& g) {
    Matrix& ga = t.grad(a);
    for (std::size_t r = 0; r < ga.rows(); ++r)
      for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += g[c] * inv;
  });
}

Var batch_standardize(Var a, double eps) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  const std::size_t n = av.rows();
  if (n == 0) throw ContractViolation("batch_standardize: no rows");
  if (!(eps > 0.0)) throw DomainError("batch_standardize: eps must be positive");
  std::vector<double> inv_std(av.cols());
  Matrix out(n, av.cols());
  for (std::size_t c = 0; c < av.cols(); ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < n; ++r) mean += av(r, c);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t r = 0; r < n; ++r) var += (av(r, c) - mean) * (av(r, c) - mean);
    var /= static_cast<double>(n);
    inv_std[c] = 1.0 / std::sqrt(var + eps);
    for (std::size_t r = 0; r < n; ++r) out(r, c) = (av(r, c) - mean) * inv_std[c];
  }
  return t.push(std::move(out), {a}, [a, inv_std](Tape& t, const Matrix& y, const Matrix& g) {
    Matrix& ga = t.grad(a);
    const std::size_t n = y.rows();
    for (std::size_t c = 0; c < y.cols(); ++c) {
      double mean_g = 0.0, mean_gy = 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        mean_g += g(r, c);
        mean_gy += g(r, c) * y(r, c);
      }
      mean_g /= static_cast<double>(n);
      mean_gy /= static_cast<double>(n);
      for (std::size_t r = 0; r < n; ++r)
        ga(r, c) += inv_std[c] * (g(r, c) - mean_g - y(r, c) * mean_gy);
    }
  });
}

Var max_rows(Var a) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  if (av.rows() == 0) throw ContractViolation("max_rows: no rows");
  Matrix out(1, av.cols());
  std::vector<std::size_t> arg(av.cols(), 0);
  for (std::size_t c = 0; c < av.cols(); ++c) {
    out[c] = av(0, c);
    for (std::size_t r = 1; r < av.rows(); ++r) {
      if (av(r, c) > out[c]) {
        out[c] = av(r, c);
        arg[c] = r;
      }
    }
  }
  return t.push(std::move(out), {a}, [a, arg](Tape& t, const Matrix&, const Matrix& g) {
    Matrix& ga = t.grad(a);
    for (std::size_t c = 0; c < g.cols(); ++c) ga(arg[c], c) += g[c];
  });
}

Var softmax_rows(Var a) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  Matrix out(av.rows(), av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    const auto row = av.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t c = 0; c < av.cols(); ++c) z += out(r, c) = std::exp(row[c] - m);
    for (std::size_t c = 0; c < av.cols(); ++c) out(r, c) /= z;
  }
  return t.push(std::move(out), {a}, [a](Tape& t, const Matrix& y, const Matrix& g) {
    Matrix& ga = t.grad(a);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) ga(r, c) += y(r, c) * (g(r, c) - dot);
    }
  });
}

Var gather(Var a, std::span<const std::pair<std::size_t, std::size_t>> at) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  Matrix out(1, at.size());
  for (std::size_t i = 0; i < at.size(); ++i) {
    if (at[i].first >= av.rows() || at[i].second >= av.cols())
      throw ContractViolation("gather: index out of range");
    out[i] = av(at[i].first, at[i].second);
  }
  std::vector<std::pair<std::size_t, std::size_t>> idx(at.begin(), at.end());
  return t.push(std::move(out), {a}, [a, idx](Tape& t, const Matrix&, const Matrix& g) {
    Matrix& ga = t.grad(a);
    for (std::size_t i = 0; i < idx.size(); ++i) ga(idx[i].first, idx[i].second) += g[i];
  });
}

Var normalize_sum(Var a) {
  Tape& t = tape_of(a);
  const double s = ugg::sum(a.value());
  if (s <= 0.0) throw DomainError("normalize_sum: nonpositive total");
  return t.push(a.value() * (1.0 / s), {a}, [a, s](Tape& t, const Matrix& y, const Matrix& g) {
    double dot = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * y[i];
    Matrix& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += (g[i] - dot) / s;
  });
}

Var reparameterize(Var mu, Var sigma, const Matrix& eps) {
  require_same_shape(mu.value(), sigma.value(), "reparameterize");
  require_same_shape(mu.value(), eps, "reparameterize(eps)");
  for (double s : sigma.value().values())
    if (s < 0.0) throw DomainError("reparameterize: negative sigma");
  Tape& t = tape_of(mu);
  return t.push(mu.value() + hadamard(eps, sigma.value()), {mu, sigma},
                [mu, sigma, eps](Tape& t, const Matrix&, const Matrix& g) {
                  if (t.requires_grad(mu)) t.grad(mu) += g;
                  if (t.requires_grad(sigma)) t.grad(sigma) += hadamard(g, eps);
                });
}

Var gaussian_kl(Var mu, Var sigma) {
  const Matrix& m = mu.value();
  const Matrix& s = sigma.value();
  require_same_shape(m, s, "gaussian_kl");
  if (m.empty()) throw ContractViolation("gaussian_kl: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (s[i] <= 0.0) throw DomainError("gaussian_kl: sigma must be positive");
    acc += -0.5 * (1.0 + std::log(s[i] * s[i]) - m[i] * m[i] - s[i] * s[i]);
  }
  const double inv = 1.0 / static_cast<double>(m.size());
  Tape& t = tape_of(mu);
  return t.push(Matrix(1, 1, acc * inv), {mu, sigma},
                [mu, sigma, inv](Tape& t, const Matrix&, const Matrix& g) {
                  const Matrix& m = t.value(mu);
                  const Matrix& s = t.value(sigma);
                  if (t.requires_grad(mu)) {
                    Matrix& gm = t.grad(mu);
                    for (std::size_t i = 0; i < m.size(); ++i) gm[i] += g[0] * inv * m[i];
                  }
                  if (t.requires_grad(sigma)) {
                    Matrix& gs = t.grad(sigma);
                    for (std::size_t i = 0; i < s.size(); ++i)
                      gs[i] += g[0] * inv * (s[i] - 1.0 / s[i]);
                  }
                });
}

}  // namespace ad
}  // namespace ugg
