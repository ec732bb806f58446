#include "ugg/gpgr.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "ugg/errors.hpp"

namespace ugg::gpgr {

namespace {

Var phi_var(Binding& p) { return ad::softplus(p[kPhiName]); }

// Last-layer squashing of the std channel into (0, phi].
Var squash_sigma(Var logits, Binding& p) {
  return ad::clamp_min(ad::scale_by(ad::sigmoid(logits), phi_var(p)), kSigmaFloor);
}

Matrix knn_keep_mask(const Matrix& sq_dist, std::size_t knn) {
  const std::size_t n = sq_dist.rows();
  Matrix keep(n, n, 1.0);
  if (knn == 0 || knn + 1 >= n) return keep;
  Matrix row_keep(n, n, 0.0);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < n; ++i) {
    order.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) order.push_back(j);
    // Largest similarity == smallest distance; ties to the lower index.
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return sq_dist(i, a) < sq_dist(i, b); });
    for (std::size_t r = 0; r < knn; ++r) row_keep(i, order[r]) = 1.0;
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      keep(i, j) = (i == j || row_keep(i, j) > 0.0 || row_keep(j, i) > 0.0) ? 1.0 : 0.0;
  return keep;
}

void check_dims(const GpgrParams& params, std::size_t cols) {
  if (params.config.dim != cols) {
    throw ContractViolation("gpgr: token width " + std::to_string(cols) +
                            " does not match configured D=" + std::to_string(params.config.dim));
  }
}

}  // namespace

std::string fc_name(const GpgrConfig& cfg, Modality m, const char* which, const char* part) {
  std::string base = "gpgr.";
  if (!cfg.shared_projection) base += std::string(name_of(m)) + ".";
  return base + which + "." + part;
}

std::string layer_name(Modality m, const char* channel, std::size_t layer) {
  return "gpgr." + std::string(name_of(m)) + "." + channel + "." + std::to_string(layer);
}

std::string fuse_name(Modality m) { return "gpgr." + std::string(name_of(m)) + ".fuse"; }

double phi_to_raw(double phi) {
  if (!(phi > 0.0)) throw ConfigError("phi must be positive");
  return phi > 30.0 ? phi : std::log(std::expm1(phi));
}

double phi_value(const ParamSet& params) {
  const double raw = params.at(kPhiName)[0];
  return raw > 0.0 ? raw + std::log1p(std::exp(-raw)) : std::log1p(std::exp(raw));
}

void init_params(ParamSet& params, const GpgrConfig& cfg, RngStream& rng) {
  const std::size_t d = cfg.dim;
  if (cfg.layers < 1) throw ConfigError("gpgr.L must be >= 1");
  auto add_fc = [&](Modality m) {
    params.add(fc_name(cfg, m, "fc_mu", "w"), glorot_uniform(d, d, rng));
    params.add(fc_name(cfg, m, "fc_mu", "b"), Matrix(1, d));
    if (cfg.uncertainty) {
      params.add(fc_name(cfg, m, "fc_sigma", "w"), glorot_uniform(d, d, rng));
      params.add(fc_name(cfg, m, "fc_sigma", "b"), Matrix(1, d));
    }
  };
  if (cfg.shared_projection) add_fc(Modality::R);
  if (cfg.uncertainty) params.add(kPhiName, Matrix(1, 1, phi_to_raw(1.0)));
  for (Modality m : kModalities) {
    if (!cfg.shared_projection) add_fc(m);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      params.add(layer_name(m, "w_mu", l), glorot_uniform(d, d, rng));
      if (cfg.uncertainty) params.add(layer_name(m, "w_sigma", l), glorot_uniform(d, d, rng));
    }
    params.add(fuse_name(m), glorot_uniform(2 * d, d, rng));
  }
}

// ---- tape level -------------------------------------------------------------

NodeVars project_gaussian_nodes(Var tokens, Binding& p, Modality m, const GpgrConfig& cfg) {
  if (tokens.cols() != cfg.dim) {
    throw ContractViolation("project_gaussian_nodes: token width " + std::to_string(tokens.cols()) +
                            " != D=" + std::to_string(cfg.dim));
  }
  NodeVars out;
  out.mu = ad::affine(tokens, p[fc_name(cfg, m, "fc_mu", "w")], p[fc_name(cfg, m, "fc_mu", "b")]);
  if (cfg.uncertainty) {
    Var raw = ad::affine(tokens, p[fc_name(cfg, m, "fc_sigma", "w")],
                         p[fc_name(cfg, m, "fc_sigma", "b")]);
    out.sigma = squash_sigma(raw, p);
  }
  return out;
}

Var pairwise_sq_dist(Var x) {
  const Matrix& xv = x.value();
  const std::size_t n = xv.rows();
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < xv.cols(); ++k) {
        const double diff = xv(i, k) - xv(j, k);
        acc += diff * diff;
      }
      out(i, j) = out(j, i) = acc;
    }
  }
  return x.tape()->push(std::move(out), {x}, [x](Tape& t, const Matrix&, const Matrix& g) {
    const Matrix& xv = t.value(x);
    Matrix& gx = t.grad(x);
    const std::size_t n = xv.rows();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double w = 2.0 * (g(i, j) + g(j, i));
        if (w == 0.0) continue;
        for (std::size_t k = 0; k < xv.cols(); ++k) gx(i, k) += w * (xv(i, k) - xv(j, k));
      }
    }
  });
}

Var median_offdiag(Var sq_dist) {
  const Matrix& s = sq_dist.value();
  const std::size_t n = s.rows();
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  Tape& t = *sq_dist.tape();
  if (pairs.empty()) return t.constant(Matrix(1, 1, 1.0));
  std::stable_sort(pairs.begin(), pairs.end(), [&](const auto& a, const auto& b) {
    return s(a.first, a.second) < s(b.first, b.second);
  });
  const std::size_t k = pairs.size();
  std::vector<std::pair<std::size_t, std::size_t>> mid;
  if (k % 2 == 1) {
    mid.push_back(pairs[k / 2]);
  } else {
    mid.push_back(pairs[k / 2 - 1]);
    mid.push_back(pairs[k / 2]);
  }
  Var median = ad::mean(ad::gather(sq_dist, mid));
  // Coincident means give a zero median; fall back to unit temperature.
  if (!(median.scalar() > 1e-12)) return t.constant(Matrix(1, 1, 1.0));
  return median;
}

Var heat_kernel(Var sq_dist, Var tau, const Matrix& keep) {
  const Matrix& s = sq_dist.value();
  const double tv = tau.scalar();
  if (tv <= 0.0) throw ConfigError("heat_kernel: tau must be positive");
  require_same_shape(s, keep, "heat_kernel(keep)");
  const std::size_t n = s.rows();
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      a(i, j) = i == j ? 1.0 : (keep(i, j) > 0.0 ? std::exp(-s(i, j) / tv) : 0.0);
  return sq_dist.tape()->push(
      std::move(a), {sq_dist, tau}, [sq_dist, tau](Tape& t, const Matrix& a, const Matrix& g) {
        const Matrix& s = t.value(sq_dist);
        const double tv = t.value(tau)[0];
        const std::size_t n = s.rows();
        double gtau = 0.0;
        const bool want_s = t.requires_grad(sq_dist);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            if (i == j || a(i, j) == 0.0) continue;
            if (want_s) t.grad(sq_dist)(i, j) += -g(i, j) * a(i, j) / tv;
            gtau += g(i, j) * a(i, j) * s(i, j) / (tv * tv);
          }
        }
        if (t.requires_grad(tau)) t.grad(tau)[0] += gtau;
      });
}

Var build_patch_graph(Var mu, const GpgrConfig& cfg) {
  if (cfg.tau && !(*cfg.tau > 0.0)) throw ConfigError("build_patch_graph: tau must be positive");
  Var d2 = pairwise_sq_dist(mu);
  Var tau = cfg.tau ? mu.tape()->constant(Matrix(1, 1, *cfg.tau)) : median_offdiag(d2);
  return heat_kernel(d2, tau, knn_keep_mask(d2.value(), cfg.knn));
}

Var sym_normalize(Var adjacency) {
  const Matrix& a = adjacency.value();
  const std::size_t n = a.rows();
  if (a.cols() != n) throw ContractViolation("sym_normalize: adjacency must be square");
  std::vector<double> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < n; ++j) d += a(i, j);
    if (d <= 0.0) throw DomainError("sym_normalize: zero degree at node " + std::to_string(i));
    inv_sqrt[i] = 1.0 / std::sqrt(d);
  }
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) = a(i, j) * inv_sqrt[i] * inv_sqrt[j];
  return adjacency.tape()->push(
      std::move(out), {adjacency},
      [adjacency, inv_sqrt](Tape& t, const Matrix& y, const Matrix& g) {
        const std::size_t n = y.rows();
        // dL/d(degree_i) = -1/2 (sum_l g_il y_il + sum_k g_ki y_ki) / degree_i
        std::vector<double> gdeg(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            const double gy = g(i, j) * y(i, j);
            gdeg[i] += gy;
            gdeg[j] += gy;
          }
        }
        Matrix& ga = t.grad(adjacency);
        for (std::size_t i = 0; i < n; ++i) {
          const double di = -0.5 * gdeg[i] * inv_sqrt[i] * inv_sqrt[i];
          for (std::size_t j = 0; j < n; ++j)
            ga(i, j) += g(i, j) * inv_sqrt[i] * inv_sqrt[j] + di;
        }
      });
}

NodeVars gpgcn_forward(const NodeVars& nodes, Var adjacency, Binding& p, Modality m,
                       const GpgrConfig& cfg) {
  Var a_hat = sym_normalize(adjacency);
  NodeVars cur = nodes;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const bool last = l + 1 == cfg.layers;
    cur.mu = ad::relu(ad::matmul(ad::matmul(a_hat, cur.mu), p[layer_name(m, "w_mu", l)]));
    if (cfg.uncertainty && nodes.sigma.valid()) {
      Var pre = ad::matmul(ad::matmul(a_hat, cur.sigma), p[layer_name(m, "w_sigma", l)]);
      cur.sigma = last ? squash_sigma(pre, p) : ad::relu(pre);
    }
  }
  return cur;
}

Var sample_nodes(const NodeVars& nodes, Mode mode, RngStream& rng) {
  if (mode == Mode::Eval || !nodes.sigma.valid()) return nodes.mu;
  const Matrix eps = rng.normal_matrix(nodes.mu.rows(), nodes.mu.cols());
  return ad::reparameterize(nodes.mu, nodes.sigma, eps);
}

Var aggregate_global(Var sampled, Binding& p, Modality m, const GpgrConfig& cfg) {
  const std::size_t n = sampled.rows();
  if (n < 2) throw ContractViolation("aggregate_global: need at least one local token");
  Var cls = ad::rows(sampled, 0, 1);
  Var locals = ad::rows(sampled, 1, n);
  Var pooled = cfg.pooling == Pooling::Mean ? ad::mean_rows(locals) : ad::max_rows(locals);
  const Var parts[] = {cls, pooled};
  return ad::matmul(ad::concat_cols(parts), p[fuse_name(m)]);
}

Var class_token_kl(const NodeVars& projected) {
  if (!projected.sigma.valid()) throw ContractViolation("class_token_kl: no sigma channel");
  return ad::gaussian_kl(ad::rows(projected.mu, 0, 1), ad::rows(projected.sigma, 0, 1));
}

ForwardVars forward(Var tokens, Binding& p, Modality m, const GpgrConfig& cfg, Mode mode,
                    RngStream& rng) {
  ForwardVars f;
  f.projected = project_gaussian_nodes(tokens, p, m, cfg);
  f.adjacency = build_patch_graph(f.projected.mu, cfg);
  f.propagated = gpgcn_forward(f.projected, f.adjacency, p, m, cfg);
  f.sampled = sample_nodes(f.propagated, mode, rng);
  f.x_tilde = aggregate_global(f.sampled, p, m, cfg);
  if (cfg.uncertainty) f.class_kl = class_token_kl(f.projected);
  return f;
}

// ---- value level ------------------------------------------------------------

GaussianNodeSet project_gaussian_nodes(const PatchFeatureSet& feats, const GpgrParams& params) {
  check_dims(params, feats.tokens.cols());
  Tape tape(false);
  Binding p(tape, params.weights);
  NodeVars v = project_gaussian_nodes(tape.constant(feats.tokens), p, feats.modality, params.config);
  return {v.mu.value(), v.sigma.valid() ? v.sigma.value() : Matrix()};
}

PatchGraph build_patch_graph(const GaussianNodeSet& nodes, const GpgrParams& params) {
  Tape tape(false);
  Var a = build_patch_graph(tape.constant(nodes.mu), params.config);
  PatchGraph g{a.value(), {}};
  for (std::size_t i = 0; i < g.adjacency.rows(); ++i) {
    const auto row = g.adjacency.row(i);
    g.degree.push_back(std::accumulate(row.begin(), row.end(), 0.0));
  }
  return g;
}

GaussianNodeSet gpgcn_forward(const GaussianNodeSet& nodes, const PatchGraph& graph,
                              const GpgrParams& params, Modality m) {
  Tape tape(false);
  Binding p(tape, params.weights);
  NodeVars in{tape.constant(nodes.mu), nodes.sigma.empty() ? Var() : tape.constant(nodes.sigma)};
  NodeVars out = gpgcn_forward(in, tape.constant(graph.adjacency), p, m, params.config);
  return {out.mu.value(), out.sigma.valid() ? out.sigma.value() : Matrix()};
}

Matrix sample_nodes(const GaussianNodeSet& nodes, Mode mode, RngStream& rng) {
  Tape tape(false);
  NodeVars v{tape.constant(nodes.mu), nodes.sigma.empty() ? Var() : tape.constant(nodes.sigma)};
  return sample_nodes(v, mode, rng).value();
}

ModalFeature aggregate_global(const Matrix& sampled, const GpgrParams& params, Modality m) {
  Tape tape(false);
  Binding p(tape, params.weights);
  return {m, aggregate_global(tape.constant(sampled), p, m, params.config).value()};
}

double class_token_kl(const GaussianNodeSet& nodes) {
  Tape tape(false);
  return class_token_kl(NodeVars{tape.constant(nodes.mu), tape.constant(nodes.sigma)}).scalar();
}

ModalFeature forward(const PatchFeatureSet& feats, const GpgrParams& params, Mode mode,
                     RngStream& rng) {
  check_dims(params, feats.tokens.cols());
  Tape tape(false);
  Binding p(tape, params.weights);
  ForwardVars f = forward(tape.constant(feats.tokens), p, feats.modality, params.config, mode, rng);
  return {feats.modality, f.x_tilde.value()};
}

}  // namespace ugg::gpgr
