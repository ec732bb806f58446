#include "ugg/ugmoe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ugg/errors.hpp"

namespace ugg::ugmoe {

namespace {
constexpr double kGateInitStd = 0.01;
}  // namespace

void validate(const UgmoeConfig& cfg) {
  if (cfg.experts < 1) throw ConfigError("ugmoe.C must be >= 1");
  if (cfg.top_k > cfg.experts) throw ConfigError("ugmoe.k must satisfy 0 <= k <= C");
  if (cfg.dim < 1) throw ConfigError("ugmoe: D must be >= 1");
}

std::string param_name(Modality m, const std::string& what) {
  return "ugmoe." + std::string(name_of(m)) + "." + what;
}

std::string expert_name(Modality m, std::size_t expert, const char* part) {
  return param_name(m, "expert." + std::to_string(expert) + "." + part);
}

void init_params(ParamSet& params, const UgmoeConfig& cfg, RngStream& rng) {
  validate(cfg);
  const std::size_t d = cfg.dim;
  const std::size_t h = cfg.hidden_width();
  for (Modality m : kModalities) {
    if (cfg.uncertainty) {
      params.add(param_name(m, "mu.w"), glorot_uniform(d, d, rng));
      params.add(param_name(m, "mu.b"), Matrix(1, d));
      params.add(param_name(m, "sigma.w"), glorot_uniform(d, d, rng));
      params.add(param_name(m, "sigma.b"), Matrix(1, d));
    }
    // Near-zero gate: routing starts close to uniform without exact score ties.
    Matrix gate = rng.normal_matrix(d, cfg.experts);
    for (double& g : gate.values()) g *= kGateInitStd;
    params.add(param_name(m, "gate"), std::move(gate));
    for (std::size_t c = 0; c < cfg.experts; ++c) {
      params.add(expert_name(m, c, "w1"), glorot_uniform(d, h, rng));
      params.add(expert_name(m, c, "b1"), Matrix(1, h));
      params.add(expert_name(m, c, "w2"), glorot_uniform(h, d, rng));
      params.add(expert_name(m, c, "b2"), Matrix(1, d));
    }
  }
}

std::vector<std::size_t> top_k_indices(std::span<const double> scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(std::min(k, idx.size()));
  return idx;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw ContractViolation("argmax of empty range");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

// ---- tape level -----------------------------------------------------------------

SampleVars sample_gaussian(Var x_tilde, Binding& p, Modality m) {
  SampleVars sg;
  sg.mu = ad::affine(x_tilde, p[param_name(m, "mu.w")], p[param_name(m, "mu.b")]);
  Var raw = ad::affine(x_tilde, p[param_name(m, "sigma.w")], p[param_name(m, "sigma.b")]);
  sg.sigma = ad::clamp_min(ad::softplus(raw), kSigmaFloor);
  return sg;
}

Var sample_kl(const SampleVars& sg) { return ad::gaussian_kl(sg.mu, sg.sigma); }

GateVars gate(Var x_tilde, Binding& p, Modality m, const UgmoeConfig& cfg) {
  GateVars g;
  g.modality = m;
  g.scores = ad::softmax_rows(ad::matmul(x_tilde, p[param_name(m, "gate")]));
  g.selected = top_k_indices(g.scores.value().values(), cfg.top_k);
  return g;
}

BankVars assemble_bank(std::span<const GateVars> decisions, Modality target,
                       const UgmoeConfig& cfg) {
  if (decisions.size() != kModalityCount) {
    throw ContractViolation("assemble_bank: need one gate decision per modality");
  }
  const GateVars& own = decisions[index_of(target)];
  BankVars bank;
  bank.target = target;
  std::vector<Var> parts{own.scores};
  for (std::size_t c = 0; c < cfg.experts; ++c)
    bank.entries.push_back({target, c, own.scores.value()[c]});
  for (Modality donor : kModalities) {
    if (donor == target || cfg.top_k == 0) continue;
    const GateVars& d = decisions[index_of(donor)];
    std::vector<std::pair<std::size_t, std::size_t>> at;
    for (std::size_t c : d.selected) {
      at.emplace_back(0, c);
      bank.entries.push_back({donor, c, d.scores.value()[c]});
    }
    parts.push_back(ad::gather(d.scores, at));
  }
  bank.weights = ad::normalize_sum(ad::concat_cols(parts));
  return bank;
}

Var expert_forward(Var input, Binding& p, Modality source, std::size_t expert) {
  Var h = ad::relu(ad::affine(input, p[expert_name(source, expert, "w1")],
                              p[expert_name(source, expert, "b1")]));
  return ad::affine(h, p[expert_name(source, expert, "w2")], p[expert_name(source, expert, "b2")]);
}

Var mixture_forward(const BankVars& bank, Var input, Binding& p) {
  std::vector<Var> outs;
  outs.reserve(bank.entries.size());
  for (const BankEntry& e : bank.entries) outs.push_back(expert_forward(input, p, e.source, e.expert));
  return ad::matmul(bank.weights, ad::concat_rows(outs));
}

Var routing_uncertainty_loss(const BankVars& bank, std::span<const SampleVars> sgs) {
  if (sgs.size() != kModalityCount) throw ContractViolation("routing loss: need all modalities");
  std::array<Var, kModalityCount> variance;
  for (Modality m : kModalities) variance[index_of(m)] = ad::mean(ad::square(sgs[index_of(m)].sigma));
  std::vector<Var> per_entry;
  for (const BankEntry& e : bank.entries) per_entry.push_back(variance[index_of(e.source)]);
  const double inv_e = 1.0 / static_cast<double>(bank.entries.size());
  return ad::scale(ad::sum(ad::mul(ad::concat_cols(per_entry), bank.weights)), inv_e);
}

Var load_balance_loss(std::span<const BankVars> batch) {
  if (batch.empty()) throw ContractViolation("load_balance_loss: empty batch");
  const std::size_t e = batch[0].entries.size();
  std::vector<Var> rows;
  Matrix share(1, e);
  for (const BankVars& b : batch) {
    if (b.entries.size() != e) throw ContractViolation("load_balance_loss: bank sizes differ");
    rows.push_back(b.weights);
    share[argmax(b.weights.value().values())] += 1.0;
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  share *= inv_b;
  Var mean_weight = ad::mean_rows(ad::concat_rows(rows));
  return ad::scale(ad::dot_const(mean_weight, share), 1.0 / static_cast<double>(e));
}

// ---- value level ----------------------------------------------------------------

SampleGaussian sample_gaussian(const Matrix& x_tilde, const UgmoeParams& params, Modality m) {
  Tape tape(false);
  Binding p(tape, params.weights);
  SampleVars v = sample_gaussian(tape.constant(x_tilde), p, m);
  return {m, v.mu.value(), v.sigma.value()};
}

double sample_kl(const SampleGaussian& sg) {
  Tape tape(false);
  return sample_kl(SampleVars{tape.constant(sg.mu), tape.constant(sg.sigma)}).scalar();
}

GateDecision gate_from_logits(std::span<const double> logits, std::size_t top_k, Modality m) {
  Tape tape(false);
  Var s = ad::softmax_rows(tape.constant(Matrix::row_vector(logits)));
  GateDecision d;
  d.modality = m;
  d.own_scores.assign(s.value().values().begin(), s.value().values().end());
  d.selected = top_k_indices(d.own_scores, top_k);
  return d;
}

GateDecision gate(const Matrix& x_tilde, const UgmoeParams& params, Modality m) {
  const Matrix logits = matmul(x_tilde, params.weights.at(param_name(m, "gate")));
  return gate_from_logits(logits.values(), params.config.top_k, m);
}

ExpertBank assemble_bank(std::span<const GateDecision> decisions, const UgmoeConfig& cfg,
                         Modality target) {
  validate(cfg);
  if (decisions.size() != kModalityCount) {
    throw ContractViolation("assemble_bank: need one gate decision per modality");
  }
  Tape tape(false);
  std::vector<GateVars> vars;
  for (const GateDecision& d : decisions) {
    if (d.own_scores.size() != cfg.experts) throw ContractViolation("assemble_bank: score size != C");
    std::vector<std::size_t> sel = d.selected;
    sel.resize(std::min(sel.size(), cfg.top_k));
    if (sel.size() != cfg.top_k) throw ContractViolation("assemble_bank: fewer than k selected");
    vars.push_back({d.modality, tape.constant(Matrix::row_vector(d.own_scores)), sel});
  }
  BankVars b = assemble_bank(vars, target, cfg);
  ExpertBank bank;
  bank.target = target;
  bank.entries = b.entries;
  bank.weights.assign(b.weights.value().values().begin(), b.weights.value().values().end());
  return bank;
}

Matrix mixture_forward(const ExpertBank& bank, const Matrix& input, const UgmoeParams& params) {
  Tape tape(false);
  Binding p(tape, params.weights);
  BankVars b{bank.target, bank.entries, tape.constant(Matrix::row_vector(bank.weights))};
  return mixture_forward(b, tape.constant(input), p).value();
}

double routing_uncertainty_loss(const ExpertBank& bank, std::span<const SampleGaussian> sgs) {
  Tape tape(false);
  std::vector<SampleVars> vars;
  for (const SampleGaussian& sg : sgs) vars.push_back({tape.constant(sg.mu), tape.constant(sg.sigma)});
  BankVars b{bank.target, bank.entries, tape.constant(Matrix::row_vector(bank.weights))};
  return routing_uncertainty_loss(b, vars).scalar();
}

double load_balance_loss(std::span<const ExpertBank> batch) {
  if (batch.empty()) throw ContractViolation("load_balance_loss: empty batch");
  Tape tape(false);
  std::vector<BankVars> vars;
  for (const ExpertBank& b : batch)
    vars.push_back({b.target, b.entries, tape.constant(Matrix::row_vector(b.weights))});
  return load_balance_loss(vars).scalar();
}

FusedFeature fuse(std::span<const Matrix> per_modality) {
  if (per_modality.size() != kModalityCount) {
    throw ContractViolation("fuse: expected " + std::to_string(kModalityCount) +
                            " modality features, got " + std::to_string(per_modality.size()));
  }
  FusedFeature f;
  const std::size_t d = per_modality[0].size();
  f.concat = Matrix(1, d * kModalityCount);
  for (std::size_t m = 0; m < kModalityCount; ++m) {
    if (per_modality[m].empty()) throw ContractViolation("fuse: missing modality feature");
    if (per_modality[m].size() != d) throw ContractViolation("fuse: modality widths differ");
    f.per_modality[m] = Matrix(1, d, per_modality[m].storage());
    std::copy(per_modality[m].values().begin(), per_modality[m].values().end(),
              f.concat.values().begin() + static_cast<std::ptrdiff_t>(m * d));
  }
  return f;
}

}  // namespace ugg::ugmoe
