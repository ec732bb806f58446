#include <algorithm>
#include <cmath>

#include "ugg/errors.hpp"
#include "ugg/objective.hpp"

namespace ugg::objective {

namespace {

constexpr double kBnEps = 1e-5;

std::string base_name(Modality m, const char* part) {
  return "base." + std::string(name_of(m)) + "." + part;
}

std::string aux_name(Modality m, const char* part) {
  return "aux." + std::string(name_of(m)) + "." + part;
}

Var mean_of(std::span<const Var> scalars) {
  return ad::mean(ad::concat_cols(scalars));
}

}  // namespace

Model init_model(const TrainConfig& cfg, std::size_t dim, std::size_t num_classes) {
  validate(cfg);
  if (dim < 1) throw ConfigError("model width D must be >= 1");
  if (num_classes < 2) throw ConfigError("model needs at least two identity classes");
  Model model;
  model.config = cfg;
  model.dim = dim;
  model.num_classes = num_classes;
  const VariantFlags f = flags_of(cfg.variant);
  RngStream rng(cfg.seed, derive_stream(0, "init"));
  if (f.graph) {
    gpgr::init_params(model.params, gpgr_config(cfg, dim), rng);
  } else {
    for (Modality m : kModalities) {
      model.params.add(base_name(m, "w"), glorot_uniform(dim, dim, rng));
      model.params.add(base_name(m, "b"), Matrix(1, dim));
    }
  }
  if (f.moe) ugmoe::init_params(model.params, ugmoe_config(cfg, dim), rng);
  const std::size_t width = dim * kModalityCount;
  if (cfg.bn_neck) {
    model.params.add("bn.gamma", Matrix(1, width, 1.0));
    model.params.add("bn.beta", Matrix(1, width));
    model.buffers.add("bn.running_mean", Matrix(1, width));
    model.buffers.add("bn.running_var", Matrix(1, width, 1.0));
  }
  model.params.add("head.w", glorot_uniform(width, num_classes, rng));
  model.params.add("head.b", Matrix(1, num_classes));
  if (cfg.aux_heads) {
    for (Modality m : kModalities) {
      model.params.add(aux_name(m, "w"), glorot_uniform(dim, num_classes, rng));
      model.params.add(aux_name(m, "b"), Matrix(1, num_classes));
    }
  }
  return model;
}

BatchForward forward_batch(Tape& tape, Binding& p, const Model& model,
                           std::span<const dataio::Sample* const> batch, Mode mode,
                           std::uint64_t noise_stream) {
  if (batch.empty()) throw ContractViolation("forward_batch: empty batch");
  const TrainConfig& cfg = model.config;
  const VariantFlags f = flags_of(cfg.variant);
  const gpgr::GpgrConfig gcfg = gpgr_config(cfg, model.dim);
  const ugmoe::UgmoeConfig ucfg = ugmoe_config(cfg, model.dim);

  BatchForward out;
  std::vector<Var> rows;
  std::array<std::vector<Var>, kModalityCount> per_modality, kl_terms, routing_terms;
  std::array<std::vector<ugmoe::BankVars>, kModalityCount> banks;

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const dataio::Sample& s = *batch[i];
    std::array<Var, kModalityCount> x_tilde;
    std::array<Var, kModalityCount> kl;
    for (Modality m : kModalities) {
      const Matrix& tokens = s.tokens[index_of(m)];
      if (tokens.cols() != model.dim) {
        throw ContractViolation("forward: sample " + std::to_string(s.id) + " has width " +
                                std::to_string(tokens.cols()) + ", model expects " + std::to_string(model.dim));
      }
      Var t = tape.constant(tokens);
      if (f.graph) {
        RngStream rng(cfg.seed, derive_stream(noise_stream, i * kModalityCount + index_of(m)));
        gpgr::ForwardVars g = gpgr::forward(t, p, m, gcfg, mode, rng);
        x_tilde[index_of(m)] = g.x_tilde;
        kl[index_of(m)] = g.class_kl;
      } else {
        x_tilde[index_of(m)] = ad::affine(ad::rows(t, 0, 1), p[base_name(m, "w")], p[base_name(m, "b")]);
      }
    }

    std::array<Var, kModalityCount> z = x_tilde;
    if (f.moe) {
      std::vector<ugmoe::GateVars> gates;
      std::vector<ugmoe::SampleVars> sgs;
      for (Modality m : kModalities) {
        gates.push_back(ugmoe::gate(x_tilde[index_of(m)], p, m, ucfg));
        if (f.moe_uncertainty) sgs.push_back(ugmoe::sample_gaussian(x_tilde[index_of(m)], p, m));
      }
      for (Modality m : kModalities) {
        const std::size_t mi = index_of(m);
        ugmoe::BankVars bank = ugmoe::assemble_bank(gates, m, ucfg);
        Var input = x_tilde[mi];
        if (f.moe_uncertainty && ucfg.expert_input == ugmoe::ExpertInput::MuTilde) input = sgs[mi].mu;
        z[mi] = ugmoe::mixture_forward(bank, input, p);
        RoutingRecord rec;
        rec.sample_id = s.id;
        rec.modality = m;
        rec.selected = gates[mi].selected;
        rec.weights.assign(bank.weights.value().values().begin(), bank.weights.value().values().end());
        if (f.moe_uncertainty) {
          const Var skl = ugmoe::sample_kl(sgs[mi]);
          kl[mi] = kl[mi].valid() ? ad::add(kl[mi], skl) : skl;
          routing_terms[mi].push_back(ugmoe::routing_uncertainty_loss(bank, sgs));
          double acc = 0.0;
          for (double v : sgs[mi].sigma.value().values()) acc += v * v;
          rec.mean_sigma_sq = acc / static_cast<double>(sgs[mi].sigma.value().size());
        }
        out.routing_records.push_back(std::move(rec));
        banks[mi].push_back(std::move(bank));
      }
    }
    for (Modality m : kModalities) {
      const std::size_t mi = index_of(m);
      if (kl[mi].valid()) kl_terms[mi].push_back(kl[mi]);
      per_modality[mi].push_back(z[mi]);
    }
    rows.push_back(ad::concat_cols(z));
  }

  out.features = ad::concat_rows(rows);
  Var head_in = out.features;
  if (cfg.bn_neck) {
    Var normed;
    if (mode == Mode::Train) {
      normed = ad::batch_standardize(out.features, kBnEps);
    } else {
      const Matrix& mean = model.buffers.at("bn.running_mean");
      const Matrix& var = model.buffers.at("bn.running_var");
      Matrix shift(1, mean.cols()), inv(1, mean.cols());
      for (std::size_t c = 0; c < mean.cols(); ++c) {
        shift[c] = -mean[c];
        inv[c] = 1.0 / std::sqrt(var[c] + kBnEps);
      }
      normed = ad::mul_row(ad::add_row(out.features, tape.constant(shift)), tape.constant(inv));
    }
    head_in = ad::add_row(ad::mul_row(normed, p["bn.gamma"]), p["bn.beta"]);
  }
  out.logits = ad::affine(head_in, p["head.w"], p["head.b"]);
  if (cfg.aux_heads) {
    for (Modality m : kModalities) {
      out.aux_logits.push_back(ad::affine(ad::concat_rows(per_modality[index_of(m)]), p[aux_name(m, "w")],
                                          p[aux_name(m, "b")]));
    }
  }
  for (std::size_t mi = 0; mi < kModalityCount; ++mi) {
    if (!kl_terms[mi].empty()) out.kl_cs[mi] = mean_of(kl_terms[mi]);
    if (!routing_terms[mi].empty()) out.routing[mi] = mean_of(routing_terms[mi]);
    if (!banks[mi].empty()) out.balance[mi] = ugmoe::load_balance_loss(banks[mi]);
  }
  return out;
}

LossVars loss_from_forward(const BatchForward& fwd, std::span<const std::uint32_t> labels,
                           const TrainConfig& cfg) {
  LossVars lv;
  Var ce = cross_entropy_id(fwd.logits, labels);
  for (const Var& aux : fwd.aux_logits) ce = ad::add(ce, cross_entropy_id(aux, labels));
  Var tri = batch_hard_triplet(fwd.features, labels, cfg.margin);
  lv.parts.ce = ce.scalar();
  lv.parts.tri = tri.scalar();
  const VariantFlags f = flags_of(cfg.variant);
  Var total = ad::add(ce, tri);
  for (std::size_t m = 0; m < kModalityCount; ++m) {
    if (fwd.kl_cs[m].valid() && (f.graph_uncertainty || f.moe_uncertainty)) {
      lv.parts.kl_cs[m] = fwd.kl_cs[m].scalar();
      total = ad::add(total, ad::scale(fwd.kl_cs[m], cfg.lambda1));
    }
    if (fwd.routing[m].valid() && f.moe_uncertainty) {
      lv.parts.routing[m] = fwd.routing[m].scalar();
      total = ad::add(total, ad::scale(fwd.routing[m], cfg.lambda2));
    }
    if (fwd.balance[m].valid() && f.moe) {
      lv.parts.balance[m] = fwd.balance[m].scalar();
      total = ad::add(total, ad::scale(fwd.balance[m], cfg.lambda3));
    }
  }
  lv.total = total;
  lv.parts = total_loss(lv.parts, cfg);
  return lv;
}

Matrix embed(const Model& model, std::span<const dataio::Sample* const> samples) {
  Matrix out(samples.size(), model.dim * kModalityCount);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Tape tape(false);
    Binding p(tape, model.params);
    const dataio::Sample* one[] = {samples[i]};
    const BatchForward fwd = forward_batch(tape, p, model, one, Mode::Eval, 0);
    const auto row = fwd.features.value().row(0);
    std::copy(row.begin(), row.end(), out.row(i).begin());
  }
  return out;
}

Matrix embed(const Model& model, const dataio::Dataset& ds, dataio::Split split) {
  std::vector<const dataio::Sample*> ptrs;
  for (std::size_t i : ds.indices(split)) ptrs.push_back(&ds.samples[i]);
  return embed(model, ptrs);
}

std::vector<RoutingRecord> routing_diagnostics(const Model& model,
                                               std::span<const dataio::Sample* const> samples) {
  std::vector<RoutingRecord> out;
  for (const dataio::Sample* s : samples) {
    Tape tape(false);
    Binding p(tape, model.params);
    const dataio::Sample* one[] = {s};
    BatchForward fwd = forward_batch(tape, p, model, one, Mode::Eval, 0);
    for (RoutingRecord& r : fwd.routing_records) out.push_back(std::move(r));
  }
  return out;
}

}  // namespace ugg::objective
