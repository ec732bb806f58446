#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "ugg/errors.hpp"
#include "ugg/objective.hpp"
#include "ugg/text.hpp"

namespace ugg::objective {

namespace {

std::map<std::uint32_t, std::vector<std::size_t>> train_pools(const dataio::Dataset& ds) {
  std::map<std::uint32_t, std::vector<std::size_t>> pools;
  for (std::size_t i : ds.indices(dataio::Split::Train)) pools[ds.samples[i].label].push_back(i);
  return pools;
}

// First `count` entries of a seeded Fisher-Yates shuffle.
template <typename T>
std::vector<T> choose(std::vector<T> pool, std::size_t count, RngStream& rng) {
  for (std::size_t i = 0; i < count; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
  pool.resize(count);
  return pool;
}

void check_finite(double v, const std::string& term, std::uint64_t step) {
  if (!std::isfinite(v)) throw NonFiniteLoss(term, static_cast<long>(step));
}

void check_breakdown(const LossBreakdown& l, std::uint64_t step) {
  check_finite(l.ce, "ce", step);
  check_finite(l.tri, "tri", step);
  for (Modality m : kModalities) check_finite(l.kl_cs[index_of(m)], "kl_cs." + std::string(name_of(m)), step);
  for (Modality m : kModalities) check_finite(l.routing[index_of(m)], "routing." + std::string(name_of(m)), step);
  for (Modality m : kModalities) check_finite(l.balance[index_of(m)], "balance." + std::string(name_of(m)), step);
  check_finite(l.total, "total", step);
}

void adam_step(ParamSet& params, const ParamSet& grads, AdamState& st, const TrainConfig& cfg, double lr) {
  ++st.step;
  const double t = static_cast<double>(st.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  auto& entries = params.entries();
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const std::string& name = entries[k].first;
    Matrix& w = entries[k].second;
    const Matrix& g = grads.at(name);
    Matrix& m = st.m.at(name);
    Matrix& v = st.v.at(name);
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.adam_eps);
    }
  }
}

void update_running_stats(Model& model, const Matrix& features) {
  constexpr double kMomentum = 0.1;
  Matrix& mean = model.buffers.at("bn.running_mean");
  Matrix& var = model.buffers.at("bn.running_var");
  const double n = static_cast<double>(features.rows());
  for (std::size_t c = 0; c < features.cols(); ++c) {
    double mu = 0.0;
    for (std::size_t r = 0; r < features.rows(); ++r) mu += features(r, c);
    mu /= n;
    double s = 0.0;
    for (std::size_t r = 0; r < features.rows(); ++r) s += (features(r, c) - mu) * (features(r, c) - mu);
    mean[c] = (1.0 - kMomentum) * mean[c] + kMomentum * mu;
    var[c] = (1.0 - kMomentum) * var[c] + kMomentum * (s / n);
  }
}

void check_trainable(const TrainConfig& cfg, const dataio::Dataset& ds) {
  validate(cfg);
  const auto pools = train_pools(ds);
  if (pools.size() < cfg.P) {
    throw ConfigError("train.P = " + std::to_string(cfg.P) + " exceeds the " + std::to_string(pools.size()) +
                      " identities in the train split");
  }
}

}  // namespace

std::size_t batches_per_epoch(const TrainConfig& cfg, const dataio::Dataset& ds) {
  const std::size_t n = ds.indices(dataio::Split::Train).size();
  return std::max<std::size_t>(1, n / cfg.batch_size());
}

std::vector<std::size_t> sample_batch(const TrainConfig& cfg, const dataio::Dataset& ds, std::size_t epoch,
                                      std::size_t batch_index) {
  const auto pools = train_pools(ds);
  std::vector<std::uint32_t> labels;
  for (const auto& [label, _] : pools) labels.push_back(label);
  if (labels.size() < cfg.P) throw ConfigError("train.P exceeds the number of train identities");
  RngStream rng(cfg.seed, derive_stream(derive_stream(derive_stream(0, "sampler"), epoch), batch_index));
  std::vector<std::size_t> batch;
  batch.reserve(cfg.batch_size());
  for (std::uint32_t label : choose(labels, cfg.P, rng)) {
    const std::vector<std::size_t>& pool = pools.at(label);
    if (pool.size() >= cfg.K) {
      for (std::size_t i : choose(pool, cfg.K, rng)) batch.push_back(i);
    } else {
      for (std::size_t k = 0; k < cfg.K; ++k) batch.push_back(pool[rng.below(pool.size())]);
    }
  }
  return batch;
}

Checkpoint fit(const TrainConfig& config, const dataio::Dataset& ds, const FitOptions& options) {
  check_trainable(config, ds);
  Checkpoint ckpt;
  ckpt.model = init_model(config, ds.dim, ds.num_labels());
  ckpt.adam.m = ckpt.model.params.zeros_like();
  ckpt.adam.v = ckpt.model.params.zeros_like();
  ckpt.snapshot = options.snapshot;
  return resume(std::move(ckpt), ds, options);
}

Checkpoint resume(Checkpoint ckpt, const dataio::Dataset& ds, const FitOptions& options) {
  const TrainConfig& cfg = ckpt.model.config;
  check_trainable(cfg, ds);
  if (ds.dim != ckpt.model.dim) throw ContractViolation("resume: dataset width differs from the model");
  if (!options.snapshot.empty()) ckpt.snapshot = options.snapshot;
  const std::size_t per_epoch = batches_per_epoch(cfg, ds);
  const std::size_t last = std::min(cfg.epochs, options.stop_after_epoch.value_or(cfg.epochs));
  const std::uint64_t reparam_root = derive_stream(0, "reparam");

  for (std::size_t epoch = ckpt.epoch; epoch < last; ++epoch) {
    const double lr = learning_rate_at(cfg, epoch);
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::vector<std::size_t> idx = sample_batch(cfg, ds, epoch, b);
      std::vector<const dataio::Sample*> batch;
      std::vector<std::uint32_t> labels;
      for (std::size_t i : idx) {
        batch.push_back(&ds.samples[i]);
        labels.push_back(ds.samples[i].label);
      }
      const std::uint64_t step = ckpt.adam.step;
      Tape tape;
      Binding p(tape, ckpt.model.params);
      const BatchForward fwd =
          forward_batch(tape, p, ckpt.model, batch, Mode::Train, derive_stream(reparam_root, step));
      const LossVars loss = loss_from_forward(fwd, labels, cfg);
      check_breakdown(loss.parts, step);
      tape.backward(loss.total);
      const ParamSet grads = p.gradients();
      for (const auto& [name, g] : grads.entries())
        if (!g.all_finite()) throw NonFiniteLoss("gradient of " + name, static_cast<long>(step));
      if (cfg.bn_neck) update_running_stats(ckpt.model, fwd.features.value());
      adam_step(ckpt.model.params, grads, ckpt.adam, cfg, lr);
      ckpt.history.push_back({step, loss.parts});
    }
    ckpt.epoch = epoch + 1;
  }
  return ckpt;
}

std::string history_csv(const std::vector<HistoryRow>& history, std::string_view config_hash) {
  std::ostringstream os;
  os << "# config_hash=" << config_hash << '\n';
  os << "step,ce,tri,kl_cs,lr_loss,le_loss,total\n";
  for (const HistoryRow& h : history) {
    double kl = 0.0, r = 0.0, e = 0.0;
    for (std::size_t m = 0; m < kModalityCount; ++m) {
      kl += h.loss.kl_cs[m];
      r += h.loss.routing[m];
      e += h.loss.balance[m];
    }
    os << h.step << ',' << format_double(h.loss.ce) << ',' << format_double(h.loss.tri) << ','
       << format_double(kl) << ',' << format_double(r) << ',' << format_double(e) << ','
       << format_double(h.loss.total) << '\n';
  }
  return os.str();
}

}  // namespace ugg::objective
