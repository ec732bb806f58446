#include <algorithm>
#include <cmath>

#include "ugg/errors.hpp"
#include "ugg/objective.hpp"
#include "ugg/text.hpp"

namespace ugg::objective {

char variant_letter(Variant v) noexcept { return static_cast<char>('a' + static_cast<int>(v)); }

Variant parse_variant(std::string_view text) {
  text = trim(text);
  if (text.size() == 1 && text[0] >= 'a' && text[0] <= 'e') return static_cast<Variant>(text[0] - 'a');
  throw ConfigError("unknown ablation variant '" + std::string(text) + "' (expected one of a, b, c, d, e)");
}

VariantFlags flags_of(Variant v) noexcept {
  switch (v) {
    case Variant::A: return {false, false, false, false};
    case Variant::B: return {true, false, false, false};
    case Variant::C: return {true, true, false, false};
    case Variant::D: return {true, true, true, false};
    case Variant::E: return {true, true, true, true};
  }
  return {};
}

void validate(const TrainConfig& cfg) {
  if (cfg.lambda1 < 0 || cfg.lambda2 < 0 || cfg.lambda3 < 0) throw ConfigError("loss.lambda* must be >= 0");
  if (!(cfg.learning_rate > 0)) throw ConfigError("train.lr must be > 0");
  if (cfg.P < 2) throw ConfigError("train.P must be >= 2 (triplet needs two identities)");
  if (cfg.K < 2) throw ConfigError("train.K must be >= 2 (triplet needs a positive)");
  if (!(cfg.margin >= 0)) throw ConfigError("loss.margin must be >= 0");
  if (cfg.layers < 1) throw ConfigError("gpgr.L must be >= 1");
  if (cfg.tau && !(*cfg.tau > 0)) throw ConfigError("gpgr.tau must be > 0");
  if (cfg.experts < 1) throw ConfigError("ugmoe.C must be >= 1");
  if (cfg.top_k > cfg.experts) throw ConfigError("ugmoe.k must satisfy 0 <= k <= C");
  if (!(cfg.beta1 >= 0 && cfg.beta1 < 1) || !(cfg.beta2 >= 0 && cfg.beta2 < 1)) {
    throw ConfigError("train.beta1/beta2 must lie in [0, 1)");
  }
  if (!(cfg.adam_eps > 0)) throw ConfigError("train.adam_eps must be > 0");
  if (!(cfg.decay_factor > 0)) throw ConfigError("train.decay_factor must be > 0");
}

std::vector<std::pair<std::string, std::string>> to_entries(const TrainConfig& cfg) {
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  auto u = [](std::size_t v) { return std::to_string(v); };
  std::vector<std::pair<std::string, std::string>> e = {
      {"gpgr.L", u(cfg.layers)},
      {"gpgr.knn", u(cfg.knn)},
      {"gpgr.pooling", cfg.pooling == gpgr::Pooling::Mean ? "mean" : "max"},
      {"gpgr.shared_projection", b(cfg.shared_projection)},
      {"gpgr.tau", cfg.tau ? format_double(*cfg.tau) : "median"},
      {"loss.lambda1", format_double(cfg.lambda1)},
      {"loss.lambda2", format_double(cfg.lambda2)},
      {"loss.lambda3", format_double(cfg.lambda3)},
      {"loss.margin", format_double(cfg.margin)},
      {"seed", std::to_string(cfg.seed)},
      {"train.K", u(cfg.K)},
      {"train.P", u(cfg.P)},
      {"train.adam_eps", format_double(cfg.adam_eps)},
      {"train.aux_heads", b(cfg.aux_heads)},
      {"train.beta1", format_double(cfg.beta1)},
      {"train.beta2", format_double(cfg.beta2)},
      {"train.bn_neck", b(cfg.bn_neck)},
      {"train.decay_every", u(cfg.decay_every)},
      {"train.decay_factor", format_double(cfg.decay_factor)},
      {"train.epochs", u(cfg.epochs)},
      {"train.lr", format_double(cfg.learning_rate)},
      {"train.variant", std::string(1, variant_letter(cfg.variant))},
      {"train.warmup_epochs", u(cfg.warmup_epochs)},
      {"ugmoe.C", u(cfg.experts)},
      {"ugmoe.expert_input", cfg.expert_input == ugmoe::ExpertInput::XTilde ? "x-tilde" : "mu-tilde"},
      {"ugmoe.hidden", u(cfg.expert_hidden)},
      {"ugmoe.k", u(cfg.top_k)},
  };
  std::sort(e.begin(), e.end());
  return e;
}

bool apply_entry(TrainConfig& cfg, std::string_view key, std::string_view value) {
  value = trim(value);
  auto size = [&] { return static_cast<std::size_t>(parse_uint(key, value)); };
  auto real = [&] { return parse_double(key, value); };
  if (key == "seed") cfg.seed = parse_uint(key, value);
  else if (key == "gpgr.L") cfg.layers = size();
  else if (key == "gpgr.knn") cfg.knn = size();
  else if (key == "gpgr.pooling") {
    if (value == "mean") cfg.pooling = gpgr::Pooling::Mean;
    else if (value == "max") cfg.pooling = gpgr::Pooling::Max;
    else throw ConfigError("invalid value '" + std::string(value) + "' for key 'gpgr.pooling': expected mean or max");
  } else if (key == "gpgr.shared_projection") cfg.shared_projection = parse_bool(key, value);
  else if (key == "gpgr.tau") {
    if (value == "median") cfg.tau.reset();
    else cfg.tau = real();
  } else if (key == "loss.lambda1") cfg.lambda1 = real();
  else if (key == "loss.lambda2") cfg.lambda2 = real();
  else if (key == "loss.lambda3") cfg.lambda3 = real();
  else if (key == "loss.margin") cfg.margin = real();
  else if (key == "train.K") cfg.K = size();
  else if (key == "train.P") cfg.P = size();
  else if (key == "train.adam_eps") cfg.adam_eps = real();
  else if (key == "train.aux_heads") cfg.aux_heads = parse_bool(key, value);
  else if (key == "train.beta1") cfg.beta1 = real();
  else if (key == "train.beta2") cfg.beta2 = real();
  else if (key == "train.bn_neck") cfg.bn_neck = parse_bool(key, value);
  else if (key == "train.decay_every") cfg.decay_every = size();
  else if (key == "train.decay_factor") cfg.decay_factor = real();
  else if (key == "train.epochs") cfg.epochs = size();
  else if (key == "train.lr") cfg.learning_rate = real();
  else if (key == "train.variant") cfg.variant = parse_variant(value);
  else if (key == "train.warmup_epochs") cfg.warmup_epochs = size();
  else if (key == "ugmoe.C") cfg.experts = size();
  else if (key == "ugmoe.expert_input") {
    if (value == "x-tilde") cfg.expert_input = ugmoe::ExpertInput::XTilde;
    else if (value == "mu-tilde") cfg.expert_input = ugmoe::ExpertInput::MuTilde;
    else throw ConfigError("invalid value '" + std::string(value) +
                           "' for key 'ugmoe.expert_input': expected x-tilde or mu-tilde");
  } else if (key == "ugmoe.hidden") cfg.expert_hidden = size();
  else if (key == "ugmoe.k") cfg.top_k = size();
  else return false;
  return true;
}

gpgr::GpgrConfig gpgr_config(const TrainConfig& cfg, std::size_t dim) {
  gpgr::GpgrConfig g;
  g.dim = dim;
  g.layers = cfg.layers;
  g.tau = cfg.tau;
  g.knn = cfg.knn;
  g.pooling = cfg.pooling;
  g.shared_projection = cfg.shared_projection;
  g.uncertainty = flags_of(cfg.variant).graph_uncertainty;
  return g;
}

ugmoe::UgmoeConfig ugmoe_config(const TrainConfig& cfg, std::size_t dim) {
  ugmoe::UgmoeConfig u;
  u.dim = dim;
  u.experts = cfg.experts;
  u.top_k = cfg.top_k;
  u.hidden = cfg.expert_hidden;
  u.uncertainty = flags_of(cfg.variant).moe_uncertainty;
  u.expert_input = cfg.expert_input;
  return u;
}

double learning_rate_at(const TrainConfig& cfg, std::size_t epoch) {
  double lr = cfg.learning_rate;
  if (cfg.warmup_epochs > 0 && epoch < cfg.warmup_epochs) {
    lr *= static_cast<double>(epoch + 1) / static_cast<double>(cfg.warmup_epochs);
  }
  if (cfg.decay_every > 0) lr *= std::pow(cfg.decay_factor, static_cast<double>(epoch / cfg.decay_every));
  return lr;
}

}  // namespace ugg::objective
