#include "ugg/config.hpp"

#include <algorithm>
#include <sstream>

#include "ugg/errors.hpp"
#include "ugg/fileio.hpp"
#include "ugg/text.hpp"

namespace ugg::config {

namespace {

using objective::Variant;

std::size_t to_size(std::string_view key, std::string_view v) {
  return static_cast<std::size_t>(parse_uint(key, v));
}

template <typename T, typename F>
std::string join(const std::vector<T>& items, F&& fmt) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + fmt(items[i]);
  return out;
}

KeyInfo size_key(std::string key, Provenance prov, std::string help, std::size_t dataio::SyntheticSpec::*field) {
  return {key, prov, std::move(help),
          [key, field](RunConfig& c, std::string_view v) { c.data.*field = to_size(key, v); },
          [field](const RunConfig& c) { return std::to_string(c.data.*field); }};
}

KeyInfo real_key(std::string key, Provenance prov, std::string help, double dataio::SyntheticSpec::*field) {
  return {key, prov, std::move(help),
          [key, field](RunConfig& c, std::string_view v) { c.data.*field = parse_double(key, v); },
          [field](const RunConfig& c) { return format_double(c.data.*field); }};
}

// TrainConfig keys delegate to objective::apply_entry / to_entries.
KeyInfo train_key(std::string key, Provenance prov, std::string help) {
  return {key, prov, std::move(help),
          [key](RunConfig& c, std::string_view v) { objective::apply_entry(c.train, key, v); },
          [key](const RunConfig& c) {
            for (auto& [k, v] : objective::to_entries(c.train))
              if (k == key) return v;
            return std::string();
          }};
}

std::vector<KeyInfo> build_keys() {
  const auto P = Provenance::Published;
  const auto A = Provenance::Chosen;
  std::vector<KeyInfo> k;
  k.push_back({"seed", A, "root seed; split into data, init, reparam, sampler and noise streams",
               [](RunConfig& c, std::string_view v) {
                 c.seed = parse_uint("seed", v);
                 c.train.seed = c.seed;
                 c.data.seed = c.seed;
                 c.noise.seed = c.seed;
               },
               [](const RunConfig& c) { return std::to_string(c.seed); }});

  k.push_back(size_key("data.num_ids", A, "synthetic identities", &dataio::SyntheticSpec::num_identities));
  k.push_back(size_key("data.instances", A, "instances per identity", &dataio::SyntheticSpec::instances_per_identity));
  k.push_back(size_key("data.D", A, "token width D", &dataio::SyntheticSpec::dim));
  k.push_back(size_key("data.n", P, "local tokens per modality (128 local + 1 class token)",
                       &dataio::SyntheticSpec::local_tokens));
  k.push_back(real_key("data.signal_scale", A, "identity signature std", &dataio::SyntheticSpec::signal_scale));
  k.push_back(real_key("data.pattern_scale", A, "shared positional pattern std", &dataio::SyntheticSpec::pattern_scale));
  k.push_back(real_key("data.patch_noise", A, "per-patch noise std", &dataio::SyntheticSpec::patch_noise_std));
  k.push_back(real_key("data.class_noise", A, "class-token noise std", &dataio::SyntheticSpec::class_noise_std));
  k.push_back(real_key("data.hetero_fraction", A, "fraction of patches with 5x noise",
                       &dataio::SyntheticSpec::heteroscedastic_fraction));
  k.push_back(real_key("data.occlusion_prob", A, "per-modality occlusion probability",
                       &dataio::SyntheticSpec::occlusion_prob));
  k.push_back(real_key("data.occlusion_begin", A, "occluded block start, fraction of n",
                       &dataio::SyntheticSpec::occlusion_begin));
  k.push_back(real_key("data.occlusion_end", A, "occluded block end, fraction of n",
                       &dataio::SyntheticSpec::occlusion_end));
  k.push_back(real_key("data.conflict_prob", A, "probability a modality carries another identity",
                       &dataio::SyntheticSpec::conflict_prob));
  k.push_back(size_key("data.train_instances", A, "per-identity instances in the train split",
                       &dataio::SyntheticSpec::train_instances));
  k.push_back(size_key("data.query_instances", A, "per-identity instances in the query split (rest: gallery)",
                       &dataio::SyntheticSpec::query_instances));

  k.push_back({"noise.kind", P, "test-time corruption: gaussian | arbitrary (arbitrary is a stand-in mixture)",
               [](RunConfig& c, std::string_view v) {
                 v = trim(v);
                 if (v == "gaussian") c.noise.kind = dataio::NoiseKind::Gaussian;
                 else if (v == "arbitrary") c.noise.kind = dataio::NoiseKind::Arbitrary;
                 else throw ConfigError("invalid value '" + std::string(v) + "' for key 'noise.kind'");
               },
               [](const RunConfig& c) {
                 return std::string(c.noise.kind == dataio::NoiseKind::Gaussian ? "gaussian" : "arbitrary");
               }});
  k.push_back({"noise.eps", P, "noise intensity on the 0..255 scale; std = eps/255 x clean train std",
               [](RunConfig& c, std::string_view v) {
                 const double eps = parse_double("noise.eps", v);
                 if (eps < 0) throw ConfigError("noise.eps must be >= 0");
                 c.noise.intensity = eps;
               },
               [](const RunConfig& c) { return format_double(c.noise.intensity); }});
  k.push_back({"noise.target", A, "test-only | train-and-test",
               [](RunConfig& c, std::string_view v) {
                 v = trim(v);
                 if (v == "test-only") c.noise.target = dataio::NoiseTarget::TestOnly;
                 else if (v == "train-and-test") c.noise.target = dataio::NoiseTarget::TrainAndTest;
                 else throw ConfigError("invalid value '" + std::string(v) + "' for key 'noise.target'");
               },
               [](const RunConfig& c) {
                 return std::string(c.noise.target == dataio::NoiseTarget::TestOnly ? "test-only" : "train-and-test");
               }});
  k.push_back({"noise.modalities", A, "modalities receiving noise, subset of RNT",
               [](RunConfig& c, std::string_view v) {
                 v = trim(v);
                 std::array<bool, kModalityCount> mask{};
                 for (char ch : v) {
                   const auto it = std::find_if(kModalities.begin(), kModalities.end(),
                                                [&](Modality m) { return name_of(m)[0] == ch; });
                   if (it == kModalities.end()) {
                     throw ConfigError("invalid value '" + std::string(v) + "' for key 'noise.modalities'");
                   }
                   mask[index_of(*it)] = true;
                 }
                 c.noise.modalities = mask;
               },
               [](const RunConfig& c) {
                 std::string s;
                 for (Modality m : kModalities)
                   if (c.noise.modalities[index_of(m)]) s += name_of(m);
                 return s;
               }});

  k.push_back(train_key("train.variant", P, "ablation row a..e (a baseline, e full model)"));
  k.push_back(train_key("train.lr", P, "Adam learning rate"));
  k.push_back(train_key("train.epochs", P, "training epochs"));
  k.push_back(train_key("train.P", A, "identities per batch"));
  k.push_back(train_key("train.K", A, "instances per identity per batch"));
  k.push_back(train_key("train.beta1", A, "Adam beta1"));
  k.push_back(train_key("train.beta2", A, "Adam beta2"));
  k.push_back(train_key("train.adam_eps", A, "Adam epsilon"));
  k.push_back(train_key("train.warmup_epochs", A, "linear warmup epochs (0 = off)"));
  k.push_back(train_key("train.decay_every", A, "epochs between lr decays (0 = off)"));
  k.push_back(train_key("train.decay_factor", A, "lr decay factor"));
  k.push_back(train_key("train.bn_neck", A, "batch-norm neck before the classifier"));
  k.push_back(train_key("train.aux_heads", A, "per-modality auxiliary identity heads"));
  k.push_back(train_key("loss.lambda1", P, "weight of the class-token and sample KL terms"));
  k.push_back(train_key("loss.lambda2", P, "weight of the uncertainty routing loss"));
  k.push_back(train_key("loss.lambda3", P, "weight of the load-balance loss"));
  k.push_back(train_key("loss.margin", A, "batch-hard triplet margin"));
  k.push_back(train_key("gpgr.L", P, "graph-convolution layers"));
  k.push_back(train_key("gpgr.tau", A, "heat-kernel temperature, or 'median' of pairwise squared distances"));
  k.push_back(train_key("gpgr.knn", A, "keep k strongest edges per node (0 = dense)"));
  k.push_back(train_key("gpgr.pooling", A, "local-token pooling: mean | max"));
  k.push_back(train_key("gpgr.shared_projection", P, "share mean/std projections across modalities"));
  k.push_back(train_key("ugmoe.C", P, "experts per modality"));
  k.push_back(train_key("ugmoe.k", P, "experts each modality donates"));
  k.push_back(train_key("ugmoe.hidden", A, "expert hidden width (0 = D)"));
  k.push_back(train_key("ugmoe.expert_input", A, "expert input: x-tilde | mu-tilde"));

  k.push_back({"eval.metric", A, "retrieval distance: euclidean | cosine",
               [](RunConfig& c, std::string_view v) {
                 v = trim(v);
                 if (v == "euclidean") c.metric = evalkit::Metric::Euclidean;
                 else if (v == "cosine") c.metric = evalkit::Metric::Cosine;
                 else throw ConfigError("invalid value '" + std::string(v) + "' for key 'eval.metric'");
               },
               [](const RunConfig& c) {
                 return std::string(c.metric == evalkit::Metric::Euclidean ? "euclidean" : "cosine");
               }});
  k.push_back({"sweep.eps", P, "comma-separated noise intensities",
               [](RunConfig& c, std::string_view v) {
                 std::vector<double> eps;
                 for (const std::string& item : split_list(v)) {
                   const double e = parse_double("sweep.eps", item);
                   if (e < 0) throw ConfigError("sweep.eps entries must be >= 0");
                   eps.push_back(e);
                 }
                 if (eps.empty()) throw ConfigError("sweep.eps must not be empty");
                 c.sweep_eps = eps;
               },
               [](const RunConfig& c) { return join(c.sweep_eps, [](double e) { return format_double(e); }); }});
  k.push_back({"run.variants", P, "ablation rows to train or sweep",
               [](RunConfig& c, std::string_view v) {
                 std::vector<Variant> vs;
                 for (const std::string& item : split_list(v)) vs.push_back(objective::parse_variant(item));
                 if (vs.empty()) throw ConfigError("run.variants must not be empty");
                 c.variants = vs;
               },
               [](const RunConfig& c) {
                 return join(c.variants, [](Variant x) { return std::string(1, objective::variant_letter(x)); });
               }});
  k.push_back({"run.seeds", A, "training seeds for ablate and sweep",
               [](RunConfig& c, std::string_view v) {
                 std::vector<std::uint64_t> s;
                 for (const std::string& item : split_list(v)) s.push_back(parse_uint("run.seeds", item));
                 if (s.empty()) throw ConfigError("run.seeds must not be empty");
                 c.seeds = s;
               },
               [](const RunConfig& c) { return join(c.seeds, [](std::uint64_t x) { return std::to_string(x); }); }});
  k.push_back({"gradcheck.D", A, "token width for the gradient check",
               [](RunConfig& c, std::string_view v) { c.gradcheck.dim = to_size("gradcheck.D", v); },
               [](const RunConfig& c) { return std::to_string(c.gradcheck.dim); }});
  k.push_back({"gradcheck.n", A, "local tokens for the gradient check",
               [](RunConfig& c, std::string_view v) { c.gradcheck.local_tokens = to_size("gradcheck.n", v); },
               [](const RunConfig& c) { return std::to_string(c.gradcheck.local_tokens); }});
  k.push_back({"gradcheck.ids", A, "identities in the gradient-check micro-batch",
               [](RunConfig& c, std::string_view v) { c.gradcheck.identities = to_size("gradcheck.ids", v); },
               [](const RunConfig& c) { return std::to_string(c.gradcheck.identities); }});
  k.push_back({"gradcheck.instances", A, "instances per identity in the gradient-check micro-batch",
               [](RunConfig& c, std::string_view v) { c.gradcheck.instances = to_size("gradcheck.instances", v); },
               [](const RunConfig& c) { return std::to_string(c.gradcheck.instances); }});
  k.push_back({"gradcheck.tolerance", A, "maximum relative error",
               [](RunConfig& c, std::string_view v) { c.gradcheck.tolerance = parse_double("gradcheck.tolerance", v); },
               [](const RunConfig& c) { return format_double(c.gradcheck.tolerance); }});

  std::sort(k.begin(), k.end(), [](const KeyInfo& a, const KeyInfo& b) { return a.key < b.key; });
  return k;
}

}  // namespace

const std::vector<KeyInfo>& keys() {
  static const std::vector<KeyInfo> table = build_keys();
  return table;
}

void apply(RunConfig& cfg, std::string_view key, std::string_view value) {
  const auto& table = keys();
  const auto it = std::lower_bound(table.begin(), table.end(), key,
                                   [](const KeyInfo& k, std::string_view s) { return k.key < s; });
  if (it == table.end() || it->key != key) throw ConfigError("unknown config key '" + std::string(key) + "'");
  it->set(cfg, value);
}

std::vector<std::pair<std::string, std::string>> parse_text(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t start = 0, line_no = 0;
  while (start < text.size()) {
    const std::size_t end = std::min(text.find('\n', start), text.size());
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (const std::size_t hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string_view key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    out.emplace_back(std::string(key), std::string(trim(line.substr(eq + 1))));
  }
  return out;
}

RunConfig load(std::string_view file_text, const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig cfg;
  // The root seed first so explicit per-stream keys cannot be clobbered by it.
  auto entries = parse_text(file_text);
  entries.insert(entries.end(), overrides.begin(), overrides.end());
  std::stable_partition(entries.begin(), entries.end(), [](const auto& e) { return e.first == "seed"; });
  for (const auto& [k, v] : entries) apply(cfg, k, v);
  objective::validate(cfg.train);
  dataio::validate(cfg.data);
  return cfg;
}

Resolved resolve(const RunConfig& cfg) {
  Resolved r;
  for (const KeyInfo& k : keys()) r[k.key] = k.get(cfg);
  return r;
}

std::string to_text(const Resolved& r) {
  std::string out;
  for (const auto& [k, v] : r) out += k + " = " + v + "\n";
  return out;
}

std::string hash(const Resolved& r) {
  std::string canon;
  for (const auto& [k, v] : r) canon += k + "=" + v + "\n";
  return hex64(fnv1a64(canon));
}

std::string help_text() {
  const Resolved defaults = resolve(RunConfig{});
  std::ostringstream os;
  os << "Config keys (file lines 'key = value', or --key value):\n";
  for (const KeyInfo& k : keys()) {
    os << "  " << k.key << " = " << defaults.at(k.key) << "  ["
       << (k.provenance == Provenance::Published ? "published default" : "implementation choice") << "] " << k.help << '\n';
  }
  return os.str();
}

}  // namespace ugg::config
