#pragma once

// Flat key=value run configuration shared by every CLI subcommand.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ugg/dataio.hpp"
#include "ugg/evalkit.hpp"
#include "ugg/objective.hpp"

namespace ugg::config {

struct GradcheckSettings {
  std::size_t dim = 8;
  std::size_t local_tokens = 4;
  std::size_t identities = 4;
  std::size_t instances = 2;
  double tolerance = 1e-4;
};

struct RunConfig {
  std::uint64_t seed = 0;
  dataio::SyntheticSpec data;
  dataio::NoiseSpec noise;
  objective::TrainConfig train;
  evalkit::Metric metric = evalkit::Metric::Euclidean;
  std::vector<double> sweep_eps = {0, 5, 10, 15, 20, 25, 30};
  std::vector<objective::Variant> variants{objective::kVariants.begin(), objective::kVariants.end()};
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  GradcheckSettings gradcheck;
};

enum class Provenance { Published, Chosen };

struct KeyInfo {
  std::string key;
  Provenance provenance = Provenance::Chosen;
  std::string help;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

// Every recognized key, sorted.
const std::vector<KeyInfo>& keys();

// Throws ConfigError naming the key when it is unknown or its value is malformed.
void apply(RunConfig& cfg, std::string_view key, std::string_view value);

// `key = value` lines; '#' starts a comment. Errors carry the line number.
std::vector<std::pair<std::string, std::string>> parse_text(std::string_view text);
RunConfig load(std::string_view file_text,
               const std::vector<std::pair<std::string, std::string>>& overrides = {});

using Resolved = std::map<std::string, std::string>;

Resolved resolve(const RunConfig& cfg);
// "key = value" per line, sorted.
std::string to_text(const Resolved& r);
// FNV-1a 64 over "key=value\n" lines in key order, as 16 hex digits.
std::string hash(const Resolved& r);

// Key listing with defaults and provenance for --help.
std::string help_text();

}  // namespace ugg::config
