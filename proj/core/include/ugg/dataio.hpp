#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ugg/errors.hpp"
#include "ugg/modality.hpp"
#include "ugg/numerics/matrix.hpp"

namespace ugg::dataio {

enum class Split : std::uint32_t { Train = 0, Query = 1, Gallery = 2 };

std::string_view split_name(Split s) noexcept;

struct Sample {
  std::uint32_t id = 0;
  std::uint32_t label = 0;
  Split split = Split::Train;
  // One (n + 1) x D token matrix per modality, row 0 the class token.
  std::array<Matrix, kModalityCount> tokens;
};

struct Dataset {
  std::size_t local_tokens = 0;  // n
  std::size_t dim = 0;           // D
  std::vector<Sample> samples;

  std::size_t num_labels() const;
  std::vector<std::size_t> indices(Split s) const;
};

// Structural checks: shapes, finiteness, contiguous labels.
void validate(const Dataset& ds);

struct SyntheticSpec {
  std::size_t num_identities = 20;
  std::size_t instances_per_identity = 10;
  std::size_t dim = 64;
  std::size_t local_tokens = 128;
  double signal_scale = 1.0;
  double pattern_scale = 1.0;
  double patch_noise_std = 0.5;
  double class_noise_std = 1.2;
  double heteroscedastic_fraction = 0.2;
  double occlusion_prob = 0.1;
  // Occluded patch block as fractions of n: [begin*n, end*n).
  double occlusion_begin = 0.0;
  double occlusion_end = 0.25;
  double conflict_prob = 0.05;
  // Per identity: the first `train_instances` go to train, the next
  // `query_instances` to query, the rest to gallery.
  std::size_t train_instances = 6;
  std::size_t query_instances = 2;
  std::uint64_t seed = 0;
};

void validate(const SyntheticSpec& spec);

// Pure function of spec (including its seed).
Dataset generate(const SyntheticSpec& spec);

enum class NoiseKind { Gaussian, Arbitrary };
enum class NoiseTarget { TrainAndTest, TestOnly };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::Gaussian;
  double intensity = 0.0;  // epsilon on the 0..255 pixel scale
  NoiseTarget target = NoiseTarget::TestOnly;
  std::array<bool, kModalityCount> modalities = {true, true, true};
  std::uint64_t seed = 0;
};

// Per (modality, dimension) standard deviation over all token rows of the
// train split.
std::array<std::vector<double>, kModalityCount> clean_train_std(const Dataset& ds);

// Returns a corrupted copy; `ds` is not modified. Gaussian noise has
// per-dimension std (intensity / 255) * s_d. Arbitrary noise picks, per
// sample, one of {gaussian, zero 5% of local patches, flip the sign of 1% of
// entries}. intensity 0 returns an identical copy.
Dataset inject_noise(const Dataset& ds, const NoiseSpec& noise);

// ---- UGGF feature files ----------------------------------------------------------

inline constexpr char kFeatureMagic[4] = {'U', 'G', 'G', 'F'};
inline constexpr std::uint32_t kFeatureVersion = 1;

struct FeatureFileHeader {
  std::uint32_t version = kFeatureVersion;
  std::uint32_t num_samples = 0;
  std::uint32_t local_tokens = 0;
  std::uint32_t dim = 0;
  std::uint32_t modality_count = kModalityCount;
  std::uint64_t label_table_offset = 0;
};

inline constexpr std::size_t kFeatureHeaderBytes = 4 + 5 * 4 + 8;

using ugg::BadMagic;
using ugg::FormatError;
using ugg::Truncated;
using ugg::VersionMismatch;

std::string encode_features(const Dataset& ds);
Dataset decode_features(std::string_view bytes);
void write_features(const Dataset& ds, const std::filesystem::path& path);
Dataset read_features(const std::filesystem::path& path);

// sample_id,identity,split,camera (camera is always 0 for synthetic data)
std::string manifest_csv(const Dataset& ds);
void write_manifest(const Dataset& ds, const std::filesystem::path& path);

}  // namespace ugg::dataio
