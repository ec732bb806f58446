#include "ugg/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "ugg/errors.hpp"
#include "ugg/fileio.hpp"
#include "ugg/numerics/rng.hpp"

namespace ugg::dataio {

std::string_view split_name(Split s) noexcept {
  switch (s) {
    case Split::Train: return "train";
    case Split::Query: return "query";
    case Split::Gallery: return "gallery";
  }
  return "?";
}

std::size_t Dataset::num_labels() const {
  std::set<std::uint32_t> labels;
  for (const Sample& s : samples) labels.insert(s.label);
  return labels.size();
}

std::vector<std::size_t> Dataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].split == s) out.push_back(i);
  return out;
}

void validate(const Dataset& ds) {
  std::set<std::uint32_t> labels;
  std::set<std::uint32_t> ids;
  for (const Sample& s : ds.samples) {
    if (!ids.insert(s.id).second) throw ContractViolation("dataset: duplicate sample id " + std::to_string(s.id));
    labels.insert(s.label);
    for (Modality m : kModalities) {
      const Matrix& t = s.tokens[index_of(m)];
      if (t.rows() != ds.local_tokens + 1 || t.cols() != ds.dim) {
        throw ContractViolation("dataset: sample " + std::to_string(s.id) + " modality " +
                                std::string(name_of(m)) + " has shape " + t.shape_string());
      }
      if (!t.all_finite()) throw ContractViolation("dataset: non-finite token in sample " + std::to_string(s.id));
    }
  }
  std::uint32_t expect = 0;
  for (std::uint32_t l : labels) {
    if (l != expect++) throw ContractViolation("dataset: labels are not contiguous from 0");
  }
}

void validate(const SyntheticSpec& spec) {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0, 1]");
  };
  auto nonneg = [](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(std::string(name) + " must be finite and >= 0");
  };
  if (spec.num_identities < 1) throw ConfigError("data.num_ids must be >= 1");
  if (spec.instances_per_identity < 1) throw ConfigError("data.instances must be >= 1");
  if (spec.dim < 1) throw ConfigError("data.D must be >= 1");
  if (spec.local_tokens < 1) throw ConfigError("data.n must be >= 1");
  prob(spec.heteroscedastic_fraction, "data.hetero_fraction");
  prob(spec.occlusion_prob, "data.occlusion_prob");
  prob(spec.occlusion_begin, "data.occlusion_begin");
  prob(spec.occlusion_end, "data.occlusion_end");
  prob(spec.conflict_prob, "data.conflict_prob");
  if (spec.occlusion_end < spec.occlusion_begin) throw ConfigError("data.occlusion_end < data.occlusion_begin");
  nonneg(spec.signal_scale, "data.signal_scale");
  nonneg(spec.pattern_scale, "data.pattern_scale");
  nonneg(spec.patch_noise_std, "data.patch_noise");
  nonneg(spec.class_noise_std, "data.class_noise");
  if (spec.train_instances + spec.query_instances > spec.instances_per_identity) {
    throw ConfigError("data.train_instances + data.query_instances exceeds data.instances");
  }
  if (spec.conflict_prob > 0.0 && spec.num_identities < 2) {
    throw ConfigError("data.conflict_prob > 0 needs at least two identities");
  }
}

namespace {

constexpr double kHeteroscedasticGain = 5.0;

Matrix normal(RngStream& rng, std::size_t r, std::size_t c, double scale) {
  Matrix m = rng.normal_matrix(r, c);
  m *= scale;
  return m;
}

}  // namespace

Dataset generate(const SyntheticSpec& spec) {
  validate(spec);
  const std::size_t n = spec.local_tokens;
  const std::size_t d = spec.dim;
  const std::uint64_t root = derive_stream(spec.seed, "data");

  // Modality positional patterns, shared by every identity.
  std::array<Matrix, kModalityCount> pattern;
  {
    RngStream rng(spec.seed, derive_stream(root, "pattern"));
    for (Modality m : kModalities) pattern[index_of(m)] = normal(rng, n, d, spec.pattern_scale);
  }

  // Identity signatures: an identity-wide direction plus a per-patch part,
  // each carrying half of the signal variance.
  std::vector<std::array<Matrix, kModalityCount>> clean(spec.num_identities);
  {
    RngStream rng(spec.seed, derive_stream(root, "identity"));
    const double half = spec.signal_scale / std::sqrt(2.0);
    for (std::size_t id = 0; id < spec.num_identities; ++id) {
      for (Modality m : kModalities) {
        const Matrix global = normal(rng, 1, d, half);
        Matrix sig = normal(rng, n, d, half);
        for (std::size_t p = 0; p < n; ++p)
          for (std::size_t j = 0; j < d; ++j) sig(p, j) += global[j] + pattern[index_of(m)](p, j);
        clean[id][index_of(m)] = std::move(sig);
      }
    }
  }

  const auto occ_begin = static_cast<std::size_t>(std::floor(spec.occlusion_begin * static_cast<double>(n)));
  const auto occ_end = static_cast<std::size_t>(std::floor(spec.occlusion_end * static_cast<double>(n)));

  Dataset ds;
  ds.local_tokens = n;
  ds.dim = d;
  ds.samples.reserve(spec.num_identities * spec.instances_per_identity);
  for (std::size_t id = 0; id < spec.num_identities; ++id) {
    for (std::size_t inst = 0; inst < spec.instances_per_identity; ++inst) {
      Sample s;
      s.id = static_cast<std::uint32_t>(id * spec.instances_per_identity + inst);
      s.label = static_cast<std::uint32_t>(id);
      s.split = inst < spec.train_instances                           ? Split::Train
                : inst < spec.train_instances + spec.query_instances ? Split::Query
                                                                      : Split::Gallery;
      RngStream rng(spec.seed, derive_stream(root, s.id));
      for (Modality m : kModalities) {
        std::size_t source = id;
        if (spec.conflict_prob > 0.0 && rng.uniform() < spec.conflict_prob) {
          source = static_cast<std::size_t>(rng.below(spec.num_identities - 1));
          if (source >= id) ++source;
        }
        const Matrix& base = clean[source][index_of(m)];
        Matrix tok(n + 1, d);
        for (std::size_t p = 0; p < n; ++p)
          for (std::size_t j = 0; j < d; ++j) tok(0, j) += base(p, j);
        for (std::size_t j = 0; j < d; ++j)
          tok(0, j) = tok(0, j) / static_cast<double>(n) + spec.class_noise_std * rng.normal();
        for (std::size_t p = 0; p < n; ++p) {
          double scale = spec.patch_noise_std;
          if (spec.heteroscedastic_fraction > 0.0 && rng.uniform() < spec.heteroscedastic_fraction)
            scale *= kHeteroscedasticGain;
          for (std::size_t j = 0; j < d; ++j) tok(p + 1, j) = base(p, j) + scale * rng.normal();
        }
        if (spec.occlusion_prob > 0.0 && rng.uniform() < spec.occlusion_prob) {
          for (std::size_t p = occ_begin; p < occ_end; ++p)
            for (std::size_t j = 0; j < d; ++j) tok(p + 1, j) = 0.0;
        }
        s.tokens[index_of(m)] = std::move(tok);
      }
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

std::array<std::vector<double>, kModalityCount> clean_train_std(const Dataset& ds) {
  std::array<std::vector<double>, kModalityCount> out;
  for (Modality m : kModalities) {
    std::vector<double> mean(ds.dim, 0.0), sq(ds.dim, 0.0);
    std::size_t count = 0;
    for (const Sample& s : ds.samples) {
      if (s.split != Split::Train) continue;
      const Matrix& t = s.tokens[index_of(m)];
      for (std::size_t r = 0; r < t.rows(); ++r) {
        ++count;
        for (std::size_t j = 0; j < ds.dim; ++j) {
          // Welford update per dimension.
          const double x = t(r, j);
          const double delta = x - mean[j];
          mean[j] += delta / static_cast<double>(count);
          sq[j] += delta * (x - mean[j]);
        }
      }
    }
    auto& sd = out[index_of(m)];
    sd.assign(ds.dim, 0.0);
    if (count > 1)
      for (std::size_t j = 0; j < ds.dim; ++j) sd[j] = std::sqrt(sq[j] / static_cast<double>(count - 1));
  }
  return out;
}

namespace {

void add_gaussian(Matrix& t, const std::vector<double>& sd, double eps, RngStream& rng) {
  const double scale = eps / 255.0;
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t j = 0; j < t.cols(); ++j) t(r, j) += rng.normal() * scale * sd[j];
}

void zero_patches(Matrix& t, RngStream& rng) {
  const std::size_t n = t.rows() - 1;
  const auto count = static_cast<std::size_t>(std::ceil(0.05 * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 1);
  for (std::size_t i = 0; i < count && i < n; ++i) {
    std::swap(order[i], order[i + rng.below(n - i)]);
    for (std::size_t j = 0; j < t.cols(); ++j) t(order[i], j) = 0.0;
  }
}

void flip_signs(Matrix& t, RngStream& rng) {
  for (double& v : t.values())
    if (rng.uniform() < 0.01) v = -v;
}

}  // namespace

Dataset inject_noise(const Dataset& ds, const NoiseSpec& noise) {
  if (!(noise.intensity >= 0.0) || !std::isfinite(noise.intensity)) {
    throw ConfigError("noise.eps must be finite and >= 0");
  }
  Dataset out = ds;
  if (noise.intensity == 0.0) return out;
  const auto sd = clean_train_std(ds);
  const std::uint64_t root = derive_stream(noise.seed, "noise");
  for (Sample& s : out.samples) {
    if (noise.target == NoiseTarget::TestOnly && s.split == Split::Train) continue;
    std::uint64_t kind = 0;
    if (noise.kind == NoiseKind::Arbitrary) {
      RngStream pick(noise.seed, derive_stream(root, std::uint64_t{s.id} * 4 + 3));
      kind = pick.below(3);
    }
    for (Modality m : kModalities) {
      if (!noise.modalities[index_of(m)]) continue;
      // One stream per (sample, modality) so the draws do not depend on eps.
      RngStream rng(noise.seed, derive_stream(root, std::uint64_t{s.id} * 4 + index_of(m)));
      Matrix& t = s.tokens[index_of(m)];
      switch (kind) {
        case 0: add_gaussian(t, sd[index_of(m)], noise.intensity, rng); break;
        case 1: zero_patches(t, rng); break;
        default: flip_signs(t, rng); break;
      }
    }
  }
  return out;
}

// ---- UGGF codec --------------------------------------------------------------------

std::string encode_features(const Dataset& ds) {
  validate(ds);
  const std::size_t per_sample = kModalityCount * (ds.local_tokens + 1) * ds.dim;
  std::string out;
  out.reserve(kFeatureHeaderBytes + ds.samples.size() * (per_sample * 4 + 12));
  out.append(kFeatureMagic, 4);
  put_u32(out, kFeatureVersion);
  put_u32(out, static_cast<std::uint32_t>(ds.samples.size()));
  put_u32(out, static_cast<std::uint32_t>(ds.local_tokens));
  put_u32(out, static_cast<std::uint32_t>(ds.dim));
  put_u32(out, static_cast<std::uint32_t>(kModalityCount));
  put_u64(out, kFeatureHeaderBytes + ds.samples.size() * per_sample * 4);
  for (const Sample& s : ds.samples)
    for (const Matrix& t : s.tokens)
      for (double v : t.values()) put_f32(out, static_cast<float>(v));
  for (const Sample& s : ds.samples) {
    put_u32(out, s.id);
    put_u32(out, s.label);
    put_u32(out, static_cast<std::uint32_t>(s.split));
  }
  return out;
}

Dataset decode_features(std::string_view bytes) {
  if (bytes.size() < 4) throw Truncated("UGGF: file shorter than the magic");
  if (!std::equal(bytes.begin(), bytes.begin() + 4, kFeatureMagic)) {
    throw BadMagic("UGGF: bad magic '" + std::string(bytes.substr(0, 4)) + "'");
  }
  if (bytes.size() < kFeatureHeaderBytes) throw Truncated("UGGF: header truncated");
  FeatureFileHeader h;
  h.version = get_u32(bytes, 4);
  if (h.version != kFeatureVersion) {
    throw VersionMismatch("UGGF: version " + std::to_string(h.version) + ", expected " +
                          std::to_string(kFeatureVersion));
  }
  h.num_samples = get_u32(bytes, 8);
  h.local_tokens = get_u32(bytes, 12);
  h.dim = get_u32(bytes, 16);
  h.modality_count = get_u32(bytes, 20);
  h.label_table_offset = get_u64(bytes, 24);
  if (h.modality_count != kModalityCount) {
    throw FormatError("UGGF: modality count " + std::to_string(h.modality_count));
  }
  const std::uint64_t per_sample = std::uint64_t{kModalityCount} * (std::uint64_t{h.local_tokens} + 1) * h.dim;
  const std::uint64_t payload_end = kFeatureHeaderBytes + std::uint64_t{h.num_samples} * per_sample * 4;
  if (h.label_table_offset != payload_end) throw FormatError("UGGF: label table offset disagrees with header");
  const std::uint64_t total = payload_end + std::uint64_t{h.num_samples} * 12;
  if (bytes.size() < total) {
    throw Truncated("UGGF: " + std::to_string(bytes.size()) + " bytes, header promises " + std::to_string(total));
  }
  if (bytes.size() > total) throw FormatError("UGGF: trailing bytes after label table");

  Dataset ds;
  ds.local_tokens = h.local_tokens;
  ds.dim = h.dim;
  ds.samples.resize(h.num_samples);
  std::size_t at = kFeatureHeaderBytes;
  for (Sample& s : ds.samples) {
    for (Matrix& t : s.tokens) {
      t = Matrix(ds.local_tokens + 1, ds.dim);
      for (double& v : t.values()) {
        v = get_f32(bytes, at);
        at += 4;
      }
    }
  }
  for (Sample& s : ds.samples) {
    s.id = get_u32(bytes, at);
    s.label = get_u32(bytes, at + 4);
    const std::uint32_t split = get_u32(bytes, at + 8);
    if (split > 2) throw FormatError("UGGF: invalid split code " + std::to_string(split));
    s.split = static_cast<Split>(split);
    at += 12;
  }
  try {
    validate(ds);
  } catch (const ContractViolation& e) {
    throw FormatError(std::string("UGGF: ") + e.what());
  }
  return ds;
}

void write_features(const Dataset& ds, const std::filesystem::path& path) {
  write_file_locked(path, encode_features(ds));
}

Dataset read_features(const std::filesystem::path& path) {
  return decode_features(read_file(path));
}

std::string manifest_csv(const Dataset& ds) {
  std::ostringstream os;
  // camera is reserved; synthetic data has no cameras.
  os << "sample_id,identity,split,camera\n";
  for (const Sample& s : ds.samples) os << s.id << ',' << s.label << ',' << split_name(s.split) << ",0\n";
  return os.str();
}

void write_manifest(const Dataset& ds, const std::filesystem::path& path) {
  write_file_locked(path, manifest_csv(ds));
}

}  // namespace ugg::dataio
