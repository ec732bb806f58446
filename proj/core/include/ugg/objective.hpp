#pragma once

// Task losses, the weighted total objective, the ablation variants and the
// training loop that turns gpgr + ugmoe into a trainable retrieval model.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ugg/dataio.hpp"
#include "ugg/gpgr.hpp"
#include "ugg/modality.hpp"
#include "ugg/numerics/gradcheck.hpp"
#include "ugg/numerics/autodiff.hpp"
#include "ugg/numerics/params.hpp"
#include "ugg/ugmoe.hpp"

namespace ugg::objective {

// Ablation rows: a class-token baseline, b +MoE, c +uncertainty-guided MoE,
// d +patch graph without node Gaussians, e everything.
enum class Variant { A, B, C, D, E };
inline constexpr std::array<Variant, 5> kVariants = {Variant::A, Variant::B, Variant::C,
                                                     Variant::D, Variant::E};

char variant_letter(Variant v) noexcept;
Variant parse_variant(std::string_view text);

struct VariantFlags {
  bool moe = false;
  bool moe_uncertainty = false;
  bool graph = false;
  bool graph_uncertainty = false;
};

VariantFlags flags_of(Variant v) noexcept;

struct TrainConfig {
  double lambda1 = 0.1;
  double lambda2 = 1e-4;
  double lambda3 = 1e-4;
  double learning_rate = 0.00035;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t epochs = 40;
  std::size_t P = 4;
  std::size_t K = 4;
  double margin = 0.3;
  std::uint64_t seed = 0;
  Variant variant = Variant::E;

  // Architecture passthrough.
  std::size_t experts = 4;  // C
  std::size_t top_k = 1;    // k
  std::size_t layers = 2;   // L
  std::optional<double> tau;
  std::size_t knn = 0;
  gpgr::Pooling pooling = gpgr::Pooling::Mean;
  bool shared_projection = true;
  std::size_t expert_hidden = 0;
  ugmoe::ExpertInput expert_input = ugmoe::ExpertInput::XTilde;

  // Switches, off by default.
  std::size_t warmup_epochs = 0;
  std::size_t decay_every = 0;  // epochs between lr decays; 0 disables
  double decay_factor = 0.1;
  bool bn_neck = false;
  bool aux_heads = false;

  std::size_t batch_size() const noexcept { return P * K; }
};

void validate(const TrainConfig& cfg);

// Flat key=value view of a TrainConfig ("loss.lambda1", "train.lr", ...),
// sorted by key. Values round-trip exactly through apply_entry.
std::vector<std::pair<std::string, std::string>> to_entries(const TrainConfig& cfg);
// Returns false when `key` is not a TrainConfig key; throws ConfigError on a
// malformed value.
bool apply_entry(TrainConfig& cfg, std::string_view key, std::string_view value);

gpgr::GpgrConfig gpgr_config(const TrainConfig& cfg, std::size_t dim);
ugmoe::UgmoeConfig ugmoe_config(const TrainConfig& cfg, std::size_t dim);

// ---- losses --------------------------------------------------------------------

struct LossBreakdown {
  double ce = 0.0;
  double tri = 0.0;
  std::array<double, kModalityCount> kl_cs{};    // class-token KL + sample KL
  std::array<double, kModalityCount> routing{};  // uncertainty routing loss
  std::array<double, kModalityCount> balance{};  // load-balance loss
  double total = 0.0;
};

// Zeroes the terms of components the variant disables and recomputes total.
LossBreakdown total_loss(const LossBreakdown& parts, const TrainConfig& cfg);

double cross_entropy_id(const Matrix& logits, std::span<const std::uint32_t> labels);
double batch_hard_triplet(const Matrix& features, std::span<const std::uint32_t> labels,
                          double margin);
Var cross_entropy_id(Var logits, std::span<const std::uint32_t> labels);
Var batch_hard_triplet(Var features, std::span<const std::uint32_t> labels, double margin);

// ---- model -----------------------------------------------------------------------

struct Model {
  TrainConfig config;
  std::size_t dim = 0;
  std::size_t num_classes = 0;
  ParamSet params;
  // Non-trainable state (bn-neck running statistics).
  ParamSet buffers;
};

Model init_model(const TrainConfig& cfg, std::size_t dim, std::size_t num_classes);

// One row of the routing diagnostic.
struct RoutingRecord {
  std::uint32_t sample_id = 0;
  Modality modality = Modality::R;
  std::vector<std::size_t> selected;
  std::vector<double> weights;
  double mean_sigma_sq = 0.0;  // 0 without the sample Gaussian
};

struct BatchForward {
  Var features;  // B x 3D retrieval features
  Var logits;    // B x classes
  std::vector<Var> aux_logits;
  std::array<Var, kModalityCount> kl_cs;
  std::array<Var, kModalityCount> routing;
  std::array<Var, kModalityCount> balance;
  std::vector<RoutingRecord> routing_records;
};

// Reparameterization noise for sample i, modality m comes from a stream
// derived from (noise_stream, i, m), so a fixed noise_stream pins it.
BatchForward forward_batch(Tape& tape, Binding& p, const Model& model,
                           std::span<const dataio::Sample* const> batch, Mode mode,
                           std::uint64_t noise_stream);

struct LossVars {
  Var total;
  LossBreakdown parts;
};

LossVars loss_from_forward(const BatchForward& fwd, std::span<const std::uint32_t> labels,
                           const TrainConfig& cfg);

// Eval-mode retrieval features, one row per sample.
Matrix embed(const Model& model, std::span<const dataio::Sample* const> samples);
Matrix embed(const Model& model, const dataio::Dataset& ds, dataio::Split split);
std::vector<RoutingRecord> routing_diagnostics(const Model& model,
                                               std::span<const dataio::Sample* const> samples);

// ---- training --------------------------------------------------------------------

struct HistoryRow {
  std::uint64_t step = 0;
  LossBreakdown loss;
};

struct AdamState {
  ParamSet m;
  ParamSet v;
  std::uint64_t step = 0;
};

struct Checkpoint {
  Model model;
  AdamState adam;
  std::size_t epoch = 0;  // completed epochs
  std::vector<HistoryRow> history;
  // Resolved run configuration; merged with to_entries(model.config) on save.
  std::map<std::string, std::string> snapshot;
};

struct FitOptions {
  // Stop after this many completed epochs (for interruption tests).
  std::optional<std::size_t> stop_after_epoch;
  std::map<std::string, std::string> snapshot;
};

// P x K sampling -> forward -> total loss -> Adam, for config.epochs epochs.
// Throws NonFiniteLoss naming the first non-finite term.
Checkpoint fit(const TrainConfig& config, const dataio::Dataset& ds, const FitOptions& options = {});
// Continues `from` until config.epochs (or stop_after_epoch).
Checkpoint resume(Checkpoint from, const dataio::Dataset& ds, const FitOptions& options = {});

// Learning rate in effect during `epoch` (0-based).
double learning_rate_at(const TrainConfig& cfg, std::size_t epoch);

// The per-step batch (sample indices into ds) for (seed, epoch, batch index).
std::vector<std::size_t> sample_batch(const TrainConfig& cfg, const dataio::Dataset& ds,
                                      std::size_t epoch, std::size_t batch_index);
std::size_t batches_per_epoch(const TrainConfig& cfg, const dataio::Dataset& ds);

// step,ce,tri,kl_cs,lr_loss,le_loss,total (per-modality terms summed).
std::string history_csv(const std::vector<HistoryRow>& history, std::string_view config_hash);

// ---- gradient certification -----------------------------------------------------

// A small all-train synthetic batch for finite-difference checks.
dataio::Dataset gradcheck_batch(std::size_t dim, std::size_t local_tokens, std::size_t identities,
                                std::size_t instances, std::uint64_t seed);

// Checks d(total loss)/d(theta) for every parameter of a freshly initialized
// model on `batch` (one train-mode step, reparameterization noise pinned).
std::vector<GradReport> gradcheck_model(const TrainConfig& cfg, const dataio::Dataset& batch,
                                        const GradCheckOptions& options = {});

// ---- UGGC checkpoint files -------------------------------------------------------

inline constexpr char kCheckpointMagic[4] = {'U', 'G', 'G', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ugg::objective
