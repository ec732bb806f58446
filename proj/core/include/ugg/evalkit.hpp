#pragma once

// Retrieval metrics (mAP, CMC), the test-time noise sweep and the ablation
// runner.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ugg/dataio.hpp"
#include "ugg/numerics/matrix.hpp"
#include "ugg/objective.hpp"

namespace ugg::evalkit {

enum class Metric { Euclidean, Cosine };

struct RetrievalResult {
  Matrix distances;  // queries x gallery
  std::vector<std::uint32_t> query_labels;
  std::vector<std::uint32_t> gallery_labels;
  std::vector<std::uint32_t> query_ids;
  std::vector<std::uint32_t> gallery_ids;
};

struct MetricReport {
  double mAP = 0.0;
  std::vector<double> cmc;  // cmc[r] = fraction of valid queries matched within the top r+1
  double rank1 = 0.0;
  double rank5 = 0.0;
  double rank10 = 0.0;
  std::vector<double> ap;  // per valid query, in query order
  std::size_t valid_queries = 0;
  std::size_t invalid_queries = 0;  // identity absent from the gallery
};

Matrix distance_matrix(const Matrix& query, const Matrix& gallery, Metric metric = Metric::Euclidean);

// Ranks each query's gallery by ascending distance (ties by gallery index),
// skipping gallery entries with the query's sample id.
MetricReport evaluate(const RetrievalResult& r);
MetricReport evaluate(const Matrix& query_features, const Matrix& gallery_features,
                      std::span<const std::uint32_t> query_labels,
                      std::span<const std::uint32_t> gallery_labels,
                      std::span<const std::uint32_t> query_ids, std::span<const std::uint32_t> gallery_ids,
                      Metric metric = Metric::Euclidean);

// Query vs gallery split of `ds` with the model's eval-mode features.
MetricReport evaluate_model(const objective::Model& model, const dataio::Dataset& ds,
                            Metric metric = Metric::Euclidean);

// Rank-k from a CMC vector; saturates at the last entry when k exceeds it.
double rank_at(const std::vector<double>& cmc, std::size_t k);

// ---- sweep -----------------------------------------------------------------------

struct SweepRow {
  double eps = 0.0;
  objective::Variant variant = objective::Variant::E;
  std::uint64_t seed = 0;
  double mAP = 0.0;
  double rank1 = 0.0;
};

struct SweepSummary {
  double eps = 0.0;
  objective::Variant variant = objective::Variant::E;
  double mean_mAP = 0.0;
  double std_mAP = 0.0;
  double mean_rank1 = 0.0;
  double std_rank1 = 0.0;
  std::size_t seeds = 0;
};

struct SweepReport {
  std::vector<SweepRow> rows;
  std::vector<SweepSummary> summary() const;
};

// Trained models keyed by (variant, seed).
using ModelSet = std::map<std::pair<objective::Variant, std::uint64_t>, objective::Model>;

class MissingCheckpoint : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// For each (eps, variant, seed): corrupt the test split with `noise` at
// intensity eps, embed in eval mode and evaluate. Rows are ordered by eps,
// then variant, then seed.
SweepReport noise_sweep(const ModelSet& models, const dataio::Dataset& ds, std::span<const double> eps_list,
                        std::span<const objective::Variant> variants, std::span<const std::uint64_t> seeds,
                        const dataio::NoiseSpec& noise, Metric metric = Metric::Euclidean);

// ---- ablation --------------------------------------------------------------------

struct AblationRow {
  objective::Variant variant = objective::Variant::E;
  std::uint64_t seed = 0;
  double mAP = 0.0;
  double rank1 = 0.0;
  double rank5 = 0.0;
  double rank10 = 0.0;
};

struct AblationSummary {
  objective::Variant variant = objective::Variant::E;
  double mean_mAP = 0.0, std_mAP = 0.0;
  double mean_rank1 = 0.0, std_rank1 = 0.0;
  double mean_rank5 = 0.0, std_rank5 = 0.0;
  double mean_rank10 = 0.0, std_rank10 = 0.0;
};

struct AblationTable {
  std::vector<AblationRow> rows;  // variant-major, then seed
  std::vector<AblationSummary> summary() const;
};

class VariantTrainingFailed : public std::runtime_error {
 public:
  VariantTrainingFailed(objective::Variant v, const std::string& what);
  objective::Variant variant() const noexcept { return variant_; }

 private:
  objective::Variant variant_;
};

struct AblationOptions {
  std::vector<objective::Variant> variants{objective::kVariants.begin(), objective::kVariants.end()};
  Metric metric = Metric::Euclidean;
  std::map<std::string, std::string> snapshot;
};

// Trains every (variant, seed) from `base` and evaluates it. Trained models
// are stored in `models` when non-null.
AblationTable ablation_run(const objective::TrainConfig& base, const dataio::Dataset& ds,
                           std::span<const std::uint64_t> seeds, const AblationOptions& options = {},
                           ModelSet* models = nullptr);

// ---- reports ---------------------------------------------------------------------

double mean(std::span<const double> v);
// Sample standard deviation (n - 1); 0 for fewer than two values.
double stddev(std::span<const double> v);

std::string metric_csv(const MetricReport& r, std::string_view config_hash);
std::string metric_json(const MetricReport& r, std::string_view run_id, std::string_view config_hash);
std::string sweep_csv(const SweepReport& r, std::string_view config_hash, std::string_view noise_label);
std::string sweep_json(const SweepReport& r, std::string_view run_id, std::string_view config_hash,
                       std::string_view noise_label);
std::string ablation_csv(const AblationTable& t, std::string_view config_hash);
std::string ablation_json(const AblationTable& t, std::string_view run_id, std::string_view config_hash);
std::string routing_csv(const std::vector<objective::RoutingRecord>& records, std::string_view config_hash);

// ---- directional checks ----------------------------------------------------------

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// mean(e) >= mean(c) >= mean(a) and mean(e) - mean(a) >= min_gap on mAP.
std::vector<CheckResult> ablation_checks(const AblationTable& t, double min_gap = 0.03);
// Per variant: seed-averaged mAP non-increasing in eps up to `tolerance`
// (default: twice the standard error of the difference of the two seed means,
// at least 0.005, per step); e's 0 -> max eps drop <= b's drop.
std::vector<CheckResult> sweep_checks(const SweepReport& r, std::optional<double> tolerance = std::nullopt);

}  // namespace ugg::evalkit
