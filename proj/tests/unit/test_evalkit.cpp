#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <json.hpp>
#include <random>

#include "retrieval_oracle.hpp"
#include "support.hpp"
#include "ugg/errors.hpp"
#include "ugg/evalkit.hpp"

namespace ugg::evalkit {
namespace {

using objective::Variant;
using testing::brute_force;
using testing::OracleResult;
using testing::random_instance;

TEST(EvalkitMetrics, HandAveragePrecision) {
  RetrievalResult r;
  r.distances = Matrix{{0.1, 0.2, 0.3, 0.4}};
  r.query_labels = {7};
  r.gallery_labels = {7, 1, 7, 2};
  const MetricReport m = evaluate(r);
  EXPECT_NEAR(m.mAP, (1.0 + 2.0 / 3.0) / 2.0, 1e-15);
  EXPECT_NEAR(m.mAP, 0.8333, 1e-4);
  EXPECT_EQ(m.rank1, 1.0);
}

TEST(EvalkitMetrics, PerfectRanking) {
  RetrievalResult r;
  r.distances = Matrix{{0.0, 0.1, 5, 6}, {0.2, 0.3, 0.0, 0.1}};
  r.query_labels = {0, 1};
  r.gallery_labels = {0, 0, 1, 1};
  const MetricReport m = evaluate(r);
  EXPECT_EQ(m.mAP, 1.0);
  EXPECT_EQ(m.rank1, 1.0);
  for (double c : m.cmc) EXPECT_EQ(c, 1.0);
}

TEST(EvalkitMetrics, MatchesBruteForceOn500Instances) {
  std::mt19937_64 gen(70);
  const auto start = std::chrono::steady_clock::now();
  std::size_t checked = 0;
  while (checked < 500) {
    const RetrievalResult r = random_instance(gen);
    const OracleResult want = brute_force(r);
    if (want.ap.empty()) continue;
    const MetricReport got = evaluate(r);
    ASSERT_EQ(got.ap.size(), want.ap.size());
    EXPECT_EQ(got.invalid_queries, want.invalid);
    for (std::size_t i = 0; i < want.ap.size(); ++i) EXPECT_NEAR(got.ap[i], want.ap[i], 1e-12);
    double map = 0.0;
    for (double a : want.ap) map += a;
    EXPECT_NEAR(got.mAP, map / static_cast<double>(want.ap.size()), 1e-12);
    for (std::size_t k = 0; k < got.cmc.size(); ++k) {
      double hit = 0.0;
      for (std::size_t f : want.first_hit) hit += f <= k + 1;
      EXPECT_NEAR(got.cmc[k], hit / static_cast<double>(want.first_hit.size()), 1e-12);
    }
    ++checked;
  }
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 30.0);
}

TEST(EvalkitMetrics, CmcIsMonotoneAndBounded) {
  std::mt19937_64 gen(71);
  for (int t = 0; t < 100; ++t) {
    const RetrievalResult r = random_instance(gen);
    if (brute_force(r).ap.empty()) continue;
    const MetricReport m = evaluate(r);
    for (std::size_t k = 0; k < m.cmc.size(); ++k) {
      EXPECT_GE(m.cmc[k], 0.0);
      EXPECT_LE(m.cmc[k], 1.0);
      if (k > 0) EXPECT_GE(m.cmc[k], m.cmc[k - 1]);
    }
    EXPECT_GE(m.mAP, 0.0);
    EXPECT_LE(m.mAP, 1.0);
  }
}

TEST(EvalkitMetrics, InvariantUnderGalleryPermutationWithoutTies) {
  std::mt19937_64 gen(72);
  RetrievalResult r;
  r.distances = testing::random_matrix(6, 30, gen, 0.0, 5.0);
  for (int q = 0; q < 6; ++q) r.query_labels.push_back(q % 3);
  for (int j = 0; j < 30; ++j) r.gallery_labels.push_back(j % 3);
  const MetricReport base = evaluate(r);
  std::vector<std::size_t> perm(30);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), gen);
  RetrievalResult p = r;
  for (std::size_t j = 0; j < 30; ++j) {
    for (std::size_t q = 0; q < 6; ++q) p.distances(q, j) = r.distances(q, perm[j]);
    p.gallery_labels[j] = r.gallery_labels[perm[j]];
  }
  const MetricReport permuted = evaluate(p);
  EXPECT_NEAR(permuted.mAP, base.mAP, 1e-15);
  EXPECT_EQ(permuted.cmc, base.cmc);
}

TEST(EvalkitMetrics, FeatureTranslationDoesNotChangeEuclideanMetrics) {
  std::mt19937_64 gen(73);
  const Matrix q = testing::random_matrix(4, 5, gen), g = testing::random_matrix(12, 5, gen);
  const std::vector<std::uint32_t> ql = {0, 1, 2, 3}, gl = {0, 1, 2, 3, 0, 1, 2, 3, 0, 1, 2, 3};
  const std::vector<std::uint32_t> qi = {100, 101, 102, 103};
  std::vector<std::uint32_t> gi(12);
  std::iota(gi.begin(), gi.end(), 0u);
  const MetricReport a = evaluate(q, g, ql, gl, qi, gi);
  Matrix qs = q, gs = g;
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 5; ++c) qs(r, c) += 3.0 * static_cast<double>(c);
  for (std::size_t r = 0; r < 12; ++r)
    for (std::size_t c = 0; c < 5; ++c) gs(r, c) += 3.0 * static_cast<double>(c);
  EXPECT_NEAR(evaluate(qs, gs, ql, gl, qi, gi).mAP, a.mAP, 1e-12);
}

TEST(EvalkitMetrics, DistanceMatrixMatchesDefinition) {
  std::mt19937_64 gen(74);
  const Matrix q = testing::random_matrix(3, 4, gen), g = testing::random_matrix(5, 4, gen);
  const Matrix e = distance_matrix(q, g, Metric::Euclidean);
  const Matrix c = distance_matrix(q, g, Metric::Cosine);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0.0, dot = 0.0, nq = 0.0, ng = 0.0;
      for (std::size_t k = 0; k < 4; ++k) {
        s += (q(i, k) - g(j, k)) * (q(i, k) - g(j, k));
        dot += q(i, k) * g(j, k);
        nq += q(i, k) * q(i, k);
        ng += g(j, k) * g(j, k);
      }
      EXPECT_NEAR(e(i, j), std::sqrt(s), 1e-12);
      EXPECT_NEAR(c(i, j), 1.0 - dot / std::sqrt(nq * ng), 1e-12);
    }
}

TEST(EvalkitMetrics, SameSampleIdIsExcluded) {
  RetrievalResult r;
  r.distances = Matrix{{0.0, 0.5, 0.7}};
  r.query_labels = {1};
  r.gallery_labels = {1, 0, 1};
  r.query_ids = {42};
  r.gallery_ids = {42, 1, 2};
  const MetricReport m = evaluate(r);
  EXPECT_NEAR(m.mAP, 0.5, 1e-15);
  EXPECT_EQ(m.rank1, 0.0);
}

TEST(EvalkitMetrics, AbsentIdentityIsFlaggedInvalid) {
  RetrievalResult r;
  r.distances = Matrix{{0.1, 0.2}, {0.3, 0.4}};
  r.query_labels = {0, 9};
  r.gallery_labels = {0, 1};
  const MetricReport m = evaluate(r);
  EXPECT_EQ(m.valid_queries, 1u);
  EXPECT_EQ(m.invalid_queries, 1u);
  EXPECT_EQ(m.mAP, 1.0);
  r.query_labels = {8, 9};
  EXPECT_THROW(evaluate(r), ContractViolation);
}

TEST(EvalkitMetrics, RankAtSaturates) {
  const std::vector<double> cmc = {0.5, 0.75};
  EXPECT_EQ(rank_at(cmc, 1), 0.5);
  EXPECT_EQ(rank_at(cmc, 10), 0.75);
}

// ---- sweep and checks --------------------------------------------------------------

dataio::Dataset tiny_dataset() {
  dataio::SyntheticSpec spec;
  spec.num_identities = 4;
  spec.instances_per_identity = 6;
  spec.train_instances = 3;
  spec.query_instances = 1;
  spec.dim = 6;
  spec.local_tokens = 6;
  spec.seed = 21;
  return dataio::generate(spec);
}

ModelSet tiny_models(const dataio::Dataset& ds, std::span<const Variant> variants,
                     std::span<const std::uint64_t> seeds) {
  ModelSet out;
  for (Variant v : variants)
    for (std::uint64_t s : seeds) {
      objective::TrainConfig cfg;
      cfg.variant = v;
      cfg.seed = s;
      cfg.epochs = 1;
      cfg.P = 2;
      cfg.K = 2;
      out[{v, s}] = objective::fit(cfg, ds).model;
    }
  return out;
}

TEST(EvalkitSweep, ShapeOrderAndCleanRow) {
  const dataio::Dataset ds = tiny_dataset();
  const std::vector<Variant> variants = {Variant::B, Variant::E};
  const std::vector<std::uint64_t> seeds = {0, 1};
  const ModelSet models = tiny_models(ds, variants, seeds);
  const std::vector<double> eps = {0, 15, 30};
  const SweepReport rep = noise_sweep(models, ds, eps, variants, seeds, dataio::NoiseSpec{});
  ASSERT_EQ(rep.rows.size(), 12u);
  EXPECT_EQ(rep.rows[0].eps, 0.0);
  EXPECT_EQ(rep.rows[0].variant, Variant::B);
  EXPECT_EQ(rep.rows[1].seed, 1u);
  EXPECT_EQ(rep.rows[11].eps, 30.0);
  for (std::size_t i = 0; i < 4; ++i) {
    const SweepRow& row = rep.rows[i];
    const MetricReport clean = evaluate_model(models.at({row.variant, row.seed}), ds);
    EXPECT_EQ(row.mAP, clean.mAP);
    EXPECT_EQ(row.rank1, clean.rank1);
  }
  const auto summary = rep.summary();
  ASSERT_EQ(summary.size(), 6u);
  EXPECT_EQ(summary[0].seeds, 2u);
  const std::vector<Variant> missing = {Variant::A};
  EXPECT_THROW(noise_sweep(models, ds, eps, missing, seeds, dataio::NoiseSpec{}), MissingCheckpoint);
}

SweepReport synthetic_sweep(const std::map<Variant, std::vector<std::vector<double>>>& maps) {
  // maps[v][eps index][seed]
  SweepReport r;
  const std::vector<double> eps = {0, 10, 20, 30};
  for (std::size_t e = 0; e < eps.size(); ++e)
    for (const auto& [v, grid] : maps)
      for (std::size_t s = 0; s < grid[e].size(); ++s) r.rows.push_back({eps[e], v, s, grid[e][s], 0.0});
  return r;
}

const CheckResult& find(const std::vector<CheckResult>& checks, const std::string& name) {
  for (const CheckResult& c : checks)
    if (c.name == name) return c;
  throw std::out_of_range(name);
}

TEST(EvalkitChecks, SweepMonotoneAndDropComparison) {
  const SweepReport r = synthetic_sweep({
      {Variant::B, {{0.9, 0.9}, {0.85, 0.85}, {0.8, 0.8}, {0.7, 0.7}}},
      {Variant::E, {{0.9, 0.9}, {0.9, 0.9}, {0.88, 0.88}, {0.85, 0.85}}},
  });
  const auto checks = sweep_checks(r);
  EXPECT_TRUE(find(checks, "sweep.monotone.b").pass);
  EXPECT_TRUE(find(checks, "sweep.monotone.e").pass);
  EXPECT_TRUE(find(checks, "sweep.e_drop_le_b_drop").pass);
}

TEST(EvalkitChecks, SweepRiseBeyondSeedNoiseFails) {
  const SweepReport r = synthetic_sweep({
      {Variant::B, {{0.80, 0.80}, {0.90, 0.90}, {0.80, 0.80}, {0.70, 0.70}}},
      {Variant::E, {{0.90, 0.90}, {0.80, 0.80}, {0.70, 0.70}, {0.60, 0.60}}},
  });
  const auto checks = sweep_checks(r);
  EXPECT_FALSE(find(checks, "sweep.monotone.b").pass);
  EXPECT_TRUE(find(checks, "sweep.monotone.e").pass);
  EXPECT_FALSE(find(checks, "sweep.e_drop_le_b_drop").pass);
}

TEST(EvalkitChecks, SweepToleranceScalesWithSeedSpread) {
  // A 0.02 rise is inside 2 SE when the seeds disagree by +-0.05, outside when they agree.
  const SweepReport noisy = synthetic_sweep({{Variant::E, {{0.85, 0.95}, {0.87, 0.97}, {0.8, 0.9}, {0.7, 0.8}}}});
  EXPECT_TRUE(find(sweep_checks(noisy), "sweep.monotone.e").pass);
  const SweepReport tight = synthetic_sweep({{Variant::E, {{0.9, 0.9}, {0.92, 0.92}, {0.85, 0.85}, {0.75, 0.75}}}});
  EXPECT_FALSE(find(sweep_checks(tight), "sweep.monotone.e").pass);
  EXPECT_TRUE(find(sweep_checks(tight, 0.05), "sweep.monotone.e").pass);
}

TEST(EvalkitChecks, AblationInequalities) {
  AblationTable t;
  auto add = [&](Variant v, double m) { t.rows.push_back({v, 0, m, 0, 0, 0}); };
  add(Variant::A, 0.70);
  add(Variant::C, 0.72);
  add(Variant::E, 0.75);
  for (const CheckResult& c : ablation_checks(t)) EXPECT_TRUE(c.pass) << c.name;
  t.rows[2].mAP = 0.71;
  const auto checks = ablation_checks(t);
  EXPECT_FALSE(find(checks, "ablation.e_ge_c").pass);
  EXPECT_FALSE(find(checks, "ablation.e_minus_a").pass);
  EXPECT_TRUE(find(checks, "ablation.c_ge_a").pass);
  EXPECT_FALSE(ablation_checks(AblationTable{}).front().pass);
}

TEST(EvalkitReports, MeanAndSampleStd) {
  const std::vector<double> v = {1, 2, 3, 4};
  EXPECT_EQ(mean(v), 2.5);
  EXPECT_NEAR(stddev(v), std::sqrt(5.0 / 3.0), 1e-15);
  EXPECT_EQ(stddev(std::vector<double>{3}), 0.0);
}

TEST(EvalkitReports, JsonCarriesRunIdHashAndRows) {
  RetrievalResult r;
  r.distances = Matrix{{0.1, 0.2, 0.3, 0.4}};
  r.query_labels = {7};
  r.gallery_labels = {7, 1, 7, 2};
  const auto j = nlohmann::json::parse(metric_json(evaluate(r), "run-1", "abcd"));
  EXPECT_EQ(j["run_id"], "run-1");
  EXPECT_EQ(j["config_hash"], "abcd");
  ASSERT_EQ(j["rows"].size(), 1u);
  EXPECT_NEAR(j["rows"][0]["mAP"].get<double>(), 0.8333333333333333, 1e-15);
  const std::string csv = metric_csv(evaluate(r), "abcd");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "# config_hash=abcd");
}

}  // namespace
}  // namespace ugg::evalkit
