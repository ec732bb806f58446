// Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <json.hpp>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "retrieval_oracle.hpp"
#include "ugg/config.hpp"
#include "ugg/dataio.hpp"
#include "ugg/errors.hpp"
#include "ugg/evalkit.hpp"
#include "ugg/fileio.hpp"
#include "ugg/numerics/kernels.hpp"
#include "ugg/objective.hpp"
#include "ugg/text.hpp"
#include "ugg/ugmoe.hpp"

namespace fs = std::filesystem;
using namespace ugg;
using objective::Variant;

namespace {

// ---- pinned thresholds ------------------------------------------------------------

constexpr double kGradTolerance = 1e-4;
constexpr double kGradSeconds = 120.0;
constexpr double kKlTolerance = 1e-12;
constexpr double kRoutingTolerance = 1e-10;
constexpr double kBalanceTolerance = 1e-15;
constexpr double kMetricTolerance = 1e-12;
constexpr std::size_t kMetricInstances = 500;
constexpr double kMetricSeconds = 30.0;
constexpr double kMinRank1 = 0.90;
constexpr double kMinMap = 0.80;
constexpr double kTrainSecondsPerSeed = 300.0;
constexpr double kMinGap = 0.03;
constexpr double kSweepSeconds = 600.0;
constexpr std::size_t kCodecInstances = 100;
const std::vector<std::uint64_t> kSeeds = {0, 1, 2, 3, 4};
const std::vector<double> kSweepEps = {0, 5, 10, 15, 20, 25, 30};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(precision);
  os << v;
  return os.str();
}

std::string sci(double v) {
  std::ostringstream os;
  os.setf(std::ios::scientific);
  os.precision(2);
  os << v;
  return os.str();
}

struct Outcome {
  int id = 0;
  std::string title;
  bool pass = false;
  std::vector<std::string> details;
};

// The standard desk-scale benchmark: 20 identities x 10 instances, D=64, n=16.
config::RunConfig standard_config() { return config::load("data.n = 16\n"); }

// ---- 1: gradient certification -------------------------------------------------------

Outcome gradient_certification() {
  Outcome o{1, "gradient certification", true, {}};
  const config::RunConfig rc = standard_config();
  const config::GradcheckSettings& g = rc.gradcheck;
  const dataio::Dataset batch = objective::gradcheck_batch(g.dim, g.local_tokens, g.identities, g.instances, 0);
  GradCheckOptions opt;
  opt.tolerance = kGradTolerance;
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t groups = 0, kinks = 0, roundoff = 0;
  for (Variant v : objective::kVariants) {
    objective::TrainConfig tc = rc.train;
    tc.variant = v;
    for (const GradReport& r : objective::gradcheck_model(tc, batch, opt)) {
      ++groups;
      worst = std::max(worst, r.max_relative_error);
      kinks += r.kink_skipped;
      roundoff += r.roundoff_limited;
      if (!r.pass) {
        o.pass = false;
        o.details.push_back(std::string("variant ") + objective::variant_letter(v) + " " + r.parameter +
                            " max rel err " + sci(r.max_relative_error) + (r.note.empty() ? "" : " " + r.note));
      }
    }
  }
  const double secs = seconds_since(t0);
  if (secs >= kGradSeconds) o.pass = false;
  o.details.push_back(std::to_string(groups) + " parameter groups over variants a-e, " +
                      std::to_string(g.identities) + "-identity batch, worst rel err " + sci(worst) + " (limit " +
                      sci(kGradTolerance) + "), " + std::to_string(kinks) + " kink-adjacent and " +
                      std::to_string(roundoff) + " roundoff-limited entries excluded");
  o.details.push_back("runtime " + fmt(secs, 1) + " s (limit " + fmt(kGradSeconds, 0) + " s)");
  return o;
}

// ---- 2: closed-form loss oracles ----------------------------------------------------

// f_c and P_c by direct enumeration over the batch.
double load_balance_oracle(const std::vector<ugmoe::ExpertBank>& batch) {
  const std::size_t e = batch.front().weights.size();
  std::vector<double> count(e, 0.0), mass(e, 0.0);
  for (const auto& bank : batch) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < e; ++c)
      if (bank.weights[c] > bank.weights[best]) best = c;
    count[best] += 1.0;
    for (std::size_t c = 0; c < e; ++c) mass[c] += bank.weights[c];
  }
  const double b = static_cast<double>(batch.size());
  double loss = 0.0;
  for (std::size_t c = 0; c < e; ++c) loss += (count[c] / b) * (mass[c] / b);
  return loss / static_cast<double>(e);
}

ugmoe::ExpertBank bank_with(std::vector<double> weights) {
  ugmoe::ExpertBank b;
  b.entries.resize(weights.size());
  b.weights = std::move(weights);
  return b;
}

Outcome closed_form_oracles() {
  Outcome o{2, "closed-form loss oracles", true, {}};
  auto fail = [&](const std::string& what) {
    o.pass = false;
    o.details.push_back("FAILED " + what);
  };

  const double kl = gaussian_kl(Matrix(1, 8), Matrix(1, 8, 1.0));
  if (!(std::abs(kl) <= kKlTolerance)) fail("gaussian_kl(0,1) = " + sci(kl));
  o.details.push_back("gaussian_kl(0, 1) = " + sci(kl) + " (limit " + sci(kKlTolerance) + ")");

  ugmoe::UgmoeConfig cfg;
  const std::size_t e = cfg.bank_size();
  const double ed = static_cast<double>(e);
  std::mt19937_64 gen(2);
  std::size_t balance_cases = 0;
  for (std::size_t batch_size : {1, 2, 7, 16, 64}) {
    const std::vector<ugmoe::ExpertBank> uniform(batch_size, bank_with(std::vector<double>(e, 1.0 / ed)));
    const double lu = ugmoe::load_balance_loss(uniform);
    // 1/E is inexact in binary, so sums over the batch differ from 1/E^2 by a few ulp.
    if (std::abs(lu - load_balance_oracle(uniform)) > kBalanceTolerance || std::abs(lu - 1.0 / (ed * ed)) > kBalanceTolerance)
      fail("uniform load balance " + sci(lu));
    for (std::size_t hot = 0; hot < e; ++hot) {
      std::vector<double> w(e, 0.0);
      w[hot] = 1.0;
      const std::vector<ugmoe::ExpertBank> onehot(batch_size, bank_with(w));
      const double lo = ugmoe::load_balance_loss(onehot);
      if (lo != load_balance_oracle(onehot) || lo != 1.0 / ed) fail("one-hot load balance " + sci(lo));
      ++balance_cases;
    }
    // Random batches against enumeration.
    std::vector<ugmoe::ExpertBank> random;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < batch_size; ++i) {
      std::vector<double> w(e);
      double s = 0.0;
      for (double& x : w) s += (x = u(gen));
      for (double& x : w) x /= s;
      random.push_back(bank_with(w));
    }
    const double lr = ugmoe::load_balance_loss(random);
    if (std::abs(lr - load_balance_oracle(random)) > kBalanceTolerance) fail("random load balance " + sci(lr));
    balance_cases += 2;
  }
  o.details.push_back("load balance: uniform = 1/E^2 = " + fmt(1.0 / (ed * ed), 6) + ", one-hot = 1/E = " +
                      fmt(1.0 / ed, 6) + " (exact), E=" + std::to_string(e) + ", " +
                      std::to_string(balance_cases) + " batches matched enumeration within " + sci(kBalanceTolerance));

  double worst_routing = 0.0;
  for (double v : {1e-4, 0.25, 1.0, 7.5}) {
    std::vector<ugmoe::SampleGaussian> sgs(kModalityCount);
    for (Modality m : kModalities) {
      sgs[index_of(m)].modality = m;
      sgs[index_of(m)].mu = Matrix(1, 4);
      sgs[index_of(m)].sigma = Matrix(1, 4, std::sqrt(v));
    }
    std::vector<ugmoe::GateDecision> decisions;
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (Modality m : kModalities) {
      std::vector<double> logits(cfg.experts);
      for (double& l : logits) l = u(gen);
      decisions.push_back(ugmoe::gate_from_logits(logits, cfg.top_k, m));
    }
    for (Modality target : kModalities) {
      const ugmoe::ExpertBank bank = ugmoe::assemble_bank(decisions, cfg, target);
      const double lr = ugmoe::routing_uncertainty_loss(bank, sgs);
      worst_routing = std::max(worst_routing, std::abs(lr - v / ed));
    }
  }
  if (!(worst_routing <= kRoutingTolerance)) fail("routing loss error " + sci(worst_routing));
  o.details.push_back("constant-variance routing loss = v/E, worst error " + sci(worst_routing) + " (limit " +
                      sci(kRoutingTolerance) + ")");

  std::size_t grid = 0;
  for (std::size_t c = 1; c <= 6; ++c) {
    for (std::size_t k = 0; k <= c; ++k) {
      ugmoe::UgmoeConfig gc;
      gc.experts = c;
      gc.top_k = k;
      std::vector<ugmoe::GateDecision> decisions;
      for (Modality m : kModalities) decisions.push_back(ugmoe::gate_from_logits(std::vector<double>(c, 0.0), k, m));
      for (Modality target : kModalities) {
        const std::size_t size = ugmoe::assemble_bank(decisions, gc, target).entries.size();
        if (size != c + k * (kModalityCount - 1)) fail("bank size C=" + std::to_string(c) + " k=" + std::to_string(k));
      }
      ++grid;
    }
  }
  o.details.push_back("bank size C + k(M-1) on " + std::to_string(grid) + " (C, k) pairs, M=3");
  return o;
}

// ---- 3: metric oracle equivalence ---------------------------------------------------

Outcome metric_oracle() {
  Outcome o{3, "metric oracle equivalence", true, {}};
  std::mt19937_64 gen(3);
  double worst = 0.0;
  std::size_t checked = 0;
  const auto t0 = Clock::now();
  while (checked < kMetricInstances) {
    const evalkit::RetrievalResult r = testing::random_instance(gen);
    const testing::OracleResult want = testing::brute_force(r);
    if (want.ap.empty()) continue;
    const evalkit::MetricReport got = evalkit::evaluate(r);
    if (got.ap.size() != want.ap.size() || got.invalid_queries != want.invalid) {
      o.pass = false;
      worst = std::numeric_limits<double>::infinity();
    } else {
      for (std::size_t i = 0; i < want.ap.size(); ++i) worst = std::max(worst, std::abs(got.ap[i] - want.ap[i]));
      double map = 0.0;
      for (double a : want.ap) map += a;
      worst = std::max(worst, std::abs(got.mAP - map / static_cast<double>(want.ap.size())));
      for (std::size_t k = 0; k < got.cmc.size(); ++k) {
        double hit = 0.0;
        for (std::size_t f : want.first_hit) hit += f <= k + 1;
        worst = std::max(worst, std::abs(got.cmc[k] - hit / static_cast<double>(want.first_hit.size())));
      }
    }
    ++checked;
  }
  const double secs = seconds_since(t0);
  evalkit::RetrievalResult hand;
  hand.distances = Matrix{{0.1, 0.2, 0.3, 0.4}};
  hand.query_labels = {7};
  hand.gallery_labels = {7, 1, 7, 2};
  const double hand_ap = evalkit::evaluate(hand).mAP;
  const double hand_want = (1.0 + 2.0 / 3.0) / 2.0;
  o.pass = o.pass && worst <= kMetricTolerance && std::abs(hand_ap - hand_want) <= kMetricTolerance &&
           secs < kMetricSeconds;
  o.details.push_back(std::to_string(checked) + " random instances (Q<=10, G<=50, ties, id exclusion), worst " +
                      "AP/mAP/CMC error " + sci(worst) + " (limit " + sci(kMetricTolerance) + ")");
  o.details.push_back("hand case AP with relevant items at ranks 1 and 3 of 4 = " + fmt(hand_ap, 6));
  o.details.push_back("runtime " + fmt(secs, 2) + " s (limit " + fmt(kMetricSeconds, 0) + " s)");
  return o;
}

// ---- 4-6: trained models ------------------------------------------------------------

struct Trained {
  dataio::Dataset ds;
  config::RunConfig rc;
  evalkit::AblationTable table;
  evalkit::ModelSet models;
  std::vector<double> seconds_per_seed;
};

Trained train_all() {
  Trained t;
  t.rc = standard_config();
  t.ds = dataio::generate(t.rc.data);
  evalkit::AblationOptions ao;
  ao.metric = t.rc.metric;
  for (std::uint64_t seed : kSeeds) {
    const auto t0 = Clock::now();
    const std::vector<std::uint64_t> one = {seed};
    const evalkit::AblationTable part = evalkit::ablation_run(t.rc.train, t.ds, one, ao, &t.models);
    t.seconds_per_seed.push_back(seconds_since(t0));
    t.table.rows.insert(t.table.rows.end(), part.rows.begin(), part.rows.end());
    std::cerr << "  trained variants a-e for seed " << seed << " in " << fmt(t.seconds_per_seed.back(), 1) << " s\n";
  }
  std::stable_sort(t.table.rows.begin(), t.table.rows.end(), [](const auto& a, const auto& b) {
    return a.variant != b.variant ? a.variant < b.variant : a.seed < b.seed;
  });
  return t;
}

const evalkit::AblationSummary& summary_of(const std::vector<evalkit::AblationSummary>& s, Variant v) {
  return *std::find_if(s.begin(), s.end(), [&](const auto& x) { return x.variant == v; });
}

Outcome desk_scale_learning(const Trained& t) {
  Outcome o{4, "desk-scale learning", true, {}};
  const auto summary = t.table.summary();
  const auto& e = summary_of(summary, Variant::E);
  const double worst_seed = *std::max_element(t.seconds_per_seed.begin(), t.seconds_per_seed.end());
  o.pass = e.mean_rank1 >= kMinRank1 && e.mean_mAP >= kMinMap && worst_seed < kTrainSecondsPerSeed;
  o.details.push_back("variant e over 5 seeds: Rank-1 " + fmt(e.mean_rank1) + " +- " + fmt(e.std_rank1) + " (need >= " +
                      fmt(kMinRank1, 2) + "), mAP " + fmt(e.mean_mAP) + " +- " + fmt(e.std_mAP) + " (need >= " +
                      fmt(kMinMap, 2) + ")");
  o.details.push_back("20 identities x 10 instances, D=64, n=16; slowest seed trained all five variants in " +
                      fmt(worst_seed, 1) + " s (limit " + fmt(kTrainSecondsPerSeed, 0) + " s per seed)");
  return o;
}

Outcome ablation_ordering(const Trained& t) {
  Outcome o{5, "ablation ordering", true, {}};
  const auto summary = t.table.summary();
  std::string chain;
  for (const auto& s : summary) {
    chain += std::string(chain.empty() ? "" : "  ") + objective::variant_letter(s.variant) + "=" + fmt(s.mean_mAP);
  }
  o.details.push_back("seed-averaged mAP: " + chain);
  bool strict_chain = true;
  for (std::size_t i = 1; i < summary.size(); ++i) strict_chain = strict_chain && summary[i - 1].mean_mAP < summary[i].mean_mAP;
  o.details.push_back(std::string("full chain a<b<c<d<e (reported only): ") + (strict_chain ? "holds" : "does not hold"));
  for (const auto& c : evalkit::ablation_checks(t.table, kMinGap)) {
    o.pass = o.pass && c.pass;
    o.details.push_back(std::string(c.pass ? "pass " : "FAIL ") + c.name + ": " + c.detail);
  }
  return o;
}

Outcome robustness_direction(const Trained& t) {
  Outcome o{6, "robustness direction", true, {}};
  dataio::NoiseSpec noise = t.rc.noise;
  noise.kind = dataio::NoiseKind::Gaussian;
  noise.target = dataio::NoiseTarget::TestOnly;
  const std::vector<Variant> variants(objective::kVariants.begin(), objective::kVariants.end());
  const auto t0 = Clock::now();
  const evalkit::SweepReport rep = evalkit::noise_sweep(t.models, t.ds, kSweepEps, variants, kSeeds, noise, t.rc.metric);
  const double secs = seconds_since(t0);
  for (Variant v : variants) {
    std::string line = std::string("variant ") + objective::variant_letter(v) + " mAP by eps:";
    for (const auto& s : rep.summary())
      if (s.variant == v) line += " " + fmt(s.mean_mAP);
    o.details.push_back(line);
  }
  for (const auto& c : evalkit::sweep_checks(rep)) {
    o.pass = o.pass && c.pass;
    o.details.push_back(std::string(c.pass ? "pass " : "FAIL ") + c.name + ": " + c.detail);
  }
  o.pass = o.pass && secs < kSweepSeconds;
  o.details.push_back(std::to_string(rep.rows.size()) + " sweep cells in " + fmt(secs, 1) + " s (limit " +
                      fmt(kSweepSeconds, 0) + " s)");
  return o;
}

// ---- 7: determinism ------------------------------------------------------------------

std::string quoted(const fs::path& p) { return "'" + p.string() + "'"; }

bool run_cli(const fs::path& ugg, const std::string& args, const fs::path& log) {
  const std::string cmd = quoted(ugg) + " " + args + " >> " + quoted(log) + " 2>&1";
  return std::system(cmd.c_str()) == 0;
}

bool same_bytes(const fs::path& a, const fs::path& b) {
  try {
    return read_file(a) == read_file(b);
  } catch (const IoError&) {
    return false;
  }
}

Outcome determinism(const fs::path& ugg, const fs::path& work) {
  Outcome o{7, "determinism", true, {}};
  const fs::path dir = work / "determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path log = dir / "cli.log";
  auto check = [&](bool ok, const std::string& what) {
    o.pass = o.pass && ok;
    o.details.push_back(std::string(ok ? "identical: " : "DIFFERENT: ") + what);
  };

  if (ugg.empty() || !fs::exists(ugg)) {
    o.pass = false;
    o.details.push_back("ugg binary not found; pass --ugg PATH");
  } else {
    const std::string data = quoted(dir / "d1" / "features.uggf");
    bool ran = run_cli(ugg, "synth --out " + quoted(dir / "d1") + " --data.n 16", log) &&
               run_cli(ugg, "synth --out " + quoted(dir / "d2") + " --data.n 16", log);
    for (const char* r : {"r1", "r2"}) {
      ran = ran && run_cli(ugg, std::string("train --out ") + quoted(dir / r) + " --data " + data + " --seed 7", log);
      ran = ran && run_cli(ugg, std::string("eval --out ") + quoted(dir / (std::string(r) + "e")) + " --data " + data +
                                    " --checkpoint " + quoted(dir / r / "checkpoint.uggc"),
                           log);
    }
    if (!ran) {
      o.pass = false;
      o.details.push_back("a CLI invocation failed; see " + log.string());
    }
    check(same_bytes(dir / "d1" / "features.uggf", dir / "d2" / "features.uggf"), "features.uggf from two synth runs");
    check(same_bytes(dir / "r1" / "checkpoint.uggc", dir / "r2" / "checkpoint.uggc"),
          "checkpoint.uggc from two train processes (--seed 7)");
    check(same_bytes(dir / "r1" / "loss.csv", dir / "r2" / "loss.csv"), "loss.csv from two train processes");
    check(same_bytes(dir / "r1e" / "metrics.json", dir / "r2e" / "metrics.json"), "metrics.json from two eval processes");
  }

  const config::RunConfig rc = standard_config();
  const dataio::Dataset ds = dataio::generate(rc.data);
  objective::TrainConfig tc = rc.train;
  tc.seed = 7;
  const objective::Checkpoint full = objective::fit(tc, ds);
  objective::FitOptions half;
  half.stop_after_epoch = tc.epochs / 2;
  const objective::Checkpoint part = objective::fit(tc, ds, half);
  const objective::Checkpoint resumed =
      objective::resume(objective::decode_checkpoint(objective::encode_checkpoint(part)), ds);
  check(objective::history_csv(resumed.history, "") == objective::history_csv(full.history, "") &&
            objective::encode_checkpoint(resumed) == objective::encode_checkpoint(full),
        "loss trace and checkpoint after save/load/resume at epoch " + std::to_string(tc.epochs / 2) + " vs uninterrupted");
  return o;
}

// ---- 8: codecs -------------------------------------------------------------------------

dataio::Dataset random_dataset(std::mt19937_64& gen) {
  dataio::Dataset ds;
  ds.local_tokens = 1 + gen() % 6;
  ds.dim = 1 + gen() % 8;
  const std::size_t labels = 1 + gen() % 5;
  const std::size_t count = labels + gen() % 8;
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  for (std::size_t i = 0; i < count; ++i) {
    dataio::Sample s;
    s.id = static_cast<std::uint32_t>(gen() % 100000);
    s.label = static_cast<std::uint32_t>(i % labels);
    s.split = static_cast<dataio::Split>(gen() % 3);
    for (Matrix& t : s.tokens) {
      t = Matrix(ds.local_tokens + 1, ds.dim);
      for (double& v : t.values()) v = static_cast<float>(u(gen));
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

bool same_dataset(const dataio::Dataset& a, const dataio::Dataset& b) {
  if (a.local_tokens != b.local_tokens || a.dim != b.dim || a.samples.size() != b.samples.size()) return false;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    const auto &x = a.samples[i], &y = b.samples[i];
    if (x.id != y.id || x.label != y.label || x.split != y.split) return false;
    for (std::size_t m = 0; m < kModalityCount; ++m)
      if (!(x.tokens[m] == y.tokens[m])) return false;
  }
  return true;
}

objective::Checkpoint random_checkpoint(std::mt19937_64& gen) {
  objective::TrainConfig cfg;
  cfg.variant = objective::kVariants[gen() % objective::kVariants.size()];
  cfg.experts = 1 + gen() % 4;
  cfg.top_k = gen() % (cfg.experts + 1);
  cfg.layers = 1 + gen() % 3;
  cfg.seed = gen();
  cfg.learning_rate = std::ldexp(static_cast<double>(gen() % 1000 + 1), -17);
  cfg.bn_neck = gen() % 2;
  cfg.aux_heads = gen() % 2;
  if (gen() % 2) cfg.tau = 0.5 + static_cast<double>(gen() % 100);
  const std::size_t dim = 1 + gen() % 5;
  const std::size_t classes = 2 + gen() % 4;
  objective::Checkpoint ck;
  ck.model = objective::init_model(cfg, dim, classes);
  std::normal_distribution<double> n(0.0, 1.0);
  ck.adam.m = ck.model.params.zeros_like();
  ck.adam.v = ck.model.params.zeros_like();
  for (auto* set : {&ck.adam.m, &ck.adam.v})
    for (auto& [name, m] : set->entries())
      for (double& v : m.values()) v = n(gen);
  ck.adam.step = gen() % 10000;
  ck.epoch = gen() % 50;
  const std::size_t rows = gen() % 20;
  for (std::size_t r = 0; r < rows; ++r) {
    objective::HistoryRow h;
    h.step = r;
    h.loss.ce = n(gen);
    h.loss.tri = n(gen);
    for (std::size_t m = 0; m < kModalityCount; ++m) {
      h.loss.kl_cs[m] = n(gen);
      h.loss.routing[m] = n(gen);
      h.loss.balance[m] = n(gen);
    }
    h.loss.total = n(gen);
    ck.history.push_back(h);
  }
  ck.snapshot["run.note"] = "random " + std::to_string(gen() % 1000);
  return ck;
}

template <typename Decode>
std::string corruption_errors(const std::string& bytes, Decode decode, std::size_t& truncations_checked) {
  std::string problems;
  std::string bad = bytes;
  bad[0] = static_cast<char>(bad[0] ^ 0x5a);
  try {
    decode(bad);
    problems += " corrupted magic decoded;";
  } catch (const BadMagic&) {
  } catch (const std::exception& e) {
    problems += std::string(" corrupted magic gave '") + e.what() + "';";
  }
  // Every proper prefix must be rejected as truncated.
  const std::size_t step = std::max<std::size_t>(1, bytes.size() / 257);
  for (std::size_t cut = 0; cut < bytes.size(); cut += step) {
    ++truncations_checked;
    try {
      decode(std::string_view(bytes).substr(0, cut));
      problems += " prefix " + std::to_string(cut) + " decoded;";
    } catch (const Truncated&) {
    } catch (const BadMagic&) {
      if (cut >= 4) problems += " prefix " + std::to_string(cut) + " reported bad magic;";
    } catch (const std::exception& e) {
      problems += " prefix " + std::to_string(cut) + " gave '" + e.what() + "';";
    }
  }
  return problems;
}

Outcome codecs() {
  Outcome o{8, "codec round trips", true, {}};
  std::mt19937_64 gen(8);
  std::size_t uggf_ok = 0, uggc_ok = 0, truncations = 0;
  std::string problems;
  for (std::size_t i = 0; i < kCodecInstances; ++i) {
    const dataio::Dataset ds = random_dataset(gen);
    const std::string bytes = dataio::encode_features(ds);
    const dataio::Dataset back = dataio::decode_features(bytes);
    if (same_dataset(ds, back) && dataio::encode_features(back) == bytes) ++uggf_ok;
    if (i < 10) problems += corruption_errors(bytes, [](std::string_view b) { dataio::decode_features(b); }, truncations);

    const objective::Checkpoint ck = random_checkpoint(gen);
    const std::string cbytes = objective::encode_checkpoint(ck);
    const objective::Checkpoint cback = objective::decode_checkpoint(cbytes);
    if (cback.model.params == ck.model.params && cback.adam.m == ck.adam.m && cback.adam.v == ck.adam.v &&
        cback.adam.step == ck.adam.step && cback.epoch == ck.epoch && cback.history.size() == ck.history.size() &&
        objective::to_entries(cback.model.config) == objective::to_entries(ck.model.config) &&
        objective::encode_checkpoint(cback) == cbytes)
      ++uggc_ok;
    if (i < 10)
      problems += corruption_errors(cbytes, [](std::string_view b) { objective::decode_checkpoint(b); }, truncations);
  }
  o.pass = uggf_ok == kCodecInstances && uggc_ok == kCodecInstances && problems.empty();
  o.details.push_back("UGGF round trips " + std::to_string(uggf_ok) + "/" + std::to_string(kCodecInstances) +
                      ", UGGC round trips " + std::to_string(uggc_ok) + "/" + std::to_string(kCodecInstances));
  o.details.push_back("corrupted magic -> BadMagic and " + std::to_string(truncations) +
                      " truncated prefixes -> Truncated, never a decoded object" +
                      (problems.empty() ? "" : ";" + problems));
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite: one PASS/FAIL line per criterion"};
  std::string ugg_path, work_dir = (fs::temp_directory_path() / "ugg_acceptance").string(), report;
  std::vector<int> only, known;
  app.add_option("--ugg", ugg_path, "path to the ugg CLI (used by the cross-process determinism check)");
  app.add_option("--work", work_dir, "scratch directory");
  app.add_option("--only", only, "run only these criteria (1-8)");
  app.add_option("--known-failure", known,
                 "criteria documented as unattainable: still printed as FAIL but excluded from the exit code");
  app.add_option("--report", report, "write the outcomes as JSON");
  CLI11_PARSE(app, argc, argv);

  const std::set<int> selected = only.empty() ? std::set<int>{1, 2, 3, 4, 5, 6, 7, 8} : std::set<int>(only.begin(), only.end());
  const std::set<int> known_set(known.begin(), known.end());
  auto want = [&](int id) { return selected.count(id) > 0; };

  std::vector<Outcome> outcomes;
  auto record = [&](Outcome o) {
    const bool excused = !o.pass && known_set.count(o.id) > 0;
    for (const std::string& d : o.details) std::cout << "    " << d << '\n';
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << o.id << "] " << o.title << (excused ? " (known failure)" : "")
              << '\n'
              << std::flush;
    outcomes.push_back(std::move(o));
  };

  try {
    if (want(1)) record(gradient_certification());
    if (want(2)) record(closed_form_oracles());
    if (want(3)) record(metric_oracle());
    if (want(4) || want(5) || want(6)) {
      std::cerr << "training 5 variants x 5 seeds on the standard synthetic benchmark\n";
      const Trained t = train_all();
      if (want(4)) record(desk_scale_learning(t));
      if (want(5)) record(ablation_ordering(t));
      if (want(6)) record(robustness_direction(t));
    }
    if (want(7)) record(determinism(ugg_path, work_dir));
    if (want(8)) record(codecs());
  } catch (const std::exception& e) {
    std::cout << "FAIL aborted: " << e.what() << '\n';
    return 1;
  }

  std::size_t passed = 0, excused = 0, failed = 0;
  for (const Outcome& o : outcomes) {
    if (o.pass) ++passed;
    else if (known_set.count(o.id)) ++excused;
    else ++failed;
  }
  std::cout << "summary: " << passed << "/" << outcomes.size() << " criteria pass";
  if (excused) std::cout << ", " << excused << " known failure" << (excused > 1 ? "s" : "");
  std::cout << '\n';

  if (!report.empty()) {
    nlohmann::json j = nlohmann::json::array();
    for (const Outcome& o : outcomes)
      j.push_back({{"id", o.id}, {"title", o.title}, {"pass", o.pass}, {"known_failure", !o.pass && known_set.count(o.id) > 0},
                   {"details", o.details}});
    std::ofstream(report) << j.dump(2) << '\n';
  }
  return failed == 0 ? 0 : 1;
}
