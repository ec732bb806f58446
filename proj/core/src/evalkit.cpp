#include "ugg/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "ugg/errors.hpp"
#include "ugg/text.hpp"

namespace ugg::evalkit {

using objective::Variant;

Matrix distance_matrix(const Matrix& query, const Matrix& gallery, Metric metric) {
  if (query.cols() != gallery.cols()) {
    throw ContractViolation("distance_matrix: query width " + std::to_string(query.cols()) + " vs gallery " +
                            std::to_string(gallery.cols()));
  }
  Matrix d(query.rows(), gallery.rows());
  std::vector<double> gnorm(gallery.rows(), 1.0);
  if (metric == Metric::Cosine) {
    for (std::size_t j = 0; j < gallery.rows(); ++j) {
      double s = 0.0;
      for (double v : gallery.row(j)) s += v * v;
      gnorm[j] = std::max(std::sqrt(s), 1e-12);
    }
  }
  for (std::size_t i = 0; i < query.rows(); ++i) {
    const auto q = query.row(i);
    double qn = 0.0;
    for (double v : q) qn += v * v;
    qn = std::max(std::sqrt(qn), 1e-12);
    for (std::size_t j = 0; j < gallery.rows(); ++j) {
      const auto g = gallery.row(j);
      if (metric == Metric::Euclidean) {
        double s = 0.0;
        for (std::size_t c = 0; c < q.size(); ++c) s += (q[c] - g[c]) * (q[c] - g[c]);
        d(i, j) = std::sqrt(s);
      } else {
        double dot = 0.0;
        for (std::size_t c = 0; c < q.size(); ++c) dot += q[c] * g[c];
        d(i, j) = std::max(0.0, 1.0 - dot / (qn * gnorm[j]));
      }
    }
  }
  return d;
}

double rank_at(const std::vector<double>& cmc, std::size_t k) {
  if (cmc.empty() || k == 0) return 0.0;
  return cmc[std::min(k, cmc.size()) - 1];
}

MetricReport evaluate(const RetrievalResult& r) {
  const std::size_t nq = r.distances.rows();
  const std::size_t ng = r.distances.cols();
  if (nq == 0) throw ContractViolation("evaluate: no queries");
  if (r.query_labels.size() != nq || r.gallery_labels.size() != ng) {
    throw ContractViolation("evaluate: label counts do not match the distance matrix");
  }
  const bool have_ids = !r.query_ids.empty() || !r.gallery_ids.empty();
  if (have_ids && (r.query_ids.size() != nq || r.gallery_ids.size() != ng)) {
    throw ContractViolation("evaluate: sample-id counts do not match the distance matrix");
  }
  MetricReport rep;
  std::vector<double> cmc(ng, 0.0);
  std::vector<std::size_t> order;
  for (std::size_t q = 0; q < nq; ++q) {
    order.clear();
    for (std::size_t j = 0; j < ng; ++j) {
      if (!(r.distances(q, j) >= 0.0)) throw DomainError("evaluate: negative or NaN distance");
      if (have_ids && r.gallery_ids[j] == r.query_ids[q]) continue;
      order.push_back(j);
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return r.distances(q, a) < r.distances(q, b); });
    std::size_t hits = 0;
    double ap = 0.0;
    std::size_t first = order.size();
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      if (r.gallery_labels[order[pos]] != r.query_labels[q]) continue;
      ++hits;
      ap += static_cast<double>(hits) / static_cast<double>(pos + 1);
      if (first == order.size()) first = pos;
    }
    if (hits == 0) {
      ++rep.invalid_queries;
      continue;
    }
    ++rep.valid_queries;
    rep.ap.push_back(ap / static_cast<double>(hits));
    for (std::size_t k = first; k < ng; ++k) cmc[k] += 1.0;
  }
  if (rep.valid_queries == 0) throw ContractViolation("evaluate: no query identity appears in the gallery");
  const double inv = 1.0 / static_cast<double>(rep.valid_queries);
  for (double& c : cmc) c *= inv;
  rep.cmc = std::move(cmc);
  rep.mAP = mean(rep.ap);
  rep.rank1 = rank_at(rep.cmc, 1);
  rep.rank5 = rank_at(rep.cmc, 5);
  rep.rank10 = rank_at(rep.cmc, 10);
  return rep;
}

MetricReport evaluate(const Matrix& query_features, const Matrix& gallery_features,
                      std::span<const std::uint32_t> query_labels, std::span<const std::uint32_t> gallery_labels,
                      std::span<const std::uint32_t> query_ids, std::span<const std::uint32_t> gallery_ids,
                      Metric metric) {
  RetrievalResult r;
  r.distances = distance_matrix(query_features, gallery_features, metric);
  r.query_labels.assign(query_labels.begin(), query_labels.end());
  r.gallery_labels.assign(gallery_labels.begin(), gallery_labels.end());
  r.query_ids.assign(query_ids.begin(), query_ids.end());
  r.gallery_ids.assign(gallery_ids.begin(), gallery_ids.end());
  return evaluate(r);
}

MetricReport evaluate_model(const objective::Model& model, const dataio::Dataset& ds, Metric metric) {
  std::vector<std::uint32_t> ql, gl, qi, gi;
  for (std::size_t i : ds.indices(dataio::Split::Query)) {
    ql.push_back(ds.samples[i].label);
    qi.push_back(ds.samples[i].id);
  }
  for (std::size_t i : ds.indices(dataio::Split::Gallery)) {
    gl.push_back(ds.samples[i].label);
    gi.push_back(ds.samples[i].id);
  }
  if (ql.empty() || gl.empty()) throw ContractViolation("evaluate_model: dataset lacks a query or gallery split");
  return evaluate(objective::embed(model, ds, dataio::Split::Query),
                  objective::embed(model, ds, dataio::Split::Gallery), ql, gl, qi, gi, metric);
}

double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double stddev(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// ---- sweep -----------------------------------------------------------------------

SweepReport noise_sweep(const ModelSet& models, const dataio::Dataset& ds, std::span<const double> eps_list,
                        std::span<const Variant> variants, std::span<const std::uint64_t> seeds,
                        const dataio::NoiseSpec& noise, Metric metric) {
  for (Variant v : variants) {
    for (std::uint64_t s : seeds) {
      if (!models.count({v, s})) {
        throw MissingCheckpoint("noise_sweep: no trained model for variant " +
                                std::string(1, objective::variant_letter(v)) + " seed " + std::to_string(s));
      }
    }
  }
  SweepReport rep;
  for (double eps : eps_list) {
    dataio::NoiseSpec spec = noise;
    spec.intensity = eps;
    spec.target = dataio::NoiseTarget::TestOnly;
    const dataio::Dataset noisy = dataio::inject_noise(ds, spec);
    for (Variant v : variants) {
      for (std::uint64_t s : seeds) {
        const MetricReport m = evaluate_model(models.at({v, s}), noisy, metric);
        rep.rows.push_back({eps, v, s, m.mAP, m.rank1});
      }
    }
  }
  return rep;
}

std::vector<SweepSummary> SweepReport::summary() const {
  std::vector<SweepSummary> out;
  std::map<std::pair<double, Variant>, std::vector<const SweepRow*>> groups;
  std::vector<std::pair<double, Variant>> order;
  for (const SweepRow& r : rows) {
    auto key = std::make_pair(r.eps, r.variant);
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(&r);
  }
  for (const auto& key : order) {
    std::vector<double> m, r1;
    for (const SweepRow* r : groups[key]) {
      m.push_back(r->mAP);
      r1.push_back(r->rank1);
    }
    out.push_back({key.first, key.second, mean(m), stddev(m), mean(r1), stddev(r1), m.size()});
  }
  return out;
}

// ---- ablation --------------------------------------------------------------------

VariantTrainingFailed::VariantTrainingFailed(Variant v, const std::string& what)
    : std::runtime_error("variant " + std::string(1, objective::variant_letter(v)) + ": " + what), variant_(v) {}

AblationTable ablation_run(const objective::TrainConfig& base, const dataio::Dataset& ds,
                           std::span<const std::uint64_t> seeds, const AblationOptions& options,
                           ModelSet* models) {
  AblationTable table;
  for (Variant v : options.variants) {
    for (std::uint64_t seed : seeds) {
      objective::TrainConfig cfg = base;
      cfg.variant = v;
      cfg.seed = seed;
      objective::Checkpoint ckpt;
      try {
        objective::FitOptions fo;
        fo.snapshot = options.snapshot;
        ckpt = objective::fit(cfg, ds, fo);
      } catch (const std::exception& e) {
        throw VariantTrainingFailed(v, e.what());
      }
      const MetricReport m = evaluate_model(ckpt.model, ds, options.metric);
      table.rows.push_back({v, seed, m.mAP, m.rank1, m.rank5, m.rank10});
      if (models) (*models)[{v, seed}] = std::move(ckpt.model);
    }
  }
  return table;
}

std::vector<AblationSummary> AblationTable::summary() const {
  std::vector<AblationSummary> out;
  for (Variant v : objective::kVariants) {
    std::vector<double> m, r1, r5, r10;
    for (const AblationRow& r : rows) {
      if (r.variant != v) continue;
      m.push_back(r.mAP);
      r1.push_back(r.rank1);
      r5.push_back(r.rank5);
      r10.push_back(r.rank10);
    }
    if (m.empty()) continue;
    out.push_back({v, mean(m), stddev(m), mean(r1), stddev(r1), mean(r5), stddev(r5), mean(r10), stddev(r10)});
  }
  return out;
}

// ---- reports ---------------------------------------------------------------------

namespace {

std::string letter(Variant v) { return std::string(1, objective::variant_letter(v)); }

}  // namespace

std::string metric_csv(const MetricReport& r, std::string_view config_hash) {
  std::ostringstream os;
  os << "# config_hash=" << config_hash << '\n';
  os << "metric,value\n";
  os << "mAP," << format_double(r.mAP) << '\n';
  os << "rank1," << format_double(r.rank1) << '\n';
  os << "rank5," << format_double(r.rank5) << '\n';
  os << "rank10," << format_double(r.rank10) << '\n';
  os << "valid_queries," << r.valid_queries << '\n';
  os << "invalid_queries," << r.invalid_queries << '\n';
  return os.str();
}

std::string metric_json(const MetricReport& r, std::string_view run_id, std::string_view config_hash) {
  nlohmann::ordered_json j;
  j["run_id"] = run_id;
  j["config_hash"] = config_hash;
  j["rows"] = nlohmann::ordered_json::array();
  j["rows"].push_back({{"mAP", r.mAP},
                       {"rank1", r.rank1},
                       {"rank5", r.rank5},
                       {"rank10", r.rank10},
                       {"valid_queries", r.valid_queries},
                       {"invalid_queries", r.invalid_queries},
                       {"cmc", r.cmc},
                       {"ap", r.ap}});
  return j.dump(2) + "\n";
}

std::string sweep_csv(const SweepReport& r, std::string_view config_hash, std::string_view noise_label) {
  std::ostringstream os;
  os << "# config_hash=" << config_hash << '\n';
  os << "# noise=" << noise_label << '\n';
  os << "eps,variant,seed,mAP,rank1\n";
  for (const SweepRow& row : r.rows) {
    os << format_double(row.eps) << ',' << letter(row.variant) << ',' << row.seed << ','
       << format_double(row.mAP) << ',' << format_double(row.rank1) << '\n';
  }
  return os.str();
}

std::string sweep_json(const SweepReport& r, std::string_view run_id, std::string_view config_hash,
                       std::string_view noise_label) {
  nlohmann::ordered_json j;
  j["run_id"] = run_id;
  j["config_hash"] = config_hash;
  j["noise"] = noise_label;
  j["rows"] = nlohmann::ordered_json::array();
  for (const SweepRow& row : r.rows) {
    j["rows"].push_back(
        {{"eps", row.eps}, {"variant", letter(row.variant)}, {"seed", row.seed}, {"mAP", row.mAP}, {"rank1", row.rank1}});
  }
  j["summary"] = nlohmann::ordered_json::array();
  for (const SweepSummary& s : r.summary()) {
    j["summary"].push_back({{"eps", s.eps},
                            {"variant", letter(s.variant)},
                            {"mean_mAP", s.mean_mAP},
                            {"std_mAP", s.std_mAP},
                            {"mean_rank1", s.mean_rank1},
                            {"std_rank1", s.std_rank1},
                            {"seeds", s.seeds}});
  }
  return j.dump(2) + "\n";
}

std::string ablation_csv(const AblationTable& t, std::string_view config_hash) {
  std::ostringstream os;
  os << "# config_hash=" << config_hash << '\n';
  os << "variant,seed,mAP,rank1,rank5,rank10\n";
  for (const AblationRow& r : t.rows) {
    os << letter(r.variant) << ',' << r.seed << ',' << format_double(r.mAP) << ',' << format_double(r.rank1) << ','
       << format_double(r.rank5) << ',' << format_double(r.rank10) << '\n';
  }
  for (const AblationSummary& s : t.summary()) {
    os << letter(s.variant) << ",mean," << format_double(s.mean_mAP) << ',' << format_double(s.mean_rank1) << ','
       << format_double(s.mean_rank5) << ',' << format_double(s.mean_rank10) << '\n';
    os << letter(s.variant) << ",std," << format_double(s.std_mAP) << ',' << format_double(s.std_rank1) << ','
       << format_double(s.std_rank5) << ',' << format_double(s.std_rank10) << '\n';
  }
  return os.str();
}

std::string ablation_json(const AblationTable& t, std::string_view run_id, std::string_view config_hash) {
  nlohmann::ordered_json j;
  j["run_id"] = run_id;
  j["config_hash"] = config_hash;
  j["rows"] = nlohmann::ordered_json::array();
  for (const AblationRow& r : t.rows) {
    j["rows"].push_back({{"variant", letter(r.variant)},
                         {"seed", r.seed},
                         {"mAP", r.mAP},
                         {"rank1", r.rank1},
                         {"rank5", r.rank5},
                         {"rank10", r.rank10}});
  }
  j["summary"] = nlohmann::ordered_json::array();
  for (const AblationSummary& s : t.summary()) {
    j["summary"].push_back({{"variant", letter(s.variant)},
                            {"mean_mAP", s.mean_mAP},
                            {"std_mAP", s.std_mAP},
                            {"mean_rank1", s.mean_rank1},
                            {"std_rank1", s.std_rank1},
                            {"mean_rank5", s.mean_rank5},
                            {"mean_rank10", s.mean_rank10}});
  }
  return j.dump(2) + "\n";
}

std::string routing_csv(const std::vector<objective::RoutingRecord>& records, std::string_view config_hash) {
  std::ostringstream os;
  os << "# config_hash=" << config_hash << '\n';
  os << "sample_id,modality,selected,weights,mean_sigma_sq\n";
  for (const objective::RoutingRecord& r : records) {
    os << r.sample_id << ',' << name_of(r.modality) << ',';
    for (std::size_t i = 0; i < r.selected.size(); ++i) os << (i ? ";" : "") << r.selected[i];
    os << ',';
    for (std::size_t i = 0; i < r.weights.size(); ++i) os << (i ? ";" : "") << format_double(r.weights[i]);
    os << ',' << format_double(r.mean_sigma_sq) << '\n';
  }
  return os.str();
}

// ---- directional checks ----------------------------------------------------------

std::vector<CheckResult> ablation_checks(const AblationTable& t, double min_gap) {
  std::map<Variant, double> m;
  for (const AblationSummary& s : t.summary()) m[s.variant] = s.mean_mAP;
  std::vector<CheckResult> out;
  if (!m.count(Variant::A) || !m.count(Variant::C) || !m.count(Variant::E)) {
    out.push_back({"ablation.variants_present", false, "needs variants a, c and e"});
    return out;
  }
  auto fmt = [](double v) { return format_double(std::round(v * 1e4) / 1e4); };
  out.push_back({"ablation.e_ge_c", m[Variant::E] >= m[Variant::C],
                 "mean mAP e=" + fmt(m[Variant::E]) + " c=" + fmt(m[Variant::C])});
  out.push_back({"ablation.c_ge_a", m[Variant::C] >= m[Variant::A],
                 "mean mAP c=" + fmt(m[Variant::C]) + " a=" + fmt(m[Variant::A])});
  out.push_back({"ablation.e_minus_a", m[Variant::E] - m[Variant::A] >= min_gap,
                 "e-a=" + fmt(m[Variant::E] - m[Variant::A]) + " (need >= " + fmt(min_gap) + ")"});
  return out;
}

namespace {

std::vector<double> values_of(const std::map<std::uint64_t, double>& per_seed) {
  std::vector<double> v;
  for (const auto& [seed, val] : per_seed) v.push_back(val);
  return v;
}

double sem_sq(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double sd = stddev(v);
  return sd * sd / static_cast<double>(v.size());
}

}  // namespace

std::vector<CheckResult> sweep_checks(const SweepReport& r, std::optional<double> tolerance) {
  // (variant, eps) -> per-seed mAP, seeds in row order.
  std::map<Variant, std::map<double, std::map<std::uint64_t, double>>> by;
  for (const SweepRow& row : r.rows) by[row.variant][row.eps][row.seed] = row.mAP;
  std::vector<CheckResult> out;
  std::map<Variant, double> drop;
  for (const auto& [v, eps_map] : by) {
    bool ok = true;
    std::string detail;
    const std::map<std::uint64_t, double>* prev = nullptr;
    double prev_eps = 0.0;
    for (const auto& [eps, seeds] : eps_map) {
      if (prev) {
        const std::vector<double> before = values_of(*prev);
        const std::vector<double> after = values_of(seeds);
        // Standard error of the difference of the two seed means.
        const double se = std::sqrt(sem_sq(before) + sem_sq(after));
        const double tol = tolerance.value_or(std::max(2.0 * se, 0.005));
        const double rise = mean(after) - mean(before);
        if (rise > tol) {
          ok = false;
          detail += "eps " + format_double(prev_eps) + "->" + format_double(eps) + " rises by " +
                    format_double(rise) + " > " + format_double(tol) + "; ";
        }
      }
      prev = &seeds;
      prev_eps = eps;
    }
    const auto& first = eps_map.begin()->second;
    const auto& last = eps_map.rbegin()->second;
    std::vector<double> d;
    for (const auto& [s, val] : first)
      if (last.count(s)) d.push_back(val - last.at(s));
    drop[v] = mean(d);
    out.push_back({"sweep.monotone." + letter(v), ok,
                   ok ? "non-increasing within tolerance; drop " + format_double(drop[v]) : detail});
  }
  if (drop.count(Variant::E) && drop.count(Variant::B)) {
    out.push_back({"sweep.e_drop_le_b_drop", drop[Variant::E] <= drop[Variant::B],
                   "drop e=" + format_double(drop[Variant::E]) + " b=" + format_double(drop[Variant::B])});
  }
  return out;
}

}  // namespace ugg::evalkit
