// ugg: synthesize data, train, evaluate, sweep, certify gradients and run
// ablations from flat key = value configs.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ugg/config.hpp"
#include "ugg/dataio.hpp"
#include "ugg/errors.hpp"
#include "ugg/evalkit.hpp"
#include "ugg/fileio.hpp"
#include "ugg/objective.hpp"
#include "ugg/text.hpp"

namespace fs = std::filesystem;

namespace {

using namespace ugg;

enum Exit : int { kOk = 0, kCheckFailed = 1, kUsage = 2, kIo = 3 };

// Options shared by every subcommand. `overrides` holds one slot per config key.
struct Common {
  std::string config_path;
  std::string out_dir;
  std::map<std::string, std::string> overrides;
};

void add_common(CLI::App& sub, Common& c, bool out_required) {
  sub.add_option("--config", c.config_path, "config file of 'key = value' lines");
  auto* out = sub.add_option("--out", c.out_dir, "output directory (locked for the duration of the run)");
  if (out_required) out->required();
  const config::Resolved defaults = config::resolve(config::RunConfig{});
  for (const config::KeyInfo& k : config::keys()) {
    const std::string prov =
        k.provenance == config::Provenance::Published ? "[published default] " : "[implementation choice] ";
    sub.add_option("--" + k.key, c.overrides[k.key], prov + k.help)
        ->default_str(defaults.at(k.key))
        ->group("Config keys");
  }
}

struct Run {
  config::RunConfig cfg;
  config::Resolved resolved;
  std::string hash;
  std::string name;

  std::string run_id() const { return name + "-" + hash; }
  std::map<std::string, std::string> snapshot() const {
    std::map<std::string, std::string> s(resolved.begin(), resolved.end());
    s["run.config_hash"] = hash;
    return s;
  }
};

Run resolve_run(const std::string& name, const Common& c, const std::vector<const CLI::Option*>& given) {
  std::string text;
  if (!c.config_path.empty()) text = read_file(c.config_path);
  std::vector<std::pair<std::string, std::string>> overrides;
  for (const CLI::Option* opt : given) {
    const std::string key = opt->get_name().substr(2);
    overrides.emplace_back(key, c.overrides.at(key));
  }
  Run r;
  r.name = name;
  r.cfg = config::load(text, overrides);
  r.resolved = config::resolve(r.cfg);
  r.hash = config::hash(r.resolved);
  std::cerr << "resolved config:\n" << config::to_text(r.resolved) << "config hash: " << r.hash << '\n';
  return r;
}

std::vector<const CLI::Option*> given_keys(const CLI::App& sub) {
  std::vector<const CLI::Option*> out;
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_group() == "Config keys" && opt->count() > 0) out.push_back(opt);
  }
  return out;
}

// Owns the output directory for the run.
struct OutDir {
  fs::path dir;
  std::unique_ptr<DirectoryLock> lock;

  OutDir(const std::string& path, const Run& run) : dir(path) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
    lock = std::make_unique<DirectoryLock>(dir);
    write("run.cfg", "# config_hash=" + run.hash + "\n" + config::to_text(run.resolved));
  }
  void write(const std::string& name, std::string_view bytes) const { write_file_locked(dir / name, bytes); }
};

dataio::Dataset load_data(const std::string& path) {
  if (path.empty()) throw ConfigError("--data is required");
  return dataio::read_features(path);
}

std::vector<const dataio::Sample*> all_samples(const dataio::Dataset& ds) {
  std::vector<const dataio::Sample*> out;
  for (const dataio::Sample& s : ds.samples) out.push_back(&s);
  return out;
}

std::string noise_label(const dataio::NoiseSpec& n) {
  return n.kind == dataio::NoiseKind::Gaussian ? "gaussian" : "arbitrary";
}

int report_checks(const std::vector<evalkit::CheckResult>& checks) {
  bool ok = true;
  for (const auto& c : checks) {
    std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
    ok = ok && c.pass;
  }
  return ok ? kOk : kCheckFailed;
}

// ---- subcommands ------------------------------------------------------------------

int cmd_synth(const Run& run, const Common& c) {
  OutDir out(c.out_dir, run);
  const dataio::Dataset ds = dataio::generate(run.cfg.data);
  dataio::write_features(ds, out.dir / "features.uggf");
  dataio::write_manifest(ds, out.dir / "manifest.csv");
  std::cout << "wrote " << ds.samples.size() << " samples (n=" << ds.local_tokens << ", D=" << ds.dim << ") to "
            << (out.dir / "features.uggf").string() << '\n';
  return kOk;
}

int cmd_train(const Run& run, const Common& c, const std::string& data, const std::string& resume_from,
              bool dump_routing) {
  const dataio::Dataset ds = load_data(data);
  OutDir out(c.out_dir, run);
  objective::FitOptions fo;
  fo.snapshot = run.snapshot();
  objective::Checkpoint ckpt;
  if (resume_from.empty()) {
    ckpt = objective::fit(run.cfg.train, ds, fo);
  } else {
    objective::Checkpoint from = objective::load_checkpoint(resume_from);
    from.model.config.epochs = run.cfg.train.epochs;
    ckpt = objective::resume(std::move(from), ds, fo);
  }
  objective::save_checkpoint(ckpt, out.dir / "checkpoint.uggc");
  out.write("loss.csv", objective::history_csv(ckpt.history, run.hash));
  if (dump_routing) {
    const auto samples = all_samples(ds);
    out.write("routing.csv", evalkit::routing_csv(objective::routing_diagnostics(ckpt.model, samples), run.hash));
  }
  if (!ckpt.history.empty()) {
    std::cout << "trained " << ckpt.epoch << " epochs, final loss " << format_double(ckpt.history.back().loss.total)
              << '\n';
  }
  return kOk;
}

int cmd_eval(const Run& run, const Common& c, const std::string& data, const std::string& checkpoint) {
  const dataio::Dataset clean = load_data(data);
  if (checkpoint.empty()) throw ConfigError("--checkpoint is required");
  const objective::Checkpoint ckpt = objective::load_checkpoint(checkpoint);
  OutDir out(c.out_dir, run);
  const dataio::Dataset ds = dataio::inject_noise(clean, run.cfg.noise);
  const evalkit::MetricReport m = evalkit::evaluate_model(ckpt.model, ds, run.cfg.metric);
  out.write("metrics.json", evalkit::metric_json(m, run.run_id(), run.hash));
  out.write("metrics.csv", evalkit::metric_csv(m, run.hash));
  std::cout << "mAP " << format_double(m.mAP) << "  rank1 " << format_double(m.rank1) << "  rank5 "
            << format_double(m.rank5) << "  rank10 " << format_double(m.rank10) << '\n';
  return kOk;
}

int cmd_sweep(const Run& run, const Common& c, const std::string& data, const std::vector<std::string>& checkpoints,
              bool check) {
  const dataio::Dataset ds = load_data(data);
  if (checkpoints.empty()) throw ConfigError("--checkpoints needs at least one file");
  evalkit::ModelSet models;
  std::set<objective::Variant> variants;
  std::set<std::uint64_t> seeds;
  for (const std::string& path : checkpoints) {
    objective::Checkpoint ck = objective::load_checkpoint(path);
    const objective::Variant v = ck.model.config.variant;
    const std::uint64_t s = ck.model.config.seed;
    variants.insert(v);
    seeds.insert(s);
    models.insert_or_assign({v, s}, std::move(ck.model));
  }
  OutDir out(c.out_dir, run);
  const std::vector<objective::Variant> vs(variants.begin(), variants.end());
  const std::vector<std::uint64_t> ss(seeds.begin(), seeds.end());
  const evalkit::SweepReport rep =
      evalkit::noise_sweep(models, ds, run.cfg.sweep_eps, vs, ss, run.cfg.noise, run.cfg.metric);
  out.write("sweep.csv", evalkit::sweep_csv(rep, run.hash, noise_label(run.cfg.noise)));
  out.write("sweep.json", evalkit::sweep_json(rep, run.run_id(), run.hash, noise_label(run.cfg.noise)));
  for (const auto& s : rep.summary()) {
    std::cout << "eps " << std::setw(4) << format_double(s.eps) << "  " << objective::variant_letter(s.variant)
              << "  mAP " << std::fixed << std::setprecision(4) << s.mean_mAP << " +- " << s.std_mAP
              << std::defaultfloat << '\n';
  }
  return check ? report_checks(evalkit::sweep_checks(rep)) : kOk;
}

int cmd_gradcheck(const Run& run, const Common& c) {
  std::optional<OutDir> out;
  if (!c.out_dir.empty()) out.emplace(c.out_dir, run);
  const config::GradcheckSettings& g = run.cfg.gradcheck;
  const dataio::Dataset batch =
      objective::gradcheck_batch(g.dim, g.local_tokens, g.identities, g.instances, run.cfg.seed);
  GradCheckOptions opt;
  opt.tolerance = g.tolerance;
  opt.seed = run.cfg.seed;
  std::ostringstream csv;
  csv << "# config_hash=" << run.hash << '\n'
      << "variant,parameter,entries,max_relative_error,kink_skipped,roundoff_limited,pass\n";
  bool ok = true;
  for (const objective::Variant v : run.cfg.variants) {
    objective::TrainConfig tc = run.cfg.train;
    tc.variant = v;
    double worst = 0.0;
    bool variant_ok = true;
    for (const GradReport& r : objective::gradcheck_model(tc, batch, opt)) {
      const char letter = objective::variant_letter(v);
      csv << letter << ',' << r.parameter << ',' << r.analytic.size() << ',' << format_double(r.max_relative_error)
          << ',' << r.kink_skipped << ',' << r.roundoff_limited << ',' << (r.pass ? 1 : 0) << '\n';
      if (!r.pass) {
        std::cout << "FAIL " << letter << ' ' << r.parameter << " max_rel " << r.max_relative_error
                  << (r.note.empty() ? "" : " (" + r.note + ")") << '\n';
      }
      worst = std::max(worst, r.max_relative_error);
      variant_ok = variant_ok && r.pass;
    }
    std::cout << (variant_ok ? "PASS" : "FAIL") << " variant " << objective::variant_letter(v) << " worst "
              << std::scientific << std::setprecision(2) << worst << std::defaultfloat << '\n';
    ok = ok && variant_ok;
  }
  if (out) out->write("gradcheck.csv", csv.str());
  return ok ? kOk : kCheckFailed;
}

int cmd_ablate(const Run& run, const Common& c, const std::string& data, bool check, bool with_sweep,
               bool save_checkpoints) {
  const dataio::Dataset ds = load_data(data);
  OutDir out(c.out_dir, run);
  evalkit::AblationOptions ao;
  ao.variants = run.cfg.variants;
  ao.metric = run.cfg.metric;
  ao.snapshot = run.snapshot();
  evalkit::ModelSet models;
  const evalkit::AblationTable table = evalkit::ablation_run(run.cfg.train, ds, run.cfg.seeds, ao, &models);
  out.write("ablation.csv", evalkit::ablation_csv(table, run.hash));
  out.write("ablation.json", evalkit::ablation_json(table, run.run_id(), run.hash));
  for (const auto& s : table.summary()) {
    std::cout << objective::variant_letter(s.variant) << "  mAP " << std::fixed << std::setprecision(4) << s.mean_mAP
              << " +- " << s.std_mAP << "  rank1 " << s.mean_rank1 << " +- " << s.std_rank1 << std::defaultfloat
              << '\n';
  }
  if (save_checkpoints) {
    for (const auto& [key, model] : models) {
      objective::Checkpoint ck;
      ck.model = model;
      // Weights only: optimizer moments and loss history are not kept by the ablation runner.
      ck.adam.m = model.params.zeros_like();
      ck.adam.v = model.params.zeros_like();
      ck.epoch = model.config.epochs;
      ck.snapshot = run.snapshot();
      objective::save_checkpoint(
          ck, out.dir / ("model_" + std::string(1, objective::variant_letter(key.first)) + "_seed" +
                         std::to_string(key.second) + ".uggc"));
    }
  }
  std::vector<evalkit::CheckResult> checks;
  if (check) checks = evalkit::ablation_checks(table);
  if (with_sweep) {
    const evalkit::SweepReport rep = evalkit::noise_sweep(models, ds, run.cfg.sweep_eps, run.cfg.variants,
                                                          run.cfg.seeds, run.cfg.noise, run.cfg.metric);
    out.write("sweep.csv", evalkit::sweep_csv(rep, run.hash, noise_label(run.cfg.noise)));
    out.write("sweep.json", evalkit::sweep_json(rep, run.run_id(), run.hash, noise_label(run.cfg.noise)));
    if (check) {
      const auto sc = evalkit::sweep_checks(rep);
      checks.insert(checks.end(), sc.begin(), sc.end());
    }
  }
  return check ? report_checks(checks) : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Uncertainty-guided multi-modal retrieval: synthesis, training, evaluation and checks"};
  app.require_subcommand(1);
  app.footer("Every subcommand accepts --config FILE and any config key as --key value.\n"
             "Exit codes: 0 success, 1 check failure or diverged training, 2 usage/config error, 3 I/O error.");

  Common common;
  std::string data, checkpoint, resume_from;
  std::vector<std::string> checkpoints;
  bool check = false, dump_routing = false, with_sweep = false, save_checkpoints = false;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset (features.uggf, manifest.csv)");
  add_common(*synth, common, true);

  auto* train = app.add_subcommand("train", "train one model (checkpoint.uggc, loss.csv)");
  add_common(*train, common, true);
  train->add_option("--data", data, "UGGF feature file")->required();
  train->add_option("--resume", resume_from, "continue from this checkpoint up to train.epochs");
  train->add_flag("--dump-routing", dump_routing, "write routing.csv with per-sample expert selections");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the query/gallery split (metrics.json/csv)");
  add_common(*eval, common, true);
  eval->add_option("--data", data, "UGGF feature file")->required();
  eval->add_option("--checkpoint", checkpoint, "UGGC checkpoint")->required();

  auto* sweep = app.add_subcommand("sweep", "test-time noise sweep over sweep.eps (sweep.json/csv)");
  add_common(*sweep, common, true);
  sweep->add_option("--data", data, "UGGF feature file")->required();
  sweep->add_option("--checkpoints", checkpoints, "UGGC checkpoints covering a full variant x seed grid")
      ->required();
  sweep->add_flag("--check", check, "exit 1 when a directional check fails");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every parameter of run.variants");
  add_common(*gradcheck, common, false);

  auto* ablate = app.add_subcommand("ablate", "train and evaluate run.variants x run.seeds (ablation.json/csv)");
  add_common(*ablate, common, true);
  ablate->add_option("--data", data, "UGGF feature file")->required();
  ablate->add_flag("--check", check, "exit 1 when a directional check fails");
  ablate->add_flag("--sweep", with_sweep, "also run the noise sweep on the trained models");
  ablate->add_flag("--save-checkpoints", save_checkpoints, "write one weights-only checkpoint per (variant, seed) for eval and sweep");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    const Run run = resolve_run(sub->get_name(), common, given_keys(*sub));
    if (sub == synth) return cmd_synth(run, common);
    if (sub == train) return cmd_train(run, common, data, resume_from, dump_routing);
    if (sub == eval) return cmd_eval(run, common, data, checkpoint);
    if (sub == sweep) return cmd_sweep(run, common, data, checkpoints, check);
    if (sub == gradcheck) return cmd_gradcheck(run, common);
    return cmd_ablate(run, common, data, check, with_sweep, save_checkpoints);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kIo;
  } catch (const evalkit::MissingCheckpoint& e) {
    std::cerr << "missing checkpoint: " << e.what() << '\n';
    return kIo;
  } catch (const NonFiniteLoss& e) {
    std::cerr << "training diverged: " << e.what() << '\n';
    return kCheckFailed;
  } catch (const evalkit::VariantTrainingFailed& e) {
    std::cerr << "training diverged: " << e.what() << '\n';
    return kCheckFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
}
