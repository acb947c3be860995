// cdfgo: simulate, train, evaluate and audit the credible weighting pipeline.
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cdfgo/error.hpp"
#include "cdfgo/evaluation.hpp"
#include "cdfgo/gradcheck.hpp"
#include "cdfgo/io.hpp"
#include "cdfgo/scenario_sim.hpp"
#include "cdfgo/trainer.hpp"

namespace fs = std::filesystem;
using namespace cdfgo;

namespace {

fs::path default_output_dir() {
  if (const char* env = std::getenv("CDFGO_OUTPUT_DIR"); env && *env) return env;
  return ".";
}

std::string method_name(Objective o) {
  switch (o) {
    case Objective::Mae: return "DFGO-MAE";
    case Objective::Nll: return "CDFGO-NLL";
    case Objective::Es: return "CDFGO-ES";
    case Objective::Combined: return "CDFGO-Combined";
  }
  return "?";
}

std::string scheme_label(SchemeKind k) {
  switch (k) {
    case SchemeKind::Elevation: return "Elevation";
    case SchemeKind::SigmaEps: return "Sigma-eps";
    case SchemeKind::GoGps: return "GoGPS";
  }
  return "?";
}

PreparedRun load_prepared(const fs::path& file, bool need_truth) {
  const Dataset ds = read_dataset(file);
  if (need_truth && !ds.has_truth()) {
    throw ValidationError("dataset " + file.string() + " has no ground-truth column");
  }
  return prepare_run(ds.epochs, ds.frame());
}

struct SimulateArgs {
  std::string preset = "harsh";
  std::string config;
  int epochs = -1;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int cmd_simulate(const SimulateArgs& a) {
  ScenarioConfig cfg = a.config.empty() ? preset(a.preset) : load_run_config(a.config).scenario;
  if (a.epochs != -1) cfg.n_epochs = a.epochs;
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  const SimulatedRun run = generate(cfg);
  const fs::path out = a.out.empty() ? default_output_dir() / (cfg.name + ".jsonl") : fs::path(a.out);
  write_dataset(dataset_from_run(run), out);
  std::cout << "wrote " << run.epochs.size() << " epochs (" << cfg.name << ", seed " << cfg.seed
            << ") to " << out.string() << "\n";
  return 0;
}

struct TrainArgs {
  std::string dataset;
  std::string config;
  std::string objective;
  std::string out;
  std::string log_dir;
  std::string resume;
  int passes = -1;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha, beta;
};

int cmd_train(const TrainArgs& a) {
  TrainConfig cfg = a.config.empty() ? TrainConfig{} : load_run_config(a.config).train;
  if (!a.objective.empty()) cfg.objective = objective_from_name(a.objective);
  if (a.passes >= 0) cfg.passes = a.passes;
  if (a.seed) cfg.seed = *a.seed;
  if (a.alpha) cfg.loss.alpha = *a.alpha;
  if (a.beta) cfg.loss.beta = *a.beta;
  cfg.validate();

  const PreparedRun run = load_prepared(a.dataset, true);
  const Trainer trainer(run, cfg);
  TrainState state;
  if (!a.resume.empty()) {
    Checkpoint ck = read_checkpoint(a.resume);
    state = std::move(ck.state);
  } else {
    state = trainer.initial_state();
  }
  const fs::path out =
      a.out.empty() ? default_output_dir() / (std::string(objective_name(cfg.objective)) + ".ckpt.json")
                    : fs::path(a.out);
  const fs::path log_dir = a.log_dir.empty() ? out.parent_path() : fs::path(a.log_dir);
  const std::string stem = out.stem().stem().string();

  std::cerr << "training " << method_name(cfg.objective) << " on " << trainer.train_windows().size()
            << " windows (" << trainer.validation_windows().size() << " validation), "
            << cfg.passes << " passes\n";
  trainer.run(state, std::nullopt, [&](const TrainState& s) {
    const auto& v = s.validation.back();
    std::cerr << "pass " << v.pass + 1 << "/" << cfg.passes << "  train "
              << (s.log.empty() ? 0.0 : s.log.back().loss) << "  validation " << v.loss
              << (v.best ? "  *" : "") << "  skipped " << s.skipped_steps << "\n";
    write_checkpoint(cfg, s, out);
  });
  write_checkpoint(cfg, state, out);
  write_training_log(state, log_dir / (stem + ".training.csv"));
  write_validation_log(state, log_dir / (stem + ".validation.csv"));
  std::cout << "wrote " << out.string() << " (best pass " << state.best_pass + 1 << ")\n";
  return 0;
}

struct EvalArgs {
  std::string dataset;
  std::vector<std::string> checkpoints;
  std::vector<std::string> schemes;
  std::string config;
  std::string out_dir;
  int diagnose_epoch = -1;
};

int cmd_eval(const EvalArgs& a) {
  if (a.checkpoints.empty() && a.schemes.empty()) {
    throw ValidationError("eval needs at least one --checkpoint or --scheme");
  }
  EvalOptions opts;
  RunConfig rc;
  if (!a.config.empty()) rc = load_run_config(a.config);
  opts.window_stride = rc.eval.window_stride;
  opts.es_samples = rc.eval.es_samples;
  opts.es_seed = rc.eval.es_seed;
  const PreparedRun run = load_prepared(a.dataset, true);
  const fs::path out_dir = a.out_dir.empty() ? default_output_dir() : fs::path(a.out_dir);

  std::vector<MethodReport> reports;
  auto report = [&](const std::string& name, const InformationFn& fn, const SolverOptions& so) {
    opts.solver = so;
    std::vector<EpochEstimate> est;
    reports.push_back(evaluate_method(name, run, fn, opts, &est));
    const fs::path dir = out_dir / name;
    export_envelope(reports.back().evaluation.records, dir);
    if (a.diagnose_epoch >= 0) {
      int idx = -1;
      for (int i = 0; i < run.size(); ++i) {
        if (run.epochs[i].epoch_index == a.diagnose_epoch) idx = i;
      }
      if (idx < 0) {
        throw ValidationError("--diagnose-epoch " + std::to_string(a.diagnose_epoch) +
                              " is not in the dataset");
      }
      export_satellites(satellite_diagnostics(run.epochs[idx], est[idx]), dir);
    }
    const auto& ev = reports.back().evaluation;
    std::cerr << name << ": mean " << ev.horizontal.mean << " m, p95 " << ev.horizontal.p95
              << " m, NLL " << ev.mean_nll << ", ES " << ev.mean_es << "\n";
  };
  for (const auto& s : a.schemes) {
    WeightScheme scheme;
    const SchemeKind kind = scheme_from_name(s);
    if (!a.config.empty() && rc.scheme.kind() == kind) {
      scheme = rc.scheme;
    } else {
      scheme = kind == SchemeKind::Elevation  ? WeightScheme::elevation()
               : kind == SchemeKind::SigmaEps ? WeightScheme::sigma_eps()
                                              : WeightScheme::gogps();
    }
    report(scheme_label(kind), scheme_weighting(scheme), rc.train.solver);
  }
  for (const auto& path : a.checkpoints) {
    const Checkpoint ck = read_checkpoint(path);
    report(method_name(ck.config.objective), wgn_weighting(ck.state.best_model), ck.config.solver);
  }
  write_summary(reports, out_dir / "summary.json");
  std::cout << "wrote " << (out_dir / "summary.json").string() << "\n";
  return 0;
}

struct GradcheckArgs {
  std::string dataset;
  std::string checkpoint;
  std::uint64_t seed = 7;
  int window = 0;
  bool corrupt = false;
  int max_entries = 0;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  const PreparedRun run = load_prepared(a.dataset, true);
  if (a.window < 0 || a.window + kWindowLength > run.size()) {
    throw ValidationError("--window must leave 5 epochs in the dataset");
  }
  WgnModel model;
  if (!a.checkpoint.empty()) {
    model = read_checkpoint(a.checkpoint).state.best_model;
  } else {
    model = WgnModel(WgnConfig{}, a.seed);
    model.set_stats(FeatureStats::fit(collect_features(run, 0, run.size())));
  }
  GradcheckOptions o;
  o.seed = a.seed;
  o.corrupt_jacobian = a.corrupt;
  o.max_entries_per_tensor = a.max_entries;
  const GradcheckReport r = run_gradcheck(model, run, a.window, o);
  std::cout << r.table();
  std::cout << (r.pass() ? "PASS" : "FAIL") << "  (" << r.seconds << " s)\n";
  if (!r.pass()) {
    for (const auto& row : r.rows) {
      if (!row.pass) std::cerr << "offender: " << row.group << " at " << row.worst << "\n";
    }
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Credible differentiable factor-graph GNSS weighting"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "generate a synthetic urban dataset");
  s->add_option("--preset", sim.preset, "medium, deep or harsh");
  s->add_option("--config", sim.config, "run config JSON (uses its scenario section)");
  s->add_option("--epochs", sim.epochs, "number of epochs");
  s->add_option("--seed", sim.seed, "simulation seed");
  s->add_option("--out", sim.out, "output dataset (JSON Lines)");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train the weighting network");
  t->add_option("--dataset", tr.dataset, "training dataset")->required();
  t->add_option("--config", tr.config, "run config JSON (uses its train section)");
  t->add_option("--objective", tr.objective, "mae, nll, es or combined");
  t->add_option("--out", tr.out, "checkpoint file");
  t->add_option("--log-dir", tr.log_dir, "directory for the training/validation CSVs");
  t->add_option("--resume", tr.resume, "continue from a checkpoint");
  t->add_option("--passes", tr.passes, "passes over the training windows");
  t->add_option("--seed", tr.seed, "training seed");
  t->add_option("--alpha", tr.alpha, "NLL weight of the combined objective");
  t->add_option("--beta", tr.beta, "ES weight of the combined objective");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate learned or classical weighting");
  e->add_option("--dataset", ev.dataset, "test dataset")->required();
  e->add_option("--checkpoint", ev.checkpoints, "trained checkpoint (repeatable)");
  e->add_option("--scheme", ev.schemes, "elevation, sigma_eps or gogps (repeatable)");
  e->add_option("--config", ev.config, "run config JSON (eval and scheme sections)");
  e->add_option("--out-dir", ev.out_dir, "output directory");
  e->add_option("--diagnose-epoch", ev.diagnose_epoch, "also export satellite diagnostics");

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  g->add_option("--dataset", gc.dataset, "dataset with ground truth")->required();
  g->add_option("--checkpoint", gc.checkpoint, "audit this model instead of a fresh one");
  g->add_option("--seed", gc.seed, "seed for the model and the ES draws");
  g->add_option("--window", gc.window, "first epoch of the audited window");
  g->add_flag("--corrupt-jacobian", gc.corrupt, "perturb backward Jacobians (negative control)");
  g->add_option("--max-entries", gc.max_entries, "cap on audited entries per tensor (0 = all)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*s) return cmd_simulate(sim);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*g) return cmd_gradcheck(gc);
  } catch (const ValidationError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }
  return 1;
}
