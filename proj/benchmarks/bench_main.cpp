#include <benchmark/benchmark.h>

#include "cdfgo/evaluation.hpp"
#include "cdfgo/scenario_sim.hpp"
#include "cdfgo/window_pipeline.hpp"

using namespace cdfgo;

namespace {

const PreparedRun& harsh_run() {
  static const SimulatedRun sim = [] {
    ScenarioConfig c = preset("harsh");
    c.n_epochs = 40;
    c.seed = 3;
    return generate(c);
  }();
  static const PreparedRun run = prepare_run(sim.epochs, sim.frame);
  return run;
}

WgnModel fitted_model() {
  WgnModel m(WgnConfig{}, 7);
  m.set_stats(FeatureStats::fit(collect_features(harsh_run(), 0, harsh_run().size())));
  return m;
}

void BM_GaussNewtonWindow(benchmark::State& state) {
  const auto& run = harsh_run();
  const WgnModel model = fitted_model();
  Eigen::VectorXd info;
  std::vector<double> v;
  for (int e = 0; e < kWindowLength; ++e) {
    const auto w = model.forward(epoch_features(run.epochs[e], model)).information;
    v.insert(v.end(), w.data(), w.data() + w.size());
  }
  info = Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  WindowSettings ws;
  ws.objective = Objective::Nll;
  for (auto _ : state) {
    benchmark::DoNotOptimize(window_loss_for_information(run, 0, info, ws, 1, false));
  }
}
BENCHMARK(BM_GaussNewtonWindow);

void BM_SolverBackward(benchmark::State& state) {
  const auto& run = harsh_run();
  const WgnModel model = fitted_model();
  std::vector<double> v;
  for (int e = 0; e < kWindowLength; ++e) {
    const auto w = model.forward(epoch_features(run.epochs[e], model)).information;
    v.insert(v.end(), w.data(), w.data() + w.size());
  }
  const Eigen::VectorXd info = Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  WindowSettings ws;
  ws.objective = Objective::Nll;
  for (auto _ : state) {
    benchmark::DoNotOptimize(window_loss_for_information(run, 0, info, ws, 1, true));
  }
}
BENCHMARK(BM_SolverBackward);

void BM_WgnForward(benchmark::State& state) {
  const WgnModel model = fitted_model();
  const auto feats = epoch_features(harsh_run().epochs[0], model);
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(feats));
}
BENCHMARK(BM_WgnForward);

void BM_WgnForwardBackward(benchmark::State& state) {
  const WgnModel model = fitted_model();
  const auto feats = epoch_features(harsh_run().epochs[0], model);
  auto grads = model.zero_gradients();
  for (auto _ : state) {
    WgnTape tape;
    const auto fw = model.forward(feats, &tape);
    model.backward(tape, Eigen::VectorXd::Ones(fw.information.size()), grads);
  }
  benchmark::DoNotOptimize(grads);
}
BENCHMARK(BM_WgnForwardBackward);

void BM_EnergyScore(benchmark::State& state) {
  EnPredictive p;
  p.covariance << 4.0, 1.0, 1.0, 2.0;
  p.ground_truth = {1.0, -0.5};
  const int k = static_cast<int>(state.range(0));
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(energy_score_mc(p, k, ++seed));
}
BENCHMARK(BM_EnergyScore)->Arg(2048)->Arg(8192);

void BM_TrainingWindow(benchmark::State& state) {
  const WgnModel model = fitted_model();
  WindowSettings ws;
  auto grads = model.zero_gradients();
  for (auto _ : state) {
    benchmark::DoNotOptimize(window_loss(model, harsh_run(), 3, ws, 11, &grads));
  }
}
BENCHMARK(BM_TrainingWindow);

void BM_EvaluateRunGoGps(benchmark::State& state) {
  const auto weighting = scheme_weighting(WeightScheme::gogps());
  for (auto _ : state) benchmark::DoNotOptimize(estimate_run(harsh_run(), weighting));
}
BENCHMARK(BM_EvaluateRunGoGps);

}  // namespace

BENCHMARK_MAIN();
