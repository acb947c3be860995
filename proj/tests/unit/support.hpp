#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "cdfgo/scenario_sim.hpp"
#include "cdfgo/window_pipeline.hpp"

namespace cdfgo::test {

// Small clean scenario: no canyon, no noise unless asked.
inline ScenarioConfig open_sky(int epochs, std::uint64_t seed, double sigma0 = 0.0) {
  ScenarioConfig c = preset("medium");
  c.name = "open";
  c.sectors.clear();
  c.n_epochs = epochs;
  c.seed = seed;
  c.sigma0 = sigma0;
  return c;
}

inline ScenarioConfig harsh(int epochs, std::uint64_t seed) {
  ScenarioConfig c = preset("harsh");
  c.n_epochs = epochs;
  c.seed = seed;
  return c;
}

inline PreparedRun prepare(const SimulatedRun& sim) { return prepare_run(sim.epochs, sim.frame); }

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("cdfgo_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Central difference of a scalar function.
template <class F>
double central(F&& f, double h) {
  return (f(h) - f(-h)) / (2.0 * h);
}

inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace cdfgo::test
