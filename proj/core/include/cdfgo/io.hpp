#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cdfgo/classical_weighting.hpp"
#include "cdfgo/scenario_sim.hpp"
#include "cdfgo/trainer.hpp"

namespace cdfgo {

inline constexpr int kDatasetVersion = 1;
inline constexpr int kCheckpointVersion = 1;
inline constexpr int kConfigVersion = 1;

// ---------------------------------------------------------------- dataset

// JSON Lines: a header record followed by one record per epoch.
struct Dataset {
  Geodetic origin;
  std::optional<ScenarioConfig> scenario;  // present for simulated data
  std::vector<EpochObservations> epochs;

  LocalFrame frame() const { return LocalFrame(origin); }
  bool has_truth() const;
};

Dataset dataset_from_run(const SimulatedRun& run);
std::string dataset_to_string(const Dataset& ds);
Dataset dataset_from_string(const std::string& text, const std::string& source = "<memory>");
void write_dataset(const Dataset& ds, const std::filesystem::path& file);
Dataset read_dataset(const std::filesystem::path& file);

// ---------------------------------------------------------------- config

struct EvalConfig {
  int window_stride = 5;
  int es_samples = kEvalSamples;
  std::uint64_t es_seed = kEvalSeed;

  void validate() const;
};

struct RunConfig {
  ScenarioConfig scenario = preset("harsh");
  WeightScheme scheme = WeightScheme::gogps();
  TrainConfig train;
  EvalConfig eval;
};

std::string scenario_to_json(const ScenarioConfig& cfg);
ScenarioConfig scenario_from_json(const std::string& text);

std::string run_config_to_json(const RunConfig& cfg);
// Every key is optional and falls back to the defaults above; unknown keys,
// wrong types and out-of-range values are errors that name the JSON path.
RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& file);

// ---------------------------------------------------------------- checkpoint

struct Checkpoint {
  TrainConfig config;
  TrainState state;
};

std::string checkpoint_to_json(const TrainConfig& cfg, const TrainState& state);
Checkpoint checkpoint_from_json(const std::string& text, const std::string& source = "<memory>");
void write_checkpoint(const TrainConfig& cfg, const TrainState& state,
                      const std::filesystem::path& file);
Checkpoint read_checkpoint(const std::filesystem::path& file);

// Training log CSV: step,pass,loss,grad_norm,skipped_steps,nonconverged_windows
void write_training_log(const TrainState& state, const std::filesystem::path& file);
// pass,validation_loss,best
void write_validation_log(const TrainState& state, const std::filesystem::path& file);

std::string read_text_file(const std::filesystem::path& file);
void write_text_file(const std::filesystem::path& file, const std::string& text);

}  // namespace cdfgo
