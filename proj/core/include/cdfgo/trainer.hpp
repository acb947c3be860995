#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "cdfgo/window_pipeline.hpp"

namespace cdfgo {

struct TrainConfig {
  Objective objective = Objective::Combined;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 8;
  int passes = 30;
  double grad_clip_norm = 10.0;
  std::uint64_t seed = 1;
  int window_stride = 1;
  double validation_fraction = 0.1;
  LossConfig loss;
  WgnConfig wgn;
  SolverOptions solver;

  void validate() const;
};

struct AdamState {
  std::vector<Eigen::MatrixXd> m;
  std::vector<Eigen::MatrixXd> v;
  std::int64_t step = 0;
};

struct TrainLogRow {
  std::int64_t step = 0;
  int pass = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  std::int64_t skipped_steps = 0;
  int nonconverged_windows = 0;
};

struct ValidationRow {
  int pass = 0;
  double loss = 0.0;
  bool best = false;
};

// Everything needed to continue training bit-exactly.
struct TrainState {
  WgnModel model;
  AdamState adam;
  int pass = 0;          // current pass over the training windows
  int batch_cursor = 0;  // next batch within the pass
  std::int64_t skipped_steps = 0;
  double best_validation = std::numeric_limits<double>::infinity();
  int best_pass = -1;
  WgnModel best_model;
  std::vector<TrainLogRow> log;
  std::vector<ValidationRow> validation;
};

void adam_update(WgnModel& model, AdamState& adam, const WgnGradients& grads,
                 const TrainConfig& cfg);

// Scales the gradients in place to global norm <= max_norm; returns the
// norm before clipping.
double clip_gradients(WgnGradients& grads, double max_norm);

class Trainer {
 public:
  Trainer(const PreparedRun& run, const TrainConfig& cfg);

  const std::vector<int>& train_windows() const { return train_windows_; }
  const std::vector<int>& validation_windows() const { return validation_windows_; }
  WindowSettings settings() const;

  // Fresh model with stats fitted on the training epochs only.
  TrainState initial_state() const;

  // One Adam step over `batch` window starts. Returns the mean window loss,
  // or NaN when the step was skipped.
  double train_step(TrainState& state, std::span<const int> batch) const;

  double validation_loss(const WgnModel& model) const;

  // Window order of a pass; deterministic in (seed, pass).
  std::vector<int> pass_order(int pass) const;

  // Continues from `state` until all passes are done or, when given, the
  // global step count reaches `stop_at_step`.
  void run(TrainState& state, std::optional<std::int64_t> stop_at_step = std::nullopt,
           const std::function<void(const TrainState&)>& on_pass_end = {}) const;

 private:
  const PreparedRun& run_;
  TrainConfig cfg_;
  std::vector<int> train_windows_;
  std::vector<int> validation_windows_;
};

}  // namespace cdfgo
