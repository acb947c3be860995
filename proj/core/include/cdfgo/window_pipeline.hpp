#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "cdfgo/classical_weighting.hpp"
#include "cdfgo/credibility_losses.hpp"
#include "cdfgo/diff_solver.hpp"
#include "cdfgo/observation_model.hpp"
#include "cdfgo/wgn.hpp"

namespace cdfgo {

// One epoch reduced to what the window pipeline needs, with every
// per-satellite vector in canonical factor order.
struct PreparedEpoch {
  int epoch_index = 0;
  double time = 0.0;
  std::vector<int> order;  // canonical position -> index in the observation list
  std::vector<std::string> sat_ids;
  std::vector<RangeFactor> factors;
  std::vector<FeatureRow> raw_features;
  std::vector<double> elevation;  // rad, seen from the WLS position
  std::vector<double> azimuth;    // rad
  std::vector<double> cn0;
  std::vector<double> contamination;  // m, NaN when unlabelled
  EpochVector wls_state = EpochVector::Zero();  // GoGPS WLS, also the solver start
  bool wls_converged = false;
  std::optional<Eigen::Vector3d> truth_position;  // ENU
  std::optional<ClockBiases> truth_clock;

  int size() const { return static_cast<int>(factors.size()); }
};

struct PreparedRun {
  LocalFrame frame;
  std::vector<PreparedEpoch> epochs;

  bool has_truth() const;
  int size() const { return static_cast<int>(epochs.size()); }
};

// Validates every epoch, runs the GoGPS WLS that supplies the residual
// feature and the solver initialization, and caches the canonical factors.
PreparedRun prepare_run(const std::vector<EpochObservations>& epochs, const LocalFrame& frame,
                        const WeightScheme& residual_scheme = WeightScheme::gogps());

// Start indices of windows of `length` epochs taken every `stride` epochs.
std::vector<int> make_windows(int num_epochs, int length = kWindowLength, int stride = 1);

// Like make_windows, but a final window is added so that every epoch is
// covered even when (n - length) is not a multiple of the stride.
std::vector<int> make_covering_windows(int num_epochs, int length, int stride);

PseudorangeWindowModel window_model(const PreparedRun& run, int start,
                                    int length = kWindowLength);
Eigen::VectorXd window_initial_state(const PreparedRun& run, int start,
                                     int length = kWindowLength);

Eigen::VectorXd scheme_information(const PreparedEpoch& epoch, const WeightScheme& scheme);

// Per-epoch features normalized with the model's stored statistics.
SatelliteFeatures epoch_features(const PreparedEpoch& epoch, const WgnModel& model);

// Raw feature rows of the given epochs, for fitting normalization stats.
std::vector<FeatureRow> collect_features(const PreparedRun& run, int first, int last);

struct WindowResult {
  double loss = 0.0;  // mean over the window's epochs
  bool converged = true;
  SolverOutput solve;
  Eigen::VectorXd information;
  Eigen::VectorXd d_information;  // filled when gradients are requested
  std::vector<LossValue> epoch_losses;
};

struct WindowSettings {
  Objective objective = Objective::Combined;
  LossConfig loss;
  SolverOptions solver;
  int length = kWindowLength;
};

// Solver + loss for a window with externally supplied information. The
// per-epoch loss seed is derive_seed(seed, epoch offset).
WindowResult window_loss_for_information(const PreparedRun& run, int start,
                                         const Eigen::VectorXd& information,
                                         const WindowSettings& settings, std::uint64_t seed,
                                         bool want_gradient);

// WGN -> solver -> loss, optionally accumulating parameter gradients.
WindowResult window_loss(const WgnModel& model, const PreparedRun& run, int start,
                         const WindowSettings& settings, std::uint64_t seed,
                         WgnGradients* grads);

}  // namespace cdfgo
