#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "cdfgo/geo_frames.hpp"

namespace cdfgo {

// Clock-bias slot of a satellite. GPS and QZSS share the first slot.
enum class Constellation { GpsQzss = 0, Galileo = 1, Glonass = 2, BeiDou = 3 };

inline constexpr int kNumClockSlots = 4;
inline constexpr int kEpochStateDim = 7;  // E, N, U, four clock biases
inline constexpr int kMinObservationsPerEpoch = 5;

using EpochVector = Eigen::Matrix<double, kEpochStateDim, 1>;
using EpochJacobianRow = Eigen::Matrix<double, 1, kEpochStateDim>;
using ClockBiases = std::array<double, kNumClockSlots>;

// Parses the system letter of a satellite id ("G08", "J02", "E18", "R09", "C23").
Constellation constellation_from_sat_id(std::string_view sat_id);
std::string_view constellation_name(Constellation c);
Constellation constellation_from_name(std::string_view name);

struct SatelliteObservation {
  std::string sat_id;
  Constellation constellation = Constellation::GpsQzss;
  EcefPoint sat_pos;
  double pseudorange = 0.0;      // m
  double cn0 = 0.0;              // dB-Hz
  double correction = 0.0;       // m, satellite clock + atmosphere, precomputed
  std::optional<double> truth_contamination;  // m, simulator label only
};

struct EpochState {
  EnuPoint position;
  ClockBiases clock_biases{};

  EpochVector to_vector() const;
  static EpochState from_vector(const EpochVector& x);
};

struct EpochObservations {
  int epoch_index = 0;
  double time = 0.0;  // s
  std::vector<SatelliteObservation> observations;
  std::optional<EnuPoint> truth_position;
  std::optional<ClockBiases> truth_clock;
};

// Throws ValidationError on duplicate ids, too few observations or values
// outside their documented ranges.
void validate_epoch(const EpochObservations& epoch);

// Permutation of `epoch.observations` in canonical factor order:
// constellation slot, then sat_id lexicographically.
std::vector<int> canonical_order(const EpochObservations& epoch);

double predict_pseudorange(const EpochState& state, const SatelliteObservation& obs,
                           const LocalFrame& frame);

// observed - predicted.
double residual(const EpochState& state, const SatelliteObservation& obs,
                const LocalFrame& frame);

// d residual / d [E, N, U, b_G, b_E, b_R, b_C].
EpochJacobianRow residual_jacobian(const EpochState& state, const SatelliteObservation& obs,
                                   const LocalFrame& frame);

// A pseudorange factor with the satellite already expressed in the local
// frame; this is the form the solvers evaluate in their inner loops.
struct RangeFactor {
  Eigen::Vector3d sat_enu = Eigen::Vector3d::Zero();
  int clock_slot = 0;
  double observed = 0.0;
  double correction = 0.0;

  // `x` is the 7-vector of one epoch.
  double predicted(const EpochVector& x) const;
  double residual(const EpochVector& x) const;  // observed - predicted
  EpochJacobianRow jacobian(const EpochVector& x) const;
};

RangeFactor make_range_factor(const SatelliteObservation& obs, const LocalFrame& frame);

}  // namespace cdfgo
