#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdfgo/observation_model.hpp"

namespace cdfgo {

struct ConstellationShell {
  Constellation system = Constellation::GpsQzss;
  int num_satellites = 24;
  int num_planes = 6;
  double altitude_m = 20'200'000.0;
  double inclination_deg = 55.0;
};

// Buildings along an azimuth range. A satellite inside the range and below
// the roof elevation is received as NLOS with `nlos_probability`, and is
// otherwise blocked.
struct CanyonSector {
  double az_start_deg = 0.0;
  double az_end_deg = 0.0;  // may wrap past 360 by giving az_end < az_start
  double max_blocked_elevation_deg = 0.0;
  double nlos_probability = 0.0;

  bool contains(double azimuth_rad) const;
};

struct Waypoint {
  double east = 0.0;
  double north = 0.0;
};

struct ScenarioConfig {
  std::string name = "custom";
  std::uint64_t seed = 1;
  int n_epochs = 500;
  double epoch_interval = 1.0;  // s
  Geodetic origin{22.3193 * kDegToRad, 114.1694 * kDegToRad, 10.0};
  std::vector<Waypoint> waypoints;
  double speed = 6.0;  // m/s, ping-pong along the polyline
  std::vector<ConstellationShell> constellations;
  double elevation_mask_deg = 10.0;
  std::vector<CanyonSector> sectors;
  double sigma0 = 3.0;              // m, zenith code noise
  double elevation_exponent = 1.0;  // sigma = sigma0 / sin(el)^exponent
  double bias_median = 20.0;        // m, lognormal NLOS bias
  double bias_log_sigma = 0.5;
  double cn0_base = 45.0;           // dB-Hz
  double cn0_noise = 1.5;           // dB
  double cn0_penalty_min = 6.0;     // dB, NLOS
  double cn0_penalty_max = 12.0;
  double clock_walk_sigma = 0.2;    // m / sqrt(s)

  void validate() const;
};

ConstellationShell default_shell(Constellation system);
std::vector<ConstellationShell> default_constellations();

// "medium", "deep", "harsh"
std::vector<std::string> preset_names();
ScenarioConfig preset(const std::string& name);

struct SimulationStats {
  // per sector: satellites inside the sector below the roof, and how many of
  // those were received as NLOS
  std::vector<long> sector_candidates;
  std::vector<long> sector_nlos;
  long visible_total = 0;
};

struct SimulatedRun {
  ScenarioConfig config;
  LocalFrame frame;
  std::vector<EpochObservations> epochs;
  SimulationStats stats;
};

// Sat ids look like G01, E01, R01, C01. Throws ValidationError naming the
// epoch when fewer than five (or too few to fix position and the observed
// clocks) satellites remain.
SimulatedRun generate(const ScenarioConfig& cfg);

}  // namespace cdfgo
