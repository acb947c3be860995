#include "cdfgo/scenario_sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>

#include <Eigen/Geometry>

#include "cdfgo/error.hpp"

namespace cdfgo {

namespace {

constexpr double kEarthGm = 3.986004418e14;        // m^3/s^2
constexpr double kEarthRotation = 7.2921151467e-5;  // rad/s
constexpr double kDay = 86400.0;

char system_letter(Constellation c) {
  switch (c) {
    case Constellation::GpsQzss: return 'G';
    case Constellation::Galileo: return 'E';
    case Constellation::Glonass: return 'R';
    case Constellation::BeiDou: return 'C';
  }
  return '?';
}

struct Satellite {
  std::string id;
  Constellation system;
  double radius;
  double mean_motion;
  double raan;
  double inclination;
  double phase;
  double correction_bias;
};

Eigen::Vector3d satellite_ecef(const Satellite& s, double t) {
  const double u = s.phase + s.mean_motion * t;
  const Eigen::Vector3d orbit(s.radius * std::cos(u), s.radius * std::sin(u), 0.0);
  const Eigen::Matrix3d to_inertial =
      (Eigen::AngleAxisd(s.raan, Eigen::Vector3d::UnitZ()) *
       Eigen::AngleAxisd(s.inclination, Eigen::Vector3d::UnitX()))
          .toRotationMatrix();
  const Eigen::Matrix3d to_ecef =
      Eigen::AngleAxisd(-kEarthRotation * t, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  return to_ecef * to_inertial * orbit;
}

// Position along a closed-ends polyline walked back and forth.
Eigen::Vector2d trajectory(const std::vector<Waypoint>& w, double distance) {
  if (w.size() == 1) return {w[0].east, w[0].north};
  std::vector<double> seg;
  double total = 0.0;
  for (std::size_t i = 1; i < w.size(); ++i) {
    seg.push_back(std::hypot(w[i].east - w[i - 1].east, w[i].north - w[i - 1].north));
    total += seg.back();
  }
  if (total <= 0.0) return {w[0].east, w[0].north};
  double d = std::fmod(distance, 2.0 * total);
  if (d > total) d = 2.0 * total - d;
  for (std::size_t i = 0; i < seg.size(); ++i) {
    if (d <= seg[i] || i + 1 == seg.size()) {
      const double f = seg[i] > 0.0 ? std::min(d / seg[i], 1.0) : 0.0;
      return {w[i].east + f * (w[i + 1].east - w[i].east),
              w[i].north + f * (w[i + 1].north - w[i].north)};
    }
    d -= seg[i];
  }
  return {w.back().east, w.back().north};
}

}  // namespace

bool CanyonSector::contains(double azimuth_rad) const {
  const double az = std::fmod(azimuth_rad / kDegToRad + 360.0, 360.0);
  if (az_start_deg <= az_end_deg) return az >= az_start_deg && az < az_end_deg;
  return az >= az_start_deg || az < az_end_deg;
}

void ScenarioConfig::validate() const {
  auto fail = [](const std::string& m) { throw ValidationError("scenario." + m); };
  if (n_epochs < 1) fail("n_epochs must be >= 1");
  if (!(epoch_interval > 0.0)) fail("epoch_interval must be > 0");
  if (waypoints.empty()) fail("waypoints must not be empty");
  if (!(speed >= 0.0)) fail("speed must be >= 0");
  if (constellations.empty()) fail("constellations must not be empty");
  for (const auto& c : constellations) {
    if (c.num_satellites < 1 || c.num_planes < 1) fail("constellations: counts must be >= 1");
    if (!(c.altitude_m > 1e6)) fail("constellations: altitude_m must exceed 1000 km");
    if (!(c.inclination_deg >= 0.0 && c.inclination_deg <= 180.0)) {
      fail("constellations: inclination_deg must lie in [0, 180]");
    }
  }
  if (!(elevation_mask_deg >= 0.0 && elevation_mask_deg < 90.0)) {
    fail("elevation_mask_deg must lie in [0, 90)");
  }
  for (const auto& s : sectors) {
    if (!(s.az_start_deg >= 0.0 && s.az_start_deg < 360.0) ||
        !(s.az_end_deg >= 0.0 && s.az_end_deg <= 360.0)) {
      fail("sectors: azimuths must lie in [0, 360)");
    }
    if (!(s.max_blocked_elevation_deg >= 0.0 && s.max_blocked_elevation_deg <= 90.0)) {
      fail("sectors: max_blocked_elevation_deg must lie in [0, 90]");
    }
    if (!(s.nlos_probability >= 0.0 && s.nlos_probability <= 1.0)) {
      fail("sectors: nlos_probability must lie in [0, 1]");
    }
  }
  if (!(sigma0 >= 0.0)) fail("sigma0 must be >= 0");
  if (!(elevation_exponent >= 0.0)) fail("elevation_exponent must be >= 0");
  if (!(bias_median > 0.0)) fail("bias_median must be > 0");
  if (!(bias_log_sigma >= 0.0)) fail("bias_log_sigma must be >= 0");
  if (!(cn0_noise >= 0.0)) fail("cn0_noise must be >= 0");
  if (!(cn0_penalty_min >= 0.0 && cn0_penalty_max >= cn0_penalty_min)) {
    fail("cn0 penalty range must satisfy 0 <= min <= max");
  }
  if (!(clock_walk_sigma >= 0.0)) fail("clock_walk_sigma must be >= 0");
}

ConstellationShell default_shell(Constellation system) {
  switch (system) {
    case Constellation::GpsQzss: return {system, 24, 6, 20'200'000.0, 55.0};
    case Constellation::Galileo: return {system, 24, 3, 23'222'000.0, 56.0};
    case Constellation::Glonass: return {system, 24, 3, 20'200'000.0, 64.8};
    case Constellation::BeiDou: return {system, 24, 3, 21'528'000.0, 55.0};
  }
  return {};
}

std::vector<ConstellationShell> default_constellations() {
  return {default_shell(Constellation::GpsQzss), default_shell(Constellation::Galileo),
          default_shell(Constellation::Glonass), default_shell(Constellation::BeiDou)};
}

std::vector<std::string> preset_names() { return {"medium", "deep", "harsh"}; }

ScenarioConfig preset(const std::string& name) {
  ScenarioConfig c;
  c.name = name;
  c.constellations = default_constellations();
  // A north-south street with a short east-west jog.
  c.waypoints = {{0.0, -300.0}, {0.0, 0.0}, {80.0, 40.0}, {80.0, 300.0}};
  double roof = 0.0, p = 0.0;
  if (name == "medium") {
    roof = 25.0, p = 0.05, c.bias_median = 10.0;
  } else if (name == "deep") {
    roof = 40.0, p = 0.15, c.bias_median = 20.0;
  } else if (name == "harsh") {
    roof = 55.0, p = 0.30, c.bias_median = 40.0;
  } else {
    throw ValidationError("unknown preset '" + name + "' (expected medium, deep or harsh)");
  }
  c.sectors = {{30.0, 150.0, roof, p}, {210.0, 330.0, roof, p}};
  return c;
}

SimulatedRun generate(const ScenarioConfig& cfg) {
  cfg.validate();
  SimulatedRun run;
  run.config = cfg;
  run.frame = LocalFrame(cfg.origin);
  run.stats.sector_candidates.assign(cfg.sectors.size(), 0);
  run.stats.sector_nlos.assign(cfg.sectors.size(), 0);

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<Satellite> sats;
  for (const auto& shell : cfg.constellations) {
    const double radius = kWgs84A + shell.altitude_m;
    const double raan0 = 2.0 * kPi * unit(rng);
    const int per_plane = (shell.num_satellites + shell.num_planes - 1) / shell.num_planes;
    for (int k = 0; k < shell.num_satellites; ++k) {
      const int plane = k % shell.num_planes;
      const int slot = k / shell.num_planes;
      Satellite s;
      char id[16];
      std::snprintf(id, sizeof id, "%c%02d", system_letter(shell.system), k + 1);
      s.id = id;
      s.system = shell.system;
      s.radius = radius;
      s.mean_motion = std::sqrt(kEarthGm / (radius * radius * radius));
      s.raan = raan0 + 2.0 * kPi * plane / shell.num_planes;
      s.inclination = shell.inclination_deg * kDegToRad;
      s.phase = 2.0 * kPi * (slot + 0.5 * plane / shell.num_planes) / per_plane;
      s.correction_bias = -20.0 + 40.0 * unit(rng);
      sats.push_back(s);
    }
  }
  const double t0 = kDay * unit(rng);

  ClockBiases clock{};
  clock[0] = -3.0e4 + 6.0e4 * unit(rng);
  for (int c = 1; c < kNumClockSlots; ++c) clock[c] = clock[0] + 30.0 * normal(rng);

  const double sin_mask = std::sin(cfg.elevation_mask_deg * kDegToRad);
  for (int k = 0; k < cfg.n_epochs; ++k) {
    const double t = k * cfg.epoch_interval;
    if (k > 0) {
      const double step = cfg.clock_walk_sigma * std::sqrt(cfg.epoch_interval);
      for (double& b : clock) b += step * normal(rng);
    }
    const Eigen::Vector2d en = trajectory(cfg.waypoints, cfg.speed * t);
    const Eigen::Vector3d rx_enu(en.x(), en.y(), 0.0);

    EpochObservations epoch;
    epoch.epoch_index = k;
    epoch.time = t;
    epoch.truth_position = EnuPoint::from(rx_enu);
    epoch.truth_clock = clock;
    std::set<int> slots;

    for (const auto& s : sats) {
      const Eigen::Vector3d ecef = satellite_ecef(s, t0 + t);
      const Eigen::Vector3d enu = ecef_to_enu(EcefPoint::from(ecef), run.frame).vec();
      const Eigen::Vector3d d = enu - rx_enu;
      const double range = d.norm();
      const double sin_el = d.z() / range;
      if (sin_el < sin_mask) continue;
      const double az = std::fmod(std::atan2(d.x(), d.y()) + 2.0 * kPi, 2.0 * kPi);
      const double el = std::asin(sin_el);

      bool nlos = false, blocked = false;
      for (std::size_t j = 0; j < cfg.sectors.size(); ++j) {
        const auto& sec = cfg.sectors[j];
        if (!sec.contains(az) || el >= sec.max_blocked_elevation_deg * kDegToRad) continue;
        ++run.stats.sector_candidates[j];
        if (unit(rng) < sec.nlos_probability) {
          ++run.stats.sector_nlos[j];
          nlos = true;
        } else {
          blocked = true;
        }
        break;
      }
      if (blocked) continue;

      const int slot = static_cast<int>(s.system);
      const double sigma = cfg.sigma0 / std::pow(sin_el, cfg.elevation_exponent);
      const double correction = s.correction_bias + 2.4 / (sin_el + 0.05);
      double bias = 0.0;
      double cn0 = cfg.cn0_base + 10.0 * std::log10(sin_el) + cfg.cn0_noise * normal(rng);
      if (nlos) {
        bias = cfg.bias_median * std::exp(cfg.bias_log_sigma * normal(rng));
        cn0 -= cfg.cn0_penalty_min + (cfg.cn0_penalty_max - cfg.cn0_penalty_min) * unit(rng);
      }
      const double noise = sigma * normal(rng);

      SatelliteObservation obs;
      obs.sat_id = s.id;
      obs.constellation = s.system;
      obs.sat_pos = EcefPoint::from(ecef);
      obs.pseudorange = range + clock[slot] + correction + noise + bias;
      obs.cn0 = std::clamp(cn0, 0.0, 70.0);
      obs.correction = correction;
      obs.truth_contamination = bias;
      epoch.observations.push_back(std::move(obs));
      slots.insert(slot);
    }
    const int n = static_cast<int>(epoch.observations.size());
    if (n < kMinObservationsPerEpoch || n < 3 + static_cast<int>(slots.size())) {
      throw ValidationError("scenario: epoch " + std::to_string(k) + " has only " +
                            std::to_string(n) + " usable satellites");
    }
    run.stats.visible_total += n;
    run.epochs.push_back(std::move(epoch));
  }
  return run;
}

}  // namespace cdfgo
