#include "cdfgo/observation_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "cdfgo/error.hpp"

namespace cdfgo {

Constellation constellation_from_sat_id(std::string_view sat_id) {
  if (sat_id.empty()) throw ValidationError("empty satellite id");
  switch (sat_id.front()) {
    case 'G':
    case 'J':
      return Constellation::GpsQzss;
    case 'E':
      return Constellation::Galileo;
    case 'R':
      return Constellation::Glonass;
    case 'C':
      return Constellation::BeiDou;
    default:
      throw ValidationError("unknown satellite system in id '" + std::string(sat_id) + "'");
  }
}

std::string_view constellation_name(Constellation c) {
  switch (c) {
    case Constellation::GpsQzss: return "gps_qzss";
    case Constellation::Galileo: return "galileo";
    case Constellation::Glonass: return "glonass";
    case Constellation::BeiDou: return "beidou";
  }
  return "unknown";
}

Constellation constellation_from_name(std::string_view name) {
  for (int i = 0; i < kNumClockSlots; ++i) {
    const auto c = static_cast<Constellation>(i);
    if (constellation_name(c) == name) return c;
  }
  throw ValidationError("unknown constellation '" + std::string(name) + "'");
}

EpochVector EpochState::to_vector() const {
  EpochVector x;
  x << position.e, position.n, position.u, clock_biases[0], clock_biases[1], clock_biases[2],
      clock_biases[3];
  return x;
}

EpochState EpochState::from_vector(const EpochVector& x) {
  EpochState s;
  s.position = {x(0), x(1), x(2)};
  for (int i = 0; i < kNumClockSlots; ++i) s.clock_biases[i] = x(3 + i);
  return s;
}

void validate_epoch(const EpochObservations& epoch) {
  const std::string where = "epoch " + std::to_string(epoch.epoch_index) + ": ";
  if (static_cast<int>(epoch.observations.size()) < kMinObservationsPerEpoch) {
    throw ValidationError(where + "needs at least " + std::to_string(kMinObservationsPerEpoch) +
                          " observations, has " + std::to_string(epoch.observations.size()));
  }
  std::set<std::string> seen;
  for (const auto& o : epoch.observations) {
    if (!seen.insert(o.sat_id).second) throw ValidationError(where + "duplicate satellite " + o.sat_id);
    if (!(o.pseudorange > 0.0) || !std::isfinite(o.pseudorange)) {
      throw ValidationError(where + o.sat_id + ": pseudorange must be positive");
    }
    if (!(o.cn0 >= 0.0 && o.cn0 <= 70.0)) {
      throw ValidationError(where + o.sat_id + ": cn0 outside [0, 70] dB-Hz");
    }
    if (!std::isfinite(o.correction)) throw ValidationError(where + o.sat_id + ": non-finite correction");
    if (!o.sat_pos.vec().allFinite()) throw ValidationError(where + o.sat_id + ": non-finite position");
  }
}

std::vector<int> canonical_order(const EpochObservations& epoch) {
  std::vector<int> order(epoch.observations.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const auto& oa = epoch.observations[a];
    const auto& ob = epoch.observations[b];
    if (oa.constellation != ob.constellation) return oa.constellation < ob.constellation;
    return oa.sat_id < ob.sat_id;
  });
  return order;
}

double RangeFactor::predicted(const EpochVector& x) const {
  return (x.head<3>() - sat_enu).norm() + x(3 + clock_slot) + correction;
}

double RangeFactor::residual(const EpochVector& x) const {
  // |p - s| - |s| = p.(p - 2s) / (|p - s| + |s|). Subtracting |s| from the
  // observation first keeps the ~2e7 m magnitudes out of the part that
  // varies with x, so residuals are smooth to ~1e-12 m instead of ~1e-8 m.
  const Eigen::Vector3d p = x.head<3>();
  const double s_norm = sat_enu.norm();
  const double excess = p.dot(p - 2.0 * sat_enu) / ((p - sat_enu).norm() + s_norm);
  return (observed - s_norm - correction) - x(3 + clock_slot) - excess;
}

EpochJacobianRow RangeFactor::jacobian(const EpochVector& x) const {
  const Eigen::Vector3d d = x.head<3>() - sat_enu;
  const double range = d.norm();
  if (!(range > 0.0)) throw GeometryError("range factor: receiver at satellite position");
  EpochJacobianRow row = EpochJacobianRow::Zero();
  row.head<3>() = -d.transpose() / range;
  row(3 + clock_slot) = -1.0;
  return row;
}

RangeFactor make_range_factor(const SatelliteObservation& obs, const LocalFrame& frame) {
  RangeFactor f;
  f.sat_enu = ecef_to_enu(obs.sat_pos, frame).vec();
  f.clock_slot = static_cast<int>(obs.constellation);
  f.observed = obs.pseudorange;
  f.correction = obs.correction;
  return f;
}

double predict_pseudorange(const EpochState& state, const SatelliteObservation& obs,
                           const LocalFrame& frame) {
  const Eigen::Vector3d sat = ecef_to_enu(obs.sat_pos, frame).vec();
  const double range = (state.position.vec() - sat).norm();
  return range + state.clock_biases[static_cast<int>(obs.constellation)] + obs.correction;
}

double residual(const EpochState& state, const SatelliteObservation& obs,
                const LocalFrame& frame) {
  return obs.pseudorange - predict_pseudorange(state, obs, frame);
}

EpochJacobianRow residual_jacobian(const EpochState& state, const SatelliteObservation& obs,
                                   const LocalFrame& frame) {
  EpochJacobianRow row = EpochJacobianRow::Zero();
  row.head<3>() = -unit_los(obs.sat_pos, state.position, frame).transpose();
  row(3 + static_cast<int>(obs.constellation)) = -1.0;
  return row;
}

}  // namespace cdfgo
