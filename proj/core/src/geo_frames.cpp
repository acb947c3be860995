#include "cdfgo/geo_frames.hpp"

#include <algorithm>
#include <cmath>

#include "cdfgo/error.hpp"

namespace cdfgo {
namespace {

bool finite(const Eigen::Vector3d& v) { return v.allFinite(); }

}  // namespace

EcefPoint geodetic_to_ecef(const Geodetic& g) {
  const double sin_lat = std::sin(g.latitude);
  const double cos_lat = std::cos(g.latitude);
  const double prime_vertical = kWgs84A / std::sqrt(1.0 - kWgs84E2 * sin_lat * sin_lat);
  return {(prime_vertical + g.height) * cos_lat * std::cos(g.longitude),
          (prime_vertical + g.height) * cos_lat * std::sin(g.longitude),
          (prime_vertical * (1.0 - kWgs84E2) + g.height) * sin_lat};
}

LocalFrame::LocalFrame(const Geodetic& origin) : origin_(origin) {
  if (!std::isfinite(origin.latitude) || !std::isfinite(origin.longitude) ||
      !std::isfinite(origin.height)) {
    throw ValidationError("frame origin must be finite");
  }
  if (std::abs(origin.latitude) > kPi / 2.0) {
    throw ValidationError("frame origin latitude outside [-pi/2, pi/2]");
  }
  origin_ecef_ = geodetic_to_ecef(origin).vec();
  const double sl = std::sin(origin.latitude), cl = std::cos(origin.latitude);
  const double so = std::sin(origin.longitude), co = std::cos(origin.longitude);
  rotation_ << -so, co, 0.0,
               -sl * co, -sl * so, cl,
               cl * co, cl * so, sl;
}

EnuPoint ecef_to_enu(const EcefPoint& p, const LocalFrame& frame) {
  const Eigen::Vector3d v = p.vec();
  if (!finite(v)) throw ValidationError("ecef_to_enu: non-finite input");
  return EnuPoint::from(frame.ecef_to_enu_rotation() * (v - frame.origin_ecef()));
}

EcefPoint enu_to_ecef(const EnuPoint& p, const LocalFrame& frame) {
  const Eigen::Vector3d v = p.vec();
  if (!finite(v)) throw ValidationError("enu_to_ecef: non-finite input");
  return EcefPoint::from(frame.ecef_to_enu_rotation().transpose() * v + frame.origin_ecef());
}

SkyDirection sky_direction_enu(const Eigen::Vector3d& sat_enu,
                               const Eigen::Vector3d& receiver_enu) {
  const Eigen::Vector3d d = sat_enu - receiver_enu;
  const double range = d.norm();
  if (!(range > 1.0)) throw GeometryError("sky_direction: satellite and receiver coincide");
  SkyDirection out;
  out.elevation = std::asin(std::clamp(d.z() / range, -1.0, 1.0));
  double az = std::atan2(d.x(), d.y());
  if (az < 0.0) az += 2.0 * kPi;
  if (az >= 2.0 * kPi) az -= 2.0 * kPi;
  out.azimuth = az;
  return out;
}

SkyDirection sky_direction(const EcefPoint& sat, const EcefPoint& receiver,
                           const LocalFrame& frame) {
  const Eigen::Matrix3d& r = frame.ecef_to_enu_rotation();
  return sky_direction_enu(r * sat.vec(), r * receiver.vec());
}

Eigen::Vector3d unit_los(const EcefPoint& sat, const EnuPoint& receiver,
                         const LocalFrame& frame) {
  const Eigen::Vector3d d = receiver.vec() - ecef_to_enu(sat, frame).vec();
  const double range = d.norm();
  if (!(range > 0.0) || !std::isfinite(range)) {
    throw GeometryError("unit_los: satellite and receiver coincide");
  }
  return d / range;
}

}  // namespace cdfgo
