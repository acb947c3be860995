#pragma once

#include <Eigen/Core>

namespace cdfgo {

// WGS-84 ellipsoid.
inline constexpr double kWgs84A = 6378137.0;
inline constexpr double kWgs84F = 1.0 / 298.257223563;
inline constexpr double kWgs84E2 = kWgs84F * (2.0 - kWgs84F);

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kDegToRad = kPi / 180.0;

struct Geodetic {
  double latitude = 0.0;   // rad
  double longitude = 0.0;  // rad
  double height = 0.0;     // m above ellipsoid
};

struct EcefPoint {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  Eigen::Vector3d vec() const { return {x, y, z}; }
  static EcefPoint from(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }
};

struct EnuPoint {
  double e = 0.0;
  double n = 0.0;
  double u = 0.0;

  Eigen::Vector3d vec() const { return {e, n, u}; }
  static EnuPoint from(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }
};

struct SkyDirection {
  double elevation = 0.0;  // rad, [0, pi/2] for satellites above the horizon
  double azimuth = 0.0;    // rad, [0, 2pi), clockwise from North
};

EcefPoint geodetic_to_ecef(const Geodetic& g);

// A local East-North-Up frame anchored at a geodetic origin. The rotation
// and origin ECEF coordinates are computed once at construction.
class LocalFrame {
 public:
  LocalFrame() : LocalFrame(Geodetic{}) {}
  explicit LocalFrame(const Geodetic& origin);

  const Geodetic& origin() const { return origin_; }
  const Eigen::Vector3d& origin_ecef() const { return origin_ecef_; }
  // Rows are the E, N, U unit vectors expressed in ECEF.
  const Eigen::Matrix3d& ecef_to_enu_rotation() const { return rotation_; }

 private:
  Geodetic origin_;
  Eigen::Vector3d origin_ecef_;
  Eigen::Matrix3d rotation_;
};

EnuPoint ecef_to_enu(const EcefPoint& p, const LocalFrame& frame);
EcefPoint enu_to_ecef(const EnuPoint& p, const LocalFrame& frame);

// Elevation/azimuth of `sat` seen from `receiver`, measured in the frame's
// local horizon. Throws GeometryError when the points are closer than 1 m.
SkyDirection sky_direction(const EcefPoint& sat, const EcefPoint& receiver,
                           const LocalFrame& frame);

// Same, with both points already in ENU.
SkyDirection sky_direction_enu(const Eigen::Vector3d& sat_enu,
                               const Eigen::Vector3d& receiver_enu);

// (receiver - sat) / |receiver - sat| in ENU: the gradient of the geometric
// range with respect to the receiver position.
Eigen::Vector3d unit_los(const EcefPoint& sat, const EnuPoint& receiver,
                         const LocalFrame& frame);

}  // namespace cdfgo
