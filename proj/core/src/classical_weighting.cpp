#include "cdfgo/classical_weighting.hpp"

#include <array>
#include <cmath>
#include <string>

#include <Eigen/Cholesky>

#include "cdfgo/error.hpp"
#include "linalg.hpp"

namespace cdfgo {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

double gogps_snr_factor(const GoGpsParams& p, double cn0) {
  if (cn0 >= p.snr1) return 1.0;
  if (cn0 <= p.snr0) return p.snr_a;
  const double slope = (p.snr_a / std::pow(10.0, -(p.snr0 - p.snr1) / p.snr_k) - 1.0) /
                       (p.snr0 - p.snr1);
  return std::pow(10.0, -(cn0 - p.snr1) / p.snr_k) * (slope * (cn0 - p.snr1) + 1.0);
}

}  // namespace

std::string_view scheme_name(SchemeKind kind) {
  switch (kind) {
    case SchemeKind::Elevation: return "elevation";
    case SchemeKind::SigmaEps: return "sigma_eps";
    case SchemeKind::GoGps: return "gogps";
  }
  return "unknown";
}

SchemeKind scheme_from_name(std::string_view name) {
  if (name == "elevation") return SchemeKind::Elevation;
  if (name == "sigma_eps" || name == "sigma-eps") return SchemeKind::SigmaEps;
  if (name == "gogps") return SchemeKind::GoGps;
  throw ValidationError("unknown weighting scheme '" + std::string(name) + "'");
}

void validate_scheme(const WeightScheme& scheme) {
  std::visit(Overloaded{
                 [](const ElevationParams& p) {
                   if (!(p.a > 0.0)) throw ValidationError("elevation.a must be > 0");
                 },
                 [](const SigmaEpsParams& p) {
                   if (!(p.a > 0.0) || !(p.b > 0.0)) {
                     throw ValidationError("sigma_eps.a and sigma_eps.b must be > 0");
                   }
                 },
                 [](const GoGpsParams& p) {
                   if (!(p.sigma0 > 0.0) || !(p.snr_a > 0.0) || !(p.snr_k > 0.0) ||
                       !(p.snr0 > 0.0) || !(p.snr1 > p.snr0)) {
                     throw ValidationError(
                         "gogps parameters must be positive with snr1 > snr0");
                   }
                 },
             },
             scheme.params);
}

double scheme_variance(const WeightScheme& scheme, double elevation, double cn0) {
  if (!(elevation > 0.0)) {
    throw ValidationError("scheme_variance: elevation must be > 0 (masked satellite)");
  }
  if (!(cn0 >= 0.0)) throw ValidationError("scheme_variance: cn0 must be >= 0");
  const double s = std::sin(std::min(elevation, kPi / 2.0));
  return std::visit(Overloaded{
                        [&](const ElevationParams& p) { return p.a * p.a / (s * s); },
                        [&](const SigmaEpsParams& p) {
                          return p.a + p.b * std::pow(10.0, -cn0 / 10.0);
                        },
                        [&](const GoGpsParams& p) {
                          return p.sigma0 * p.sigma0 * gogps_snr_factor(p, cn0) / (s * s);
                        },
                    },
                    scheme.params);
}

WlsSolution solve_wls_with_variances(const EpochObservations& epoch,
                                     const std::vector<double>& variances,
                                     const EpochState& init, const LocalFrame& frame,
                                     const WlsOptions& options) {
  const int m = static_cast<int>(epoch.observations.size());
  if (m < kMinObservationsPerEpoch) {
    throw ValidationError("solve_wls: epoch " + std::to_string(epoch.epoch_index) +
                          " has fewer than 5 observations");
  }
  if (static_cast<int>(variances.size()) != m) {
    throw ValidationError("solve_wls: variance count does not match observations");
  }

  std::vector<RangeFactor> factors;
  factors.reserve(m);
  std::array<bool, kNumClockSlots> observed{};
  for (const auto& o : epoch.observations) {
    factors.push_back(make_range_factor(o, frame));
    observed[factors.back().clock_slot] = true;
  }

  WlsSolution out;
  out.variances = variances;
  EpochVector x = init.to_vector();
  for (int it = 0; it < options.max_iterations; ++it) {
    Eigen::Matrix<double, kEpochStateDim, kEpochStateDim> h =
        Eigen::Matrix<double, kEpochStateDim, kEpochStateDim>::Zero();
    EpochVector g = EpochVector::Zero();
    for (int i = 0; i < m; ++i) {
      const EpochJacobianRow j = factors[i].jacobian(x);
      const double r = factors[i].residual(x);
      const double w = 1.0 / variances[i];
      h.noalias() += w * j.transpose() * j;
      g.noalias() += w * r * j.transpose();
    }
    if (!g.allFinite()) throw NumericalError("solve_wls: non-finite residuals");
    for (int c = 0; c < kNumClockSlots; ++c) {
      if (!observed[c]) h(3 + c, 3 + c) += options.unobserved_clock_prior;
    }
    Eigen::LLT<Eigen::Matrix<double, kEpochStateDim, kEpochStateDim>> llt(h);
    if (llt.info() != Eigen::Success) {
      const double cond = detail::symmetric_condition(h);
      throw NumericalError("solve_wls: singular normal matrix at epoch " +
                               std::to_string(epoch.epoch_index) +
                               " (condition " + std::to_string(cond) + ")",
                           cond);
    }
    const EpochVector dx = -llt.solve(g);
    x += dx;
    out.iterations = it + 1;
    if (dx.norm() < options.tolerance) {
      out.converged = true;
      break;
    }
  }

  out.state = EpochState::from_vector(x);
  out.residuals.resize(m);
  for (int i = 0; i < m; ++i) out.residuals[i] = factors[i].residual(x);
  return out;
}

WlsSolution solve_wls(const EpochObservations& epoch, const WeightScheme& scheme,
                      const EpochState& init, const LocalFrame& frame,
                      const WlsOptions& options) {
  std::vector<double> variances;
  variances.reserve(epoch.observations.size());
  const Eigen::Vector3d receiver = init.position.vec();
  for (const auto& o : epoch.observations) {
    const SkyDirection dir = sky_direction_enu(ecef_to_enu(o.sat_pos, frame).vec(), receiver);
    variances.push_back(scheme_variance(scheme, dir.elevation, o.cn0));
  }
  return solve_wls_with_variances(epoch, variances, init, frame, options);
}

}  // namespace cdfgo
