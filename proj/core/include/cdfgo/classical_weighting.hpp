#pragma once

#include <string_view>
#include <variant>
#include <vector>

#include "cdfgo/observation_model.hpp"

namespace cdfgo {

// sigma^2 = a^2 / sin^2(el)
struct ElevationParams {
  double a = 1.5;  // m
};

// sigma^2 = a + b * 10^(-cn0/10)
struct SigmaEpsParams {
  double a = 0.5;     // m^2
  double b = 1.0e4;   // m^2
};

// goGPS SNR model scaled by 1/sin^2(el):
//   q(s) = 10^(-(s - s1)/k) * ((A / 10^(-(s0 - s1)/k) - 1) * (s - s1)/(s0 - s1) + 1)
// clamped to q = 1 above s1 and q = A below s0;  sigma^2 = sigma0^2 q / sin^2(el).
struct GoGpsParams {
  double sigma0 = 1.0;  // m
  double snr0 = 10.0;   // dB-Hz
  double snr1 = 50.0;   // dB-Hz
  double snr_a = 30.0;  // A
  double snr_k = 20.0;  // k
};

enum class SchemeKind { Elevation, SigmaEps, GoGps };

struct WeightScheme {
  std::variant<ElevationParams, SigmaEpsParams, GoGpsParams> params = GoGpsParams{};

  SchemeKind kind() const { return static_cast<SchemeKind>(params.index()); }
  static WeightScheme elevation(ElevationParams p = {}) { return {p}; }
  static WeightScheme sigma_eps(SigmaEpsParams p = {}) { return {p}; }
  static WeightScheme gogps(GoGpsParams p = {}) { return {p}; }
};

std::string_view scheme_name(SchemeKind kind);
SchemeKind scheme_from_name(std::string_view name);
void validate_scheme(const WeightScheme& scheme);

// Pseudorange variance [m^2]. Throws ValidationError for elevation <= 0.
double scheme_variance(const WeightScheme& scheme, double elevation, double cn0);

struct WlsOptions {
  int max_iterations = 10;
  double tolerance = 1e-4;              // m, on |dx|
  double unobserved_clock_prior = 1e-6; // m^-2
};

struct WlsSolution {
  EpochState state;
  std::vector<double> residuals;   // per observation, input order
  std::vector<double> variances;   // per observation, m^2
  bool converged = false;
  int iterations = 0;
};

// Iterated single-epoch weighted least squares with scheme-derived diagonal
// weights. Elevation is computed from the initial state's position.
WlsSolution solve_wls(const EpochObservations& epoch, const WeightScheme& scheme,
                      const EpochState& init, const LocalFrame& frame,
                      const WlsOptions& options = {});

// Same, with explicit per-observation variances.
WlsSolution solve_wls_with_variances(const EpochObservations& epoch,
                                     const std::vector<double>& variances,
                                     const EpochState& init, const LocalFrame& frame,
                                     const WlsOptions& options = {});

}  // namespace cdfgo
