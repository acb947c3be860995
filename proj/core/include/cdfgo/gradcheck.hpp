#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdfgo/window_pipeline.hpp"

namespace cdfgo {

struct GradcheckOptions {
  double tolerance = 1e-3;          // relative
  double information_step = 1e-4;   // relative to Omega_i
  double parameter_step = 1e-5;     // absolute
  // |a - b| / max(|a|, |b|, floor * max(1, |L|)) for the dL/dOmega and
  // parameter rows, L the window loss at the base point
  double denominator_floor = 1e-6;
  std::uint64_t seed = 7;
  bool corrupt_jacobian = false;
  bool check_parameters = true;
  // 0 checks every entry of every tensor.
  int max_entries_per_tensor = 0;
};

struct GradcheckRow {
  std::string group;
  int checked = 0;
  int retried = 0;  // entries re-differenced with a 10x smaller step
  double max_relative_error = 0.0;
  std::string worst;  // entry with the largest error
  bool pass = true;
};

struct GradcheckReport {
  std::vector<GradcheckRow> rows;
  double seconds = 0.0;
  bool pass() const;
  std::string table() const;
};

double relative_error(double analytic, double numeric, double floor);

// Finite-difference audit of the window at `start`: loss gradients wrt the
// EN mean and covariance, dL/dOmega_i for NLL, ES (fixed seed) and Combined,
// and every WGN parameter under Combined. The solver runs a fixed number of
// iterations so the audited function has no iteration-count jumps.
GradcheckReport run_gradcheck(const WgnModel& model, const PreparedRun& run, int start,
                              const GradcheckOptions& options = {});

}  // namespace cdfgo
