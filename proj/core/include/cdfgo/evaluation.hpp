#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cdfgo/window_pipeline.hpp"

namespace cdfgo {

inline constexpr int kEvalWindowStride = 5;
inline constexpr double kContaminationThreshold = 10.0;  // m

// ---------------------------------------------------------------- estimation

struct EpochEstimate {
  int epoch_index = 0;
  double time = 0.0;
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  Eigen::Matrix2d covariance = Eigen::Matrix2d::Identity();
  Eigen::Vector2d truth = Eigen::Vector2d::Zero();
  EpochVector state = EpochVector::Zero();
  Eigen::VectorXd information;  // this epoch's factors, canonical order
  double hdop = 0.0;            // weighted HDOP at the estimate
  int window_start = 0;
  bool converged = true;
};

using InformationFn = std::function<Eigen::VectorXd(const PreparedEpoch&)>;

InformationFn scheme_weighting(const WeightScheme& scheme);
InformationFn wgn_weighting(const WgnModel& model);

// Solves windows of 5 epochs every `stride` epochs (plus a final window so
// the tail is covered); each epoch takes its estimate from the first window
// that contains it. Requires truth on every epoch.
std::vector<EpochEstimate> estimate_run(const PreparedRun& run, const InformationFn& weighting,
                                        const SolverOptions& options = {},
                                        int stride = kEvalWindowStride);

// ---------------------------------------------------------------- metrics

// Nearest-rank percentile: the ceil(p/100 * n)-th smallest value.
double nearest_rank_percentile(std::vector<double> values, double percent);

struct HorizontalStats {
  double mean = 0.0;
  double p50 = 0.0;
  double p95 = 0.0;
};
HorizontalStats horizontal_errors(std::span<const double> errors);

struct EpochRecord {
  int epoch_index = 0;
  double time = 0.0;
  Eigen::Vector2d error = Eigen::Vector2d::Zero();  // estimate - truth, EN
  Eigen::Matrix2d covariance = Eigen::Matrix2d::Identity();
  Eigen::Vector2d sigma = Eigen::Vector2d::Zero();  // sqrt(diag)
  double nll = 0.0;
  double es = 0.0;
  double horizontal_error() const { return error.norm(); }
};

struct AxisDiagnostics {
  double k = 0.0;
  std::array<double, 2> exceedance{};  // E, N
  std::array<double, 2> coverage{};
};

// Per axis: exceedance = fraction of |error| > k sigma, coverage = 1 - exceedance.
// A zero sigma with a non-zero error counts as an exceedance.
std::vector<AxisDiagnostics> credibility_diagnostics(std::span<const EpochRecord> records,
                                                     std::span<const double> ks);

struct RunEvaluation {
  std::vector<EpochRecord> records;
  HorizontalStats horizontal;
  double mean_nll = 0.0;
  double mean_es = 0.0;
  std::vector<AxisDiagnostics> diagnostics;  // k = 1, 3
};

RunEvaluation evaluate_estimates(std::span<const EpochEstimate> estimates,
                                 int es_samples = kEvalSamples, std::uint64_t es_seed = kEvalSeed);

// ---------------------------------------------------------------- satellites

// w_i / sum_j w_j. Throws ValidationError when the sum is not positive.
Eigen::VectorXd normalized_weights(const Eigen::VectorXd& weights);

struct SingleDifference {
  std::vector<double> error;      // m; 0 for references
  std::vector<char> is_reference;
  std::vector<char> no_reference;  // singleton constellation
};

// Ground-truth-referenced single-differenced pseudorange errors, in the
// order of `epoch.observations`; the reference of each constellation is its
// highest-cn0 satellite.
SingleDifference single_diff_errors(const EpochObservations& epoch, const EnuPoint& truth,
                                    const ClockBiases& clock, const LocalFrame& frame);
// Same on a prepared epoch, canonical order.
SingleDifference single_diff_errors(const PreparedEpoch& epoch, const Eigen::Vector3d& truth,
                                    const ClockBiases& clock);

struct SatelliteRecord {
  int epoch_index = 0;
  std::string sat_id;
  double azimuth_deg = 0.0;
  double elevation_deg = 0.0;
  double weight = 0.0;  // w = sqrt(Omega)
  double normalized_weight = 0.0;
  double sd_error = 0.0;
  double wls_residual = 0.0;
  bool reference = false;
  bool no_reference = false;
  double contamination = 0.0;
};

std::vector<SatelliteRecord> satellite_diagnostics(const PreparedEpoch& epoch,
                                                   const EpochEstimate& estimate);

// Mean normalized weight of contaminated (label > threshold) and clean
// factors over all epochs.
struct WeightSplit {
  double clean = 0.0;
  double contaminated = 0.0;
  long clean_count = 0;
  long contaminated_count = 0;
};
WeightSplit contamination_weight_split(const PreparedRun& run,
                                       std::span<const EpochEstimate> estimates,
                                       double threshold = kContaminationThreshold);

// Mean weighted HDOP over epochs with / without any contaminated factor.
struct HdopSplit {
  double contaminated_epochs = 0.0;
  double clean_epochs = 0.0;
  long contaminated_count = 0;
  long clean_count = 0;
};
HdopSplit hdop_split(const PreparedRun& run, std::span<const EpochEstimate> estimates,
                     double threshold = kContaminationThreshold);

// ---------------------------------------------------------------- export

struct MethodReport {
  std::string method;
  RunEvaluation evaluation;
  WeightSplit weights;
  HdopSplit hdop;
  int nonconverged_epochs = 0;
};

struct EvalOptions {
  SolverOptions solver;
  int window_stride = kEvalWindowStride;
  int es_samples = kEvalSamples;
  std::uint64_t es_seed = kEvalSeed;
};

// estimate_run + evaluate_estimates + the weight/HDOP splits.
MethodReport evaluate_method(const std::string& name, const PreparedRun& run,
                             const InformationFn& weighting, const EvalOptions& options = {},
                             std::vector<EpochEstimate>* estimates = nullptr);

// CSV + SVG of the per-axis error with +/-3 sigma envelopes.
void export_envelope(std::span<const EpochRecord> records, const std::filesystem::path& dir);
// CSV + SVG bars of w-bar and single-differenced errors, and the skyplot.
void export_satellites(std::span<const SatelliteRecord> sats, const std::filesystem::path& dir);

std::string summary_json(std::span<const MethodReport> reports);
void write_summary(std::span<const MethodReport> reports, const std::filesystem::path& file);

// CSV parsers for the export schemas (used to check round trips).
std::vector<EpochRecord> read_envelope_csv(const std::filesystem::path& file);
std::vector<SatelliteRecord> read_satellites_csv(const std::filesystem::path& file);

}  // namespace cdfgo
