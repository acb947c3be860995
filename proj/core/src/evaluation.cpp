#include "cdfgo/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>

#include "cdfgo/error.hpp"

namespace cdfgo {

InformationFn scheme_weighting(const WeightScheme& scheme) {
  validate_scheme(scheme);
  return [scheme](const PreparedEpoch& e) { return scheme_information(e, scheme); };
}

InformationFn wgn_weighting(const WgnModel& model) {
  return [&model](const PreparedEpoch& e) {
    return model.forward(epoch_features(e, model)).information;
  };
}

std::vector<EpochEstimate> estimate_run(const PreparedRun& run, const InformationFn& weighting,
                                        const SolverOptions& options, int stride) {
  if (!run.has_truth()) throw ValidationError("evaluation: dataset has epochs without ground truth");
  const int n = run.size();
  std::vector<Eigen::VectorXd> info(n);
  for (int e = 0; e < n; ++e) {
    info[e] = weighting(run.epochs[e]);
    if (info[e].size() != run.epochs[e].size()) {
      throw ValidationError("evaluation: weighting returned the wrong number of factors");
    }
  }
  std::vector<EpochEstimate> out(n);
  std::vector<char> done(n, 0);
  for (int start : make_covering_windows(n, kWindowLength, stride)) {
    const PseudorangeWindowModel model = window_model(run, start);
    Eigen::VectorXd stacked(model.num_factors());
    for (int e = 0, off = 0; e < kWindowLength; ++e) {
      stacked.segment(off, info[start + e].size()) = info[start + e];
      off += static_cast<int>(info[start + e].size());
    }
    const SolverOutput sol =
        gauss_newton_solve(model, stacked, window_initial_state(run, start), options);
    for (int e = 0; e < kWindowLength; ++e) {
      const int idx = start + e;
      if (done[idx]) continue;
      done[idx] = 1;
      const PreparedEpoch& pe = run.epochs[idx];
      EpochEstimate& est = out[idx];
      est.epoch_index = pe.epoch_index;
      est.time = pe.time;
      est.mean = sol.per_epoch_en[e].mean;
      est.covariance = sol.per_epoch_en[e].covariance;
      est.truth = pe.truth_position->head<2>();
      est.state = sol.state.segment<kEpochStateDim>(kEpochStateDim * e);
      est.information = info[idx];
      est.window_start = start;
      est.converged = sol.converged;
      try {
        est.hdop = weighted_hdop(model, stacked, sol.state, e);
      } catch (const GeometryError&) {
        est.hdop = std::numeric_limits<double>::infinity();
      }
    }
  }
  return out;
}

double nearest_rank_percentile(std::vector<double> values, double percent) {
  if (values.empty()) throw ValidationError("percentile of an empty set");
  if (!(percent > 0.0 && percent <= 100.0)) throw ValidationError("percentile must lie in (0, 100]");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  // Guard against 95/100*100 landing a hair above the integer.
  std::size_t rank = static_cast<std::size_t>(std::ceil(percent / 100.0 * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

HorizontalStats horizontal_errors(std::span<const double> errors) {
  if (errors.empty()) throw ValidationError("horizontal errors: empty run");
  HorizontalStats s;
  double sum = 0.0;
  for (double e : errors) sum += e;
  s.mean = sum / static_cast<double>(errors.size());
  const std::vector<double> v(errors.begin(), errors.end());
  s.p50 = nearest_rank_percentile(v, 50.0);
  s.p95 = nearest_rank_percentile(v, 95.0);
  return s;
}

std::vector<AxisDiagnostics> credibility_diagnostics(std::span<const EpochRecord> records,
                                                     std::span<const double> ks) {
  if (records.empty()) throw ValidationError("credibility diagnostics: empty run");
  std::vector<AxisDiagnostics> out;
  const double n = static_cast<double>(records.size());
  for (double k : ks) {
    AxisDiagnostics d;
    d.k = k;
    for (int axis = 0; axis < 2; ++axis) {
      long exceed = 0;
      for (const auto& r : records) {
        if (std::abs(r.error(axis)) > k * r.sigma(axis)) ++exceed;
      }
      d.exceedance[axis] = static_cast<double>(exceed) / n;
      d.coverage[axis] = 1.0 - d.exceedance[axis];
    }
    out.push_back(d);
  }
  return out;
}

RunEvaluation evaluate_estimates(std::span<const EpochEstimate> estimates, int es_samples,
                                 std::uint64_t es_seed) {
  if (estimates.empty()) throw ValidationError("evaluation: empty run");
  RunEvaluation ev;
  std::vector<double> herr;
  double nll_sum = 0.0, es_sum = 0.0;
  for (const auto& est : estimates) {
    EpochRecord r;
    r.epoch_index = est.epoch_index;
    r.time = est.time;
    r.error = est.mean - est.truth;
    r.covariance = est.covariance;
    r.sigma = est.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
    EnPredictive pred{est.mean, est.covariance, est.truth};
    r.nll = nll_eval(pred);
    r.es = es_eval(pred, es_samples,
                   derive_seed(es_seed, static_cast<std::uint64_t>(est.epoch_index)));
    nll_sum += r.nll;
    es_sum += r.es;
    herr.push_back(r.horizontal_error());
    ev.records.push_back(r);
  }
  const double n = static_cast<double>(estimates.size());
  ev.horizontal = horizontal_errors(herr);
  ev.mean_nll = nll_sum / n;
  ev.mean_es = es_sum / n;
  const std::array<double, 2> ks{1.0, 3.0};
  ev.diagnostics = credibility_diagnostics(ev.records, ks);
  return ev;
}

Eigen::VectorXd normalized_weights(const Eigen::VectorXd& weights) {
  const double sum = weights.sum();
  if (!(sum > 0.0) || !std::isfinite(sum)) {
    throw ValidationError("normalized weights: weights must have a positive finite sum");
  }
  return weights / sum;
}

namespace {

SingleDifference differences(const std::vector<double>& eps, const std::vector<int>& slot,
                             const std::vector<double>& cn0) {
  const std::size_t n = eps.size();
  SingleDifference sd;
  sd.error.assign(n, 0.0);
  sd.is_reference.assign(n, 0);
  sd.no_reference.assign(n, 0);
  for (int c = 0; c < kNumClockSlots; ++c) {
    int ref = -1, count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (slot[i] != c) continue;
      ++count;
      if (ref < 0 || cn0[i] > cn0[ref]) ref = static_cast<int>(i);
    }
    if (count == 0) continue;
    if (count == 1) {
      sd.no_reference[ref] = 1;
      continue;
    }
    sd.is_reference[ref] = 1;
    for (std::size_t i = 0; i < n; ++i) {
      if (slot[i] == c && static_cast<int>(i) != ref) sd.error[i] = eps[i] - eps[ref];
    }
  }
  return sd;
}

}  // namespace

SingleDifference single_diff_errors(const EpochObservations& epoch, const EnuPoint& truth,
                                    const ClockBiases& clock, const LocalFrame& frame) {
  std::vector<double> eps, cn0;
  std::vector<int> slot;
  for (const auto& obs : epoch.observations) {
    const RangeFactor f = make_range_factor(obs, frame);
    EpochVector x;
    x << truth.vec(), clock[0], clock[1], clock[2], clock[3];
    eps.push_back(f.residual(x));
    slot.push_back(f.clock_slot);
    cn0.push_back(obs.cn0);
  }
  return differences(eps, slot, cn0);
}

SingleDifference single_diff_errors(const PreparedEpoch& epoch, const Eigen::Vector3d& truth,
                                    const ClockBiases& clock) {
  std::vector<double> eps;
  std::vector<int> slot;
  EpochVector x;
  x << truth, clock[0], clock[1], clock[2], clock[3];
  for (const auto& f : epoch.factors) {
    eps.push_back(f.residual(x));
    slot.push_back(f.clock_slot);
  }
  return differences(eps, slot, epoch.cn0);
}

std::vector<SatelliteRecord> satellite_diagnostics(const PreparedEpoch& epoch,
                                                   const EpochEstimate& estimate) {
  const Eigen::VectorXd w = estimate.information.cwiseMax(0.0).cwiseSqrt();
  const Eigen::VectorXd wbar = normalized_weights(w);
  // Fall back to the estimated clock when the simulator clock is absent; the
  // differencing cancels it either way.
  ClockBiases clock;
  for (int c = 0; c < kNumClockSlots; ++c) clock[c] = estimate.state(3 + c);
  if (epoch.truth_clock) clock = *epoch.truth_clock;
  const Eigen::Vector3d pos =
      epoch.truth_position ? *epoch.truth_position : Eigen::Vector3d(estimate.state.head<3>());
  const SingleDifference sd = single_diff_errors(epoch, pos, clock);

  std::vector<SatelliteRecord> out;
  for (int i = 0; i < epoch.size(); ++i) {
    SatelliteRecord r;
    r.epoch_index = epoch.epoch_index;
    r.sat_id = epoch.sat_ids[i];
    r.azimuth_deg = epoch.azimuth[i] / kDegToRad;
    r.elevation_deg = epoch.elevation[i] / kDegToRad;
    r.weight = w(i);
    r.normalized_weight = wbar(i);
    r.sd_error = sd.error[i];
    r.wls_residual = epoch.raw_features[i](3);
    r.reference = sd.is_reference[i] != 0;
    r.no_reference = sd.no_reference[i] != 0;
    r.contamination = std::isnan(epoch.contamination[i]) ? 0.0 : epoch.contamination[i];
    out.push_back(std::move(r));
  }
  return out;
}

WeightSplit contamination_weight_split(const PreparedRun& run,
                                       std::span<const EpochEstimate> estimates,
                                       double threshold) {
  WeightSplit s;
  double clean = 0.0, dirty = 0.0;
  for (std::size_t k = 0; k < estimates.size(); ++k) {
    const PreparedEpoch& e = run.epochs[k];
    const Eigen::VectorXd wbar = normalized_weights(estimates[k].information.cwiseSqrt());
    for (int i = 0; i < e.size(); ++i) {
      if (e.contamination[i] > threshold) {
        dirty += wbar(i);
        ++s.contaminated_count;
      } else {
        clean += wbar(i);
        ++s.clean_count;
      }
    }
  }
  if (s.clean_count) s.clean = clean / s.clean_count;
  if (s.contaminated_count) s.contaminated = dirty / s.contaminated_count;
  return s;
}

HdopSplit hdop_split(const PreparedRun& run, std::span<const EpochEstimate> estimates,
                     double threshold) {
  HdopSplit s;
  double c = 0.0, k = 0.0;
  for (std::size_t j = 0; j < estimates.size(); ++j) {
    const auto& cont = run.epochs[j].contamination;
    const bool dirty =
        std::any_of(cont.begin(), cont.end(), [&](double v) { return v > threshold; });
    if (!std::isfinite(estimates[j].hdop)) continue;
    if (dirty) {
      c += estimates[j].hdop;
      ++s.contaminated_count;
    } else {
      k += estimates[j].hdop;
      ++s.clean_count;
    }
  }
  if (s.contaminated_count) s.contaminated_epochs = c / s.contaminated_count;
  if (s.clean_count) s.clean_epochs = k / s.clean_count;
  return s;
}

MethodReport evaluate_method(const std::string& name, const PreparedRun& run,
                             const InformationFn& weighting, const EvalOptions& options,
                             std::vector<EpochEstimate>* estimates) {
  std::vector<EpochEstimate> est =
      estimate_run(run, weighting, options.solver, options.window_stride);
  MethodReport r;
  r.method = name;
  r.evaluation = evaluate_estimates(est, options.es_samples, options.es_seed);
  r.weights = contamination_weight_split(run, est);
  r.hdop = hdop_split(run, est);
  for (const auto& e : est) r.nonconverged_epochs += e.converged ? 0 : 1;
  if (estimates) *estimates = std::move(est);
  return r;
}

}  // namespace cdfgo
