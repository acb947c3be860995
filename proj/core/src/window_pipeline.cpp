#include "cdfgo/window_pipeline.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "cdfgo/error.hpp"

namespace cdfgo {

bool PreparedRun::has_truth() const {
  for (const auto& e : epochs) {
    if (!e.truth_position) return false;
  }
  return !epochs.empty();
}

namespace {

// Clock guess per slot from the mean range residual at `position`.
EpochState initial_guess(const EpochObservations& epoch, const Eigen::Vector3d& position,
                         const LocalFrame& frame) {
  EpochState s;
  s.position = EnuPoint::from(position);
  std::array<double, kNumClockSlots> sum{};
  std::array<int, kNumClockSlots> count{};
  for (const auto& obs : epoch.observations) {
    const RangeFactor f = make_range_factor(obs, frame);
    const double range = (position - f.sat_enu).norm();
    sum[f.clock_slot] += obs.pseudorange - range - obs.correction;
    ++count[f.clock_slot];
  }
  for (int c = 0; c < kNumClockSlots; ++c) {
    s.clock_biases[c] = count[c] > 0 ? sum[c] / count[c] : 0.0;
  }
  return s;
}

}  // namespace

PreparedRun prepare_run(const std::vector<EpochObservations>& epochs, const LocalFrame& frame,
                        const WeightScheme& residual_scheme) {
  PreparedRun run;
  run.frame = frame;
  run.epochs.reserve(epochs.size());
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  for (const auto& epoch : epochs) {
    validate_epoch(epoch);
    // Two passes so that the elevation used by the scheme is seen from a
    // receiver position close to the solution.
    WlsSolution wls = solve_wls(epoch, residual_scheme, initial_guess(epoch, position, frame), frame);
    wls = solve_wls(epoch, residual_scheme, wls.state, frame);
    position = wls.state.position.vec();

    PreparedEpoch p;
    p.epoch_index = epoch.epoch_index;
    p.time = epoch.time;
    p.order = canonical_order(epoch);
    p.raw_features = raw_features(epoch, wls, frame);
    p.wls_state = wls.state.to_vector();
    p.wls_converged = wls.converged;
    for (std::size_t k = 0; k < p.order.size(); ++k) {
      const auto& obs = epoch.observations[p.order[k]];
      const RangeFactor f = make_range_factor(obs, frame);
      const SkyDirection sky = sky_direction_enu(f.sat_enu, position);
      p.sat_ids.push_back(obs.sat_id);
      p.factors.push_back(f);
      p.elevation.push_back(sky.elevation);
      p.azimuth.push_back(sky.azimuth);
      p.cn0.push_back(obs.cn0);
      p.contamination.push_back(obs.truth_contamination
                                    ? *obs.truth_contamination
                                    : std::numeric_limits<double>::quiet_NaN());
    }
    if (epoch.truth_position) p.truth_position = epoch.truth_position->vec();
    p.truth_clock = epoch.truth_clock;
    run.epochs.push_back(std::move(p));
  }
  return run;
}

std::vector<int> make_windows(int num_epochs, int length, int stride) {
  if (length < 1 || stride < 1) throw ValidationError("windows: length and stride must be >= 1");
  if (num_epochs < length) {
    throw ValidationError("windows: run has " + std::to_string(num_epochs) +
                          " epochs, fewer than the window length " + std::to_string(length));
  }
  std::vector<int> starts;
  for (int s = 0; s + length <= num_epochs; s += stride) starts.push_back(s);
  return starts;
}

std::vector<int> make_covering_windows(int num_epochs, int length, int stride) {
  std::vector<int> starts = make_windows(num_epochs, length, stride);
  if (starts.back() + length < num_epochs) starts.push_back(num_epochs - length);
  return starts;
}

PseudorangeWindowModel window_model(const PreparedRun& run, int start, int length) {
  if (start < 0 || start + length > run.size()) throw ValidationError("window out of range");
  std::vector<std::vector<RangeFactor>> per_epoch;
  for (int e = start; e < start + length; ++e) per_epoch.push_back(run.epochs[e].factors);
  return PseudorangeWindowModel(std::move(per_epoch));
}

Eigen::VectorXd window_initial_state(const PreparedRun& run, int start, int length) {
  Eigen::VectorXd x(kEpochStateDim * length);
  for (int e = 0; e < length; ++e) {
    x.segment<kEpochStateDim>(kEpochStateDim * e) = run.epochs[start + e].wls_state;
  }
  return x;
}

Eigen::VectorXd scheme_information(const PreparedEpoch& epoch, const WeightScheme& scheme) {
  Eigen::VectorXd info(epoch.size());
  for (int i = 0; i < epoch.size(); ++i) {
    info(i) = 1.0 / scheme_variance(scheme, epoch.elevation[i], epoch.cn0[i]);
  }
  return info;
}

SatelliteFeatures epoch_features(const PreparedEpoch& epoch, const WgnModel& model) {
  return normalize_features(epoch.raw_features, model.stats());
}

std::vector<FeatureRow> collect_features(const PreparedRun& run, int first, int last) {
  std::vector<FeatureRow> rows;
  for (int e = first; e < last; ++e) {
    rows.insert(rows.end(), run.epochs[e].raw_features.begin(), run.epochs[e].raw_features.end());
  }
  return rows;
}

WindowResult window_loss_for_information(const PreparedRun& run, int start,
                                         const Eigen::VectorXd& information,
                                         const WindowSettings& settings, std::uint64_t seed,
                                         bool want_gradient) {
  const int length = settings.length;
  for (int e = start; e < start + length; ++e) {
    if (!run.epochs[e].truth_position) {
      throw ValidationError("window loss: epoch " + std::to_string(run.epochs[e].epoch_index) +
                            " has no ground truth");
    }
  }
  const PseudorangeWindowModel model = window_model(run, start, length);
  WindowResult out;
  out.information = information;
  out.solve = gauss_newton_solve(model, information, window_initial_state(run, start, length),
                                 settings.solver);
  out.converged = out.solve.converged;

  std::vector<Eigen::Vector2d> d_mean(length);
  std::vector<Eigen::Matrix2d> d_cov(length);
  const double inv_len = 1.0 / length;
  for (int e = 0; e < length; ++e) {
    EnPredictive pred;
    pred.mean = out.solve.per_epoch_en[e].mean;
    pred.covariance = out.solve.per_epoch_en[e].covariance;
    pred.ground_truth = run.epochs[start + e].truth_position->head<2>();
    const LossValue lv = objective_loss(settings.objective, pred, settings.loss,
                                        derive_seed(seed, static_cast<std::uint64_t>(e)));
    out.loss += inv_len * lv.value;
    d_mean[e] = inv_len * lv.d_mean;
    d_cov[e] = inv_len * lv.d_cov;
    out.epoch_losses.push_back(lv);
  }
  if (want_gradient && std::isfinite(out.loss)) {
    const SolverGradients g = backward(model, information, out.solve, d_mean, d_cov,
                                       settings.solver);
    out.d_information = g.d_information;
  }
  return out;
}

WindowResult window_loss(const WgnModel& model, const PreparedRun& run, int start,
                         const WindowSettings& settings, std::uint64_t seed,
                         WgnGradients* grads) {
  const int length = settings.length;
  if (start < 0 || start + length > run.size()) throw ValidationError("window out of range");
  std::vector<WgnTape> tapes(length);
  std::vector<int> offset(length + 1, 0);
  for (int e = 0; e < length; ++e) offset[e + 1] = offset[e] + run.epochs[start + e].size();
  Eigen::VectorXd information(offset[length]);
  for (int e = 0; e < length; ++e) {
    const FactorWeights fw =
        model.forward(epoch_features(run.epochs[start + e], model), grads ? &tapes[e] : nullptr);
    information.segment(offset[e], fw.information.size()) = fw.information;
  }
  // a NaN weight is a diverged network, not bad input
  if (!information.allFinite()) throw NumericalError("wgn produced non-finite weights");
  WindowResult out =
      window_loss_for_information(run, start, information, settings, seed, grads != nullptr);
  if (grads && out.d_information.size() == information.size() && out.d_information.allFinite()) {
    for (int e = 0; e < length; ++e) {
      model.backward(tapes[e], out.d_information.segment(offset[e], offset[e + 1] - offset[e]),
                     *grads);
    }
  }
  return out;
}

}  // namespace cdfgo
