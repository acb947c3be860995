#include "cdfgo/diff_solver.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include <Eigen/Eigenvalues>

#include "cdfgo/error.hpp"
#include "linalg.hpp"

namespace cdfgo {

// ---------------------------------------------------------------- models

LinearResidualModel::LinearResidualModel(Eigen::MatrixXd a, Eigen::VectorXd b)
    : a_(std::move(a)), b_(std::move(b)) {
  if (a_.rows() != b_.size()) throw ValidationError("linear model: A and b row mismatch");
  if (a_.cols() < 2) throw ValidationError("linear model: needs at least 2 state columns");
}

void LinearResidualModel::residuals(const Eigen::VectorXd& x, Eigen::VectorXd& r) const {
  r = b_ - a_ * x;
}

void LinearResidualModel::linearize(const Eigen::VectorXd& x, Eigen::VectorXd& r,
                                    Eigen::MatrixXd& jac) const {
  residuals(x, r);
  jac = -a_;
}

PseudorangeWindowModel::PseudorangeWindowModel(std::vector<std::vector<RangeFactor>> per_epoch,
                                               double unobserved_clock_prior)
    : num_epochs_(static_cast<int>(per_epoch.size())) {
  prior_ = Eigen::VectorXd::Zero(kEpochStateDim * num_epochs_);
  for (int e = 0; e < num_epochs_; ++e) {
    std::array<bool, kNumClockSlots> observed{};
    for (const auto& f : per_epoch[e]) {
      factors_.push_back(f);
      epoch_of_.push_back(e);
      observed[f.clock_slot] = true;
    }
    epoch_begin_.push_back(static_cast<int>(factors_.size()));
    for (int c = 0; c < kNumClockSlots; ++c) {
      if (!observed[c]) prior_(kEpochStateDim * e + 3 + c) = unobserved_clock_prior;
    }
  }
}

void PseudorangeWindowModel::residuals(const Eigen::VectorXd& x, Eigen::VectorXd& r) const {
  const int m = num_factors();
  r.resize(m);
  for (int i = 0; i < m; ++i) {
    const EpochVector xe = x.segment<kEpochStateDim>(kEpochStateDim * epoch_of_[i]);
    r(i) = factors_[i].residual(xe);
  }
}

void PseudorangeWindowModel::linearize(const Eigen::VectorXd& x, Eigen::VectorXd& r,
                                       Eigen::MatrixXd& jac) const {
  const int m = num_factors();
  r.resize(m);
  jac.setZero(m, state_dim());
  for (int i = 0; i < m; ++i) {
    const int off = kEpochStateDim * epoch_of_[i];
    const EpochVector xe = x.segment<kEpochStateDim>(off);
    r(i) = factors_[i].residual(xe);
    jac.block<1, kEpochStateDim>(i, off) = factors_[i].jacobian(xe);
  }
}

void PseudorangeWindowModel::jacobian_vjp(const Eigen::VectorXd& x,
                                          const Eigen::MatrixXd& jac_bar,
                                          Eigen::VectorXd& x_bar) const {
  // The position block of row i is -(p - s)/|p - s|; its derivative with
  // respect to p is -(I - l l^T)/rho. Clock entries are constant.
  for (int i = 0; i < num_factors(); ++i) {
    const int off = kEpochStateDim * epoch_of_[i];
    const Eigen::Vector3d d = x.segment<3>(off) - factors_[i].sat_enu;
    const double rho = d.norm();
    const Eigen::Vector3d l = d / rho;
    const Eigen::Vector3d jb = jac_bar.block<1, 3>(i, off).transpose();
    x_bar.segment<3>(off) -= (jb - l * l.dot(jb)) / rho;
  }
}

WindowProblem assemble_window(const std::vector<EpochObservations>& epochs,
                              const Eigen::VectorXd& information, const LocalFrame& frame,
                              int window_length) {
  if (static_cast<int>(epochs.size()) != window_length) {
    throw ValidationError("assemble_window: expected " + std::to_string(window_length) +
                          " epochs, got " + std::to_string(epochs.size()));
  }
  WindowProblem problem;
  std::vector<std::vector<RangeFactor>> per_epoch;
  for (int e = 0; e < window_length; ++e) {
    validate_epoch(epochs[e]);
    std::vector<RangeFactor> factors;
    for (int idx : canonical_order(epochs[e])) {
      const auto& obs = epochs[e].observations[idx];
      factors.push_back(make_range_factor(obs, frame));
      problem.factor_index.push_back({e, idx, obs.sat_id});
    }
    per_epoch.push_back(std::move(factors));
  }
  problem.model = PseudorangeWindowModel(std::move(per_epoch));
  const int m = problem.model.num_factors();
  if (information.size() == 0) {
    problem.information = Eigen::VectorXd::Ones(m);
  } else if (information.size() != m) {
    throw ValidationError("assemble_window: information has " +
                          std::to_string(information.size()) + " entries for " +
                          std::to_string(m) + " factors");
  } else {
    problem.information = information;
  }
  return problem;
}

// ---------------------------------------------------------------- forward

namespace {

double weighted_cost(const Eigen::VectorXd& r, const Eigen::VectorXd& info) {
  return 0.5 * (r.array().square() * info.array()).sum();
}

void check_information(const ResidualModel& model, const Eigen::VectorXd& information) {
  if (information.size() != model.num_factors()) {
    throw ValidationError("solver: information length does not match factor count");
  }
  std::vector<bool> has_weight(model.num_epochs(), false);
  for (int i = 0; i < information.size(); ++i) {
    if (!(information(i) >= 0.0) || !std::isfinite(information(i))) {
      throw ValidationError("solver: information must be finite and >= 0");
    }
    if (information(i) > 0.0) has_weight[model.factor_epoch(i)] = true;
  }
  for (int e = 0; e < model.num_epochs(); ++e) {
    if (!has_weight[e]) {
      throw ValidationError("solver: epoch " + std::to_string(e) + " has no positive information");
    }
  }
}

Eigen::LLT<Eigen::MatrixXd> factorize_normal(Eigen::MatrixXd h, double regularization) {
  Eigen::LLT<Eigen::MatrixXd> llt(h);
  if (llt.info() == Eigen::Success) return llt;
  h.diagonal().array() += regularization;
  llt.compute(h);
  if (llt.info() != Eigen::Success) {
    const double cond = detail::symmetric_condition(h);
    throw NumericalError("solver: normal matrix singular beyond regularization (condition " +
                             std::to_string(cond) + ")",
                         cond);
  }
  return llt;
}

}  // namespace

SolverOutput gauss_newton_solve(const ResidualModel& model, const Eigen::VectorXd& information,
                                const Eigen::VectorXd& init, const SolverOptions& options) {
  check_information(model, information);
  const int n = model.state_dim();
  if (init.size() != n) throw ValidationError("solver: initial state has wrong dimension");
  const Eigen::VectorXd prior = model.prior_information();

  SolverOutput out;
  Eigen::VectorXd x = init;
  Eigen::VectorXd r;
  Eigen::MatrixXd jac;
  Eigen::VectorXd r_trial;

  for (int it = 0; it < options.max_iterations; ++it) {
    GaussNewtonStep step;
    model.linearize(x, r, jac);
    if (!r.allFinite()) throw NumericalError("solver: non-finite residuals");
    const double cost = weighted_cost(r, information);

    Eigen::MatrixXd h = jac.transpose() * information.asDiagonal() * jac;
    h.diagonal() += prior;
    const Eigen::VectorXd g = jac.transpose() * (information.array() * r.array()).matrix();
    step.normal = factorize_normal(std::move(h), options.regularization);
    step.delta = -step.normal.solve(g);

    double scale = 1.0;
    for (int halving = 0; halving < options.max_step_halvings; ++halving) {
      model.residuals(x + scale * step.delta, r_trial);
      const double trial_cost = weighted_cost(r_trial, information);
      if (std::isfinite(trial_cost) &&
          trial_cost <= options.divergence_ratio * std::max(cost, 1e-12)) {
        break;
      }
      scale *= 0.5;
    }
    step.step_scale = scale;
    step.x = x;
    step.r = r;
    step.jac = jac;
    x += scale * step.delta;
    const double step_norm = scale * step.delta.norm();
    out.steps.push_back(std::move(step));
    out.iterations = it + 1;
    if (step_norm < options.tolerance) {
      out.converged = true;
      break;
    }
  }

  model.linearize(x, r, jac);
  if (!r.allFinite()) throw NumericalError("solver: non-finite residuals at solution");
  Eigen::MatrixXd h_hat = jac.transpose() * information.asDiagonal() * jac;
  h_hat.diagonal() += prior;
  h_hat.diagonal().array() += options.covariance_jitter;
  Eigen::LLT<Eigen::MatrixXd> llt(h_hat);
  if (llt.info() != Eigen::Success) {
    const double cond = detail::symmetric_condition(h_hat);
    throw NumericalError("solver: Hessian at solution not positive definite (condition " +
                             std::to_string(cond) + ")",
                         cond);
  }
  Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(n, n));
  out.covariance = 0.5 * (cov + cov.transpose());
  out.state = x;
  out.final_jacobian = jac;

  out.per_epoch_en.resize(model.num_epochs());
  for (int e = 0; e < model.num_epochs(); ++e) {
    const int k = model.east_index(e);
    out.per_epoch_en[e].mean = x.segment<2>(k);
    out.per_epoch_en[e].covariance = out.covariance.block<2, 2>(k, k);
  }
  return out;
}

SolverOutput gauss_newton_solve(const WindowProblem& problem, const Eigen::VectorXd& init,
                                const SolverOptions& options) {
  return gauss_newton_solve(problem.model, problem.information, init, options);
}

// ---------------------------------------------------------------- reverse

SolverGradients backward_full(const ResidualModel& model, const Eigen::VectorXd& information,
                              const SolverOutput& output, const Eigen::VectorXd& d_state,
                              const Eigen::MatrixXd& d_covariance,
                              const SolverOptions& options) {
  const int m = model.num_factors();
  const double corruption = options.corrupt_backward_jacobian ? 1.05 : 1.0;

  SolverGradients grads;
  grads.forward_converged = output.converged;
  grads.d_information = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd x_bar = d_state;

  // Laplace covariance: Sigma = H^-1, H = J^T Omega J + const.
  if (d_covariance.size() != 0 && !d_covariance.isZero(0.0)) {
    const Eigen::MatrixXd& sigma = output.covariance;
    const Eigen::MatrixXd h_bar = -sigma * d_covariance * sigma;
    const Eigen::MatrixXd jac = corruption * output.final_jacobian;
    const Eigen::MatrixXd jh = jac * h_bar;
    grads.d_information += (jh.array() * jac.array()).rowwise().sum().matrix();
    const Eigen::MatrixXd jac_bar =
        information.asDiagonal() * (jh + jac * h_bar.transpose());
    model.jacobian_vjp(output.state, jac_bar, x_bar);
  }

  // Unrolled iterations: x_{k+1} = x_k + s_k delta_k, delta_k = -H_k^-1 g_k.
  for (auto it = output.steps.rbegin(); it != output.steps.rend(); ++it) {
    const GaussNewtonStep& s = *it;
    const Eigen::VectorXd delta_bar = s.step_scale * x_bar;
    const Eigen::VectorXd v = s.normal.solve(delta_bar);
    const Eigen::MatrixXd jac = corruption * s.jac;
    const Eigen::VectorXd jv = jac * v;
    const Eigen::VectorXd jd = jac * s.delta;

    grads.d_information.array() -= jv.array() * (s.r.array() + jd.array());

    const Eigen::VectorXd w_jv = information.cwiseProduct(jv);
    Eigen::MatrixXd jac_bar = -(information.cwiseProduct(s.r) * v.transpose() +
                                w_jv * s.delta.transpose() +
                                information.cwiseProduct(jd) * v.transpose());
    x_bar -= jac.transpose() * w_jv;
    model.jacobian_vjp(s.x, jac_bar, x_bar);
  }
  return grads;
}

SolverGradients backward(const ResidualModel& model, const Eigen::VectorXd& information,
                         const SolverOutput& output, std::span<const Eigen::Vector2d> d_en_mean,
                         std::span<const Eigen::Matrix2d> d_en_cov,
                         const SolverOptions& options) {
  const int n = model.state_dim();
  const int epochs = model.num_epochs();
  if (!d_en_mean.empty() && static_cast<int>(d_en_mean.size()) != epochs) {
    throw ValidationError("solver backward: d_en_mean size mismatch");
  }
  if (!d_en_cov.empty() && static_cast<int>(d_en_cov.size()) != epochs) {
    throw ValidationError("solver backward: d_en_cov size mismatch");
  }
  Eigen::VectorXd d_state = Eigen::VectorXd::Zero(n);
  Eigen::MatrixXd d_cov = Eigen::MatrixXd::Zero(n, n);
  for (int e = 0; e < epochs; ++e) {
    const int k = model.east_index(e);
    if (!d_en_mean.empty()) d_state.segment<2>(k) += d_en_mean[e];
    if (!d_en_cov.empty()) d_cov.block<2, 2>(k, k) += d_en_cov[e];
  }
  return backward_full(model, information, output, d_state, d_cov, options);
}

// ---------------------------------------------------------------- DOP

double weighted_hdop(const PseudorangeWindowModel& model, const Eigen::VectorXd& information,
                     const Eigen::VectorXd& at_state, int epoch) {
  if (epoch < 0 || epoch >= model.num_epochs()) throw ValidationError("weighted_hdop: bad epoch");
  const auto [begin, end] = model.epoch_factor_range(epoch);
  const EpochVector xe = at_state.segment<kEpochStateDim>(kEpochStateDim * epoch);

  double total = 0.0;
  int positive = 0;
  std::array<double, kNumClockSlots> slot_weight{};
  for (int i = begin; i < end; ++i) {
    if (information(i) > 0.0) {
      total += information(i);
      ++positive;
      slot_weight[model.factors()[i].clock_slot] += information(i);
    }
  }
  if (positive == 0) throw GeometryError("weighted_hdop: epoch has no weighted satellites");
  const double scale = positive / total;

  std::vector<int> columns = {0, 1, 2};
  for (int c = 0; c < kNumClockSlots; ++c) {
    if (slot_weight[c] > 0.0) columns.push_back(3 + c);
  }
  const int k = static_cast<int>(columns.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(k, k);
  for (int i = begin; i < end; ++i) {
    const double w = information(i) * scale;
    if (w <= 0.0) continue;
    const EpochJacobianRow row = model.factors()[i].jacobian(xe);
    Eigen::VectorXd g(k);
    for (int c = 0; c < k; ++c) g(c) = row(columns[c]);
    a.noalias() += w * g * g.transpose();
  }

  const Eigen::Matrix2d a_hh = a.topLeftCorner<2, 2>();
  const Eigen::MatrixXd a_hr = a.topRightCorner(2, k - 2);
  const Eigen::MatrixXd a_rr = a.bottomRightCorner(k - 2, k - 2);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a_rr);
  const Eigen::VectorXd ev = es.eigenvalues();
  const double cutoff = 1e-10 * std::max(ev.cwiseAbs().maxCoeff(), 1.0);
  Eigen::VectorXd inv_ev = Eigen::VectorXd::Zero(ev.size());
  for (int i = 0; i < ev.size(); ++i) {
    if (ev(i) > cutoff) inv_ev(i) = 1.0 / ev(i);
  }
  const Eigen::MatrixXd a_rr_pinv =
      es.eigenvectors() * inv_ev.asDiagonal() * es.eigenvectors().transpose();
  const Eigen::Matrix2d info_h = a_hh - a_hr * a_rr_pinv * a_hr.transpose();
  const double det = info_h.determinant();
  if (!(det > 1e-12 * std::max(info_h.squaredNorm(), 1e-300))) {
    throw GeometryError("weighted_hdop: horizontal geometry is singular");
  }
  const Eigen::Matrix2d q = info_h.inverse();
  return std::sqrt(q.trace());
}

}  // namespace cdfgo
