#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "cdfgo/observation_model.hpp"

namespace cdfgo {

inline constexpr int kWindowLength = 5;

// Stacked residual vector f(x) over a window, its Jacobian, and the
// Jacobian's vector-Jacobian product needed to differentiate through
// Gauss-Newton iterations.
class ResidualModel {
 public:
  virtual ~ResidualModel() = default;

  virtual int num_factors() const = 0;
  virtual int state_dim() const = 0;
  virtual int num_epochs() const = 0;
  // Index of the East coordinate of `epoch` in the stacked state; North follows.
  virtual int east_index(int epoch) const = 0;
  // Epoch that factor i belongs to.
  virtual int factor_epoch(int factor) const = 0;

  virtual void residuals(const Eigen::VectorXd& x, Eigen::VectorXd& r) const = 0;
  virtual void linearize(const Eigen::VectorXd& x, Eigen::VectorXd& r,
                         Eigen::MatrixXd& jac) const = 0;
  // x_bar += sum_ij jac_bar(i, j) * d jac(i, j) / d x
  virtual void jacobian_vjp(const Eigen::VectorXd& x, const Eigen::MatrixXd& jac_bar,
                            Eigen::VectorXd& x_bar) const = 0;
  // Constant diagonal information added to the normal matrix.
  virtual Eigen::VectorXd prior_information() const {
    return Eigen::VectorXd::Zero(state_dim());
  }
};

// f(x) = b - A x, treated as a single epoch whose East/North are x(0), x(1).
class LinearResidualModel final : public ResidualModel {
 public:
  LinearResidualModel(Eigen::MatrixXd a, Eigen::VectorXd b);

  int num_factors() const override { return static_cast<int>(a_.rows()); }
  int state_dim() const override { return static_cast<int>(a_.cols()); }
  int num_epochs() const override { return 1; }
  int east_index(int) const override { return 0; }
  int factor_epoch(int) const override { return 0; }
  void residuals(const Eigen::VectorXd& x, Eigen::VectorXd& r) const override;
  void linearize(const Eigen::VectorXd& x, Eigen::VectorXd& r,
                 Eigen::MatrixXd& jac) const override;
  void jacobian_vjp(const Eigen::VectorXd&, const Eigen::MatrixXd&,
                    Eigen::VectorXd&) const override {}

 private:
  Eigen::MatrixXd a_;
  Eigen::VectorXd b_;
};

// Pseudorange factors of consecutive epochs; each epoch owns a 7-dim block
// [E, N, U, b_G, b_E, b_R, b_C] and no factor couples two epochs. Clock
// slots with no factor in an epoch get a weak prior.
class PseudorangeWindowModel final : public ResidualModel {
 public:
  PseudorangeWindowModel() = default;
  PseudorangeWindowModel(std::vector<std::vector<RangeFactor>> per_epoch,
                         double unobserved_clock_prior = 1e-6);

  int num_factors() const override { return static_cast<int>(factors_.size()); }
  int state_dim() const override { return kEpochStateDim * num_epochs_; }
  int num_epochs() const override { return num_epochs_; }
  int east_index(int epoch) const override { return kEpochStateDim * epoch; }
  int factor_epoch(int factor) const override { return epoch_of_[factor]; }
  void residuals(const Eigen::VectorXd& x, Eigen::VectorXd& r) const override;
  void linearize(const Eigen::VectorXd& x, Eigen::VectorXd& r,
                 Eigen::MatrixXd& jac) const override;
  void jacobian_vjp(const Eigen::VectorXd& x, const Eigen::MatrixXd& jac_bar,
                    Eigen::VectorXd& x_bar) const override;
  Eigen::VectorXd prior_information() const override { return prior_; }

  const std::vector<RangeFactor>& factors() const { return factors_; }
  // Factor index range [begin, end) of an epoch.
  std::pair<int, int> epoch_factor_range(int epoch) const {
    return {epoch_begin_[epoch], epoch_begin_[epoch + 1]};
  }

 private:
  std::vector<RangeFactor> factors_;
  std::vector<int> epoch_of_;
  std::vector<int> epoch_begin_{0};
  int num_epochs_ = 0;
  Eigen::VectorXd prior_;
};

struct FactorRef {
  int epoch = 0;        // position within the window
  int observation = 0;  // index into that epoch's observation list
  std::string sat_id;
};

struct WindowProblem {
  PseudorangeWindowModel model;
  std::vector<FactorRef> factor_index;
  Eigen::VectorXd information;  // Omega_i >= 0 per factor

  int state_dim() const { return model.state_dim(); }
  int num_factors() const { return model.num_factors(); }
};

// Stacks `epochs` into one window with canonical factor order (epoch, then
// constellation, then sat_id). `information` is given in that canonical
// order; pass an empty vector to get unit information.
WindowProblem assemble_window(const std::vector<EpochObservations>& epochs,
                              const Eigen::VectorXd& information, const LocalFrame& frame,
                              int window_length = kWindowLength);

struct SolverOptions {
  int max_iterations = 10;           // also the unroll depth
  double tolerance = 1e-4;           // m, on the applied step
  double regularization = 1e-6;      // added to H only when its Cholesky fails
  double covariance_jitter = 1e-9;   // added to H before inverting for the covariance
  double divergence_ratio = 10.0;    // cost increase that triggers step halving
  int max_step_halvings = 4;
  // Test hook: perturb the Jacobians used by `backward` so that gradient
  // audits can be shown to fail.
  bool corrupt_backward_jacobian = false;
};

struct EnMarginal {
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  Eigen::Matrix2d covariance = Eigen::Matrix2d::Identity();
};

// One unrolled Gauss-Newton iteration as needed by the reverse pass.
struct GaussNewtonStep {
  Eigen::VectorXd x;        // linearization point
  Eigen::VectorXd r;        // residuals at x
  Eigen::MatrixXd jac;      // d r / d x at x
  Eigen::LLT<Eigen::MatrixXd> normal;  // factorized (regularized) H
  Eigen::VectorXd delta;    // -H^-1 g
  double step_scale = 1.0;  // applied step = step_scale * delta
};

struct SolverOutput {
  Eigen::VectorXd state;
  Eigen::MatrixXd covariance;
  std::vector<EnMarginal> per_epoch_en;
  bool converged = false;
  int iterations = 0;

  // Reverse-mode tape.
  std::vector<GaussNewtonStep> steps;
  Eigen::MatrixXd final_jacobian;
};

SolverOutput gauss_newton_solve(const ResidualModel& model, const Eigen::VectorXd& information,
                                const Eigen::VectorXd& init, const SolverOptions& options = {});

SolverOutput gauss_newton_solve(const WindowProblem& problem, const Eigen::VectorXd& init,
                                const SolverOptions& options = {});

struct SolverGradients {
  Eigen::VectorXd d_information;  // dL / dOmega_i
  bool forward_converged = true;
};

// Reverse pass through the unrolled iterations and the Laplace covariance
// for upstream gradients on the full state and full covariance.
SolverGradients backward_full(const ResidualModel& model, const Eigen::VectorXd& information,
                              const SolverOutput& output, const Eigen::VectorXd& d_state,
                              const Eigen::MatrixXd& d_covariance,
                              const SolverOptions& options = {});

// Same, for upstream gradients on the per-epoch East-North marginals.
// `d_en_cov` uses the symmetric-matrix convention dL = sum_ij G_ij dSigma_ij.
SolverGradients backward(const ResidualModel& model, const Eigen::VectorXd& information,
                         const SolverOutput& output, std::span<const Eigen::Vector2d> d_en_mean,
                         std::span<const Eigen::Matrix2d> d_en_cov,
                         const SolverOptions& options = {});

// sqrt(trace) of the EN block of (G^T W G)^-1 for one epoch, with W the
// epoch's information rescaled to unit mean over its non-zero entries and
// G the pseudorange Jacobian restricted to position plus the clock slots
// that carry weight. A vertical/clock block that is not separately
// observable is marginalized with a pseudo-inverse.
double weighted_hdop(const PseudorangeWindowModel& model, const Eigen::VectorXd& information,
                     const Eigen::VectorXd& at_state, int epoch);

}  // namespace cdfgo
