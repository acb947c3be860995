#include <gtest/gtest.h>

#include <random>

#include <Eigen/Dense>

#include "cdfgo/diff_solver.hpp"
#include "cdfgo/error.hpp"
#include "cdfgo/gradcheck.hpp"
#include "support.hpp"

using namespace cdfgo;

namespace {

struct LinearCase {
  Eigen::MatrixXd a;
  Eigen::VectorXd b;
  Eigen::VectorXd omega;
};

LinearCase random_linear(std::mt19937_64& rng, int m, int n) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> w(0.2, 3.0);
  LinearCase c{Eigen::MatrixXd(m, n), Eigen::VectorXd(m), Eigen::VectorXd(m)};
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) c.a(i, j) = g(rng);
    c.b(i) = 10.0 * g(rng);
    c.omega(i) = w(rng);
  }
  return c;
}

// 8 satellites per epoch, first five epochs of an open-sky run.
std::vector<EpochObservations> eight_sat_epochs(std::uint64_t seed, double sigma0 = 0.0) {
  auto sim = generate(test::open_sky(5, seed, sigma0));
  for (auto& ep : sim.epochs) {
    std::vector<SatelliteObservation> keep;
    for (const auto& o : ep.observations) {
      if (o.constellation != Constellation::Glonass && keep.size() < 8) keep.push_back(o);
    }
    ep.observations = keep;
  }
  return sim.epochs;
}

RangeFactor sat_factor(double el_deg, double az_deg, int slot = 0) {
  const double el = el_deg * kDegToRad, az = az_deg * kDegToRad;
  RangeFactor f;
  f.sat_enu = 2.0e7 * Eigen::Vector3d(std::cos(el) * std::sin(az), std::cos(el) * std::cos(az),
                                      std::sin(el));
  f.clock_slot = slot;
  f.observed = 2.0e7;
  return f;
}

}  // namespace

TEST(AssembleWindow, CountsAndOrdering) {
  const auto epochs = eight_sat_epochs(3);
  const LocalFrame frame(preset("medium").origin);
  const auto p = assemble_window(epochs, {}, frame);
  EXPECT_EQ(p.num_factors(), 40);
  EXPECT_EQ(p.state_dim(), 35);
  EXPECT_TRUE((p.information.array() == 1.0).all());

  auto shuffled = epochs;
  std::mt19937_64 rng(1);
  for (auto& ep : shuffled) std::shuffle(ep.observations.begin(), ep.observations.end(), rng);
  const auto q = assemble_window(shuffled, {}, frame);
  ASSERT_EQ(q.factor_index.size(), p.factor_index.size());
  for (std::size_t i = 0; i < p.factor_index.size(); ++i) {
    EXPECT_EQ(p.factor_index[i].epoch, q.factor_index[i].epoch);
    EXPECT_EQ(p.factor_index[i].sat_id, q.factor_index[i].sat_id);
    const auto& ref = p.factor_index[i];
    EXPECT_EQ(epochs[ref.epoch].observations[ref.observation].sat_id, ref.sat_id);
    EXPECT_EQ(p.model.factor_epoch(static_cast<int>(i)), ref.epoch);
  }

  auto short_epoch = epochs;
  short_epoch[2].observations.resize(4);
  EXPECT_THROW(assemble_window(short_epoch, {}, frame), ValidationError);
  EXPECT_THROW(assemble_window(epochs, Eigen::VectorXd::Ones(3), frame), ValidationError);
}

TEST(GaussNewton, LinearProblemsMatchClosedForm) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    const auto c = random_linear(rng, 12, 5);
    LinearResidualModel model(c.a, c.b);
    const auto out = gauss_newton_solve(model, c.omega, Eigen::VectorXd::Zero(5));
    const Eigen::MatrixXd h = c.a.transpose() * c.omega.asDiagonal() * c.a;
    const Eigen::VectorXd x = h.inverse() * (c.a.transpose() * c.omega.asDiagonal() * c.b);
    EXPECT_LT((out.state - x).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((out.covariance - h.inverse()).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_TRUE(out.converged);
    EXPECT_LE(out.iterations, 2);
    EXPECT_EQ(out.covariance, out.covariance.transpose());
  }
}

TEST(GaussNewton, NoiselessWindowRecoversTruth) {
  const auto epochs = eight_sat_epochs(4);
  const LocalFrame frame(preset("medium").origin);
  const auto p = assemble_window(epochs, {}, frame);
  Eigen::VectorXd init = Eigen::VectorXd::Zero(p.state_dim());
  const auto out = gauss_newton_solve(p, init);
  ASSERT_EQ(out.per_epoch_en.size(), 5u);
  for (int e = 0; e < 5; ++e) {
    const Eigen::Vector2d truth(epochs[e].truth_position->e, epochs[e].truth_position->n);
    EXPECT_LT((out.per_epoch_en[e].mean - truth).norm(), 1e-3);
    const Eigen::Matrix2d block = out.covariance.block<2, 2>(7 * e, 7 * e);
    EXPECT_EQ(out.per_epoch_en[e].covariance, block);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(block);
    EXPECT_GT(es.eigenvalues().minCoeff(), 1e-12);
  }
  EXPECT_LT((out.covariance - out.covariance.transpose()).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(GaussNewton, CovarianceMatchesDenseInverse) {
  const auto epochs = eight_sat_epochs(6, 1.0);
  const LocalFrame frame(preset("medium").origin);
  Eigen::VectorXd info(40);
  for (int i = 0; i < 40; ++i) info(i) = 0.3 + 0.05 * i;
  const auto p = assemble_window(epochs, info, frame);
  const auto out = gauss_newton_solve(p, Eigen::VectorXd::Zero(35));

  Eigen::VectorXd r;
  Eigen::MatrixXd j;
  p.model.linearize(out.state, r, j);
  Eigen::MatrixXd h = j.transpose() * info.asDiagonal() * j;
  // the unobserved GLONASS slot carries only the weak prior, so the jitter
  // matters there and is part of the reference
  h.diagonal() += p.model.prior_information();
  h.diagonal().array() += SolverOptions{}.covariance_jitter;
  const Eigen::MatrixXd oracle = h.fullPivLu().inverse();
  EXPECT_LT((out.covariance - oracle).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(GaussNewton, InputErrors) {
  LinearResidualModel model(Eigen::MatrixXd::Identity(3, 2), Eigen::VectorXd::Ones(3));
  EXPECT_THROW(gauss_newton_solve(model, Eigen::Vector3d(1, -1, 1), Eigen::Vector2d::Zero()),
               ValidationError);
  EXPECT_THROW(gauss_newton_solve(model, Eigen::Vector3d::Zero(), Eigen::Vector2d::Zero()),
               ValidationError);
  EXPECT_THROW(gauss_newton_solve(model, Eigen::Vector2d::Ones(), Eigen::Vector2d::Zero()),
               ValidationError);
  LinearResidualModel bad(Eigen::MatrixXd::Identity(3, 2),
                          Eigen::Vector3d(1.0, std::nan(""), 1.0));
  EXPECT_THROW(gauss_newton_solve(bad, Eigen::Vector3d::Ones(), Eigen::Vector2d::Zero()),
               NumericalError);
}

TEST(GaussNewton, Deterministic) {
  const auto epochs = eight_sat_epochs(7, 1.5);
  const LocalFrame frame(preset("medium").origin);
  const auto p = assemble_window(epochs, {}, frame);
  const auto a = gauss_newton_solve(p, Eigen::VectorXd::Zero(35));
  const auto b = gauss_newton_solve(p, Eigen::VectorXd::Zero(35));
  EXPECT_EQ(a.state, b.state);
  EXPECT_EQ(a.covariance, b.covariance);
}

TEST(Backward, ScalarVarianceDerivative) {
  // Two independent factors; Sigma_EE = 1 / Omega_0.
  LinearResidualModel model(Eigen::MatrixXd::Identity(2, 2), Eigen::Vector2d(3.0, -1.0));
  for (double w : {5.0, 10.0, 40.0}) {
    const Eigen::Vector2d info(w, 2.0);
    const auto out = gauss_newton_solve(model, info, Eigen::Vector2d::Zero());
    Eigen::MatrixXd dcov = Eigen::MatrixXd::Zero(2, 2);
    dcov(0, 0) = 1.0;
    const auto g = backward_full(model, info, out, Eigen::Vector2d::Zero(), dcov);
    EXPECT_NEAR(g.d_information(0), -1.0 / (w * w), 1e-10);
    EXPECT_NEAR(g.d_information(1), 0.0, 1e-12);
  }
}

TEST(Backward, LinearArgminIsScaleInvariant) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 10; ++trial) {
    const auto c = random_linear(rng, 10, 4);
    LinearResidualModel model(c.a, c.b);
    const auto out = gauss_newton_solve(model, c.omega, Eigen::VectorXd::Zero(4));
    for (int k = 0; k < 2; ++k) {
      Eigen::VectorXd ds = Eigen::VectorXd::Zero(4);
      ds(k) = 1.0;
      const auto g = backward_full(model, c.omega, out, ds, Eigen::MatrixXd::Zero(4, 4));
      // d x / d s along Omega -> s Omega is sum_i Omega_i dx/dOmega_i
      EXPECT_NEAR(g.d_information.dot(c.omega), 0.0, 1e-9);
      EXPECT_GT(g.d_information.norm(), 1e-6);
    }
  }
}

TEST(Backward, MatchesFiniteDifferencesOnLinearProblem) {
  std::mt19937_64 rng(5);
  const auto c = random_linear(rng, 9, 3);
  LinearResidualModel model(c.a, c.b);
  const Eigen::Vector3d ds(0.3, -1.1, 0.7);
  Eigen::Matrix3d dc;
  dc << 1.0, 0.2, -0.4, 0.2, 0.5, 0.1, -0.4, 0.1, -2.0;
  auto loss = [&](const Eigen::VectorXd& om) {
    const auto o = gauss_newton_solve(model, om, Eigen::VectorXd::Zero(3));
    return ds.dot(o.state) + (dc.array() * o.covariance.array()).sum();
  };
  const auto out = gauss_newton_solve(model, c.omega, Eigen::VectorXd::Zero(3));
  const auto g = backward_full(model, c.omega, out, ds, dc);
  for (int i = 0; i < 9; ++i) {
    const double h = 1e-6 * c.omega(i);
    Eigen::VectorXd p = c.omega, m = c.omega;
    p(i) += h;
    m(i) -= h;
    const double fd = (loss(p) - loss(m)) / (2.0 * h);
    EXPECT_LT(test::rel_err(g.d_information(i), fd, 1e-6), 1e-6) << i;
  }
}

TEST(Backward, NonlinearWindowGradcheck) {
  const auto sim = generate(test::harsh(8, 31));
  const auto run = test::prepare(sim);
  WgnModel model;
  model.set_stats(FeatureStats::fit(collect_features(run, 0, run.size())));
  GradcheckOptions opts;
  opts.check_parameters = false;
  const auto rep = run_gradcheck(model, run, 1, opts);
  EXPECT_TRUE(rep.pass()) << rep.table();

  opts.corrupt_jacobian = true;
  EXPECT_FALSE(run_gradcheck(model, run, 1, opts).pass());
}

TEST(Information, MonotoneCovarianceTrace) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    auto c = random_linear(rng, 8, 4);
    LinearResidualModel model(c.a, c.b);
    double prev = std::numeric_limits<double>::infinity();
    for (int step = 0; step < 6; ++step) {
      const auto out = gauss_newton_solve(model, c.omega, Eigen::VectorXd::Zero(4));
      const double tr = out.covariance.block<2, 2>(0, 0).trace();
      EXPECT_LE(tr, prev + 1e-12);
      prev = tr;
      c.omega(trial % 8) *= 1.7;
    }
  }
}

TEST(WeightedHdop, SymmetricFourSatellites) {
  // G^T G has EN block diag(1, 1) after the U/clock pair is marginalized:
  // E: cos^2(45) * (1 + 1) = 1, N likewise, so HDOP = sqrt(2).
  std::vector<RangeFactor> f;
  for (double az : {0.0, 90.0, 180.0, 270.0}) f.push_back(sat_factor(45.0, az));
  PseudorangeWindowModel m({f});
  const Eigen::VectorXd x = Eigen::VectorXd::Zero(7);
  EXPECT_NEAR(weighted_hdop(m, Eigen::Vector4d::Ones(), x, 0), std::sqrt(2.0), 1e-9);
  EXPECT_NEAR(weighted_hdop(m, Eigen::Vector4d::Constant(2.0), x, 0), std::sqrt(2.0), 1e-9);
}

TEST(WeightedHdop, ScaleInvarianceAndZeroWeightLimit) {
  std::vector<RangeFactor> full;
  const double el[] = {70, 35, 50, 20, 40, 60};
  const double az[] = {10, 80, 150, 200, 260, 330};
  for (int i = 0; i < 6; ++i) full.push_back(sat_factor(el[i], az[i], i < 4 ? 0 : 1));
  PseudorangeWindowModel m({full});
  const Eigen::VectorXd x = Eigen::VectorXd::Zero(7);
  Eigen::VectorXd w(6);
  w << 1.0, 0.5, 2.0, 0.7, 1.3, 0.9;
  const double h = weighted_hdop(m, w, x, 0);
  EXPECT_NEAR(weighted_hdop(m, 2.0 * w, x, 0), h, 1e-12);

  Eigen::VectorXd w0 = w;
  w0(1) = 0.0;
  std::vector<RangeFactor> reduced = full;
  reduced.erase(reduced.begin() + 1);
  Eigen::VectorXd wr(5);
  wr << w(0), w(2), w(3), w(4), w(5);
  PseudorangeWindowModel mr({reduced});
  EXPECT_NEAR(weighted_hdop(m, w0, x, 0), weighted_hdop(mr, wr, x, 0), 1e-9);

  EXPECT_THROW(weighted_hdop(m, Eigen::VectorXd::Zero(6), x, 0), GeometryError);
}
