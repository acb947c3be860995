#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "cdfgo/classical_weighting.hpp"
#include "cdfgo/error.hpp"
#include "support.hpp"

using namespace cdfgo;

TEST(SchemeVariance, ElevationAtZenith) {
  const auto s = WeightScheme::elevation({2.0});
  EXPECT_DOUBLE_EQ(scheme_variance(s, kPi / 2.0, 40.0), 4.0);
  EXPECT_NEAR(scheme_variance(s, kPi / 6.0, 40.0), 16.0, 1e-12);
}

TEST(SchemeVariance, SigmaEpsLimit) {
  const auto s = WeightScheme::sigma_eps();
  EXPECT_NEAR(scheme_variance(s, 0.5, 70.0), 0.5 + 1e4 * 1e-7, 1e-12);
  EXPECT_NEAR(scheme_variance(s, 0.5, 30.0), 0.5 + 10.0, 1e-12);
}

TEST(SchemeVariance, GoGpsHandValue) {
  // el 30 deg, cn0 35: 10^(15/20) * (-0.7 * 0.375 + 1) / sin^2(30 deg)
  const double q = std::pow(10.0, 0.75) * 0.7375;
  const double expect = q / 0.25;
  EXPECT_NEAR(expect, 16.5891, 1e-4);
  EXPECT_NEAR(scheme_variance(WeightScheme::gogps(), 30.0 * kDegToRad, 35.0), expect, 1e-12);
  // clamps
  EXPECT_NEAR(scheme_variance(WeightScheme::gogps(), kPi / 2.0, 55.0), 1.0, 1e-12);
  EXPECT_NEAR(scheme_variance(WeightScheme::gogps(), kPi / 2.0, 5.0), 30.0, 1e-12);
}

TEST(SchemeVariance, MonotoneOnGrid) {
  for (const auto& s : {WeightScheme::elevation(), WeightScheme::sigma_eps(), WeightScheme::gogps()}) {
    for (double cn0 = 0.0; cn0 <= 70.0; cn0 += 2.5) {
      double prev = std::numeric_limits<double>::infinity();
      for (double el = 1.0; el <= 90.0; el += 1.0) {
        const double v = scheme_variance(s, el * kDegToRad, cn0);
        EXPECT_GT(v, 0.0);
        EXPECT_LE(v, prev * (1.0 + 1e-14));
        prev = v;
      }
    }
    if (s.kind() == SchemeKind::Elevation) continue;
    for (double el = 5.0; el <= 90.0; el += 5.0) {
      double prev = std::numeric_limits<double>::infinity();
      for (double cn0 = 0.0; cn0 <= 70.0; cn0 += 0.5) {
        const double v = scheme_variance(s, el * kDegToRad, cn0);
        EXPECT_LE(v, prev * (1.0 + 1e-14)) << scheme_name(s.kind()) << " el " << el;
        prev = v;
      }
    }
  }
}

TEST(SchemeVariance, Errors) {
  EXPECT_THROW(scheme_variance(WeightScheme::gogps(), 0.0, 40.0), ValidationError);
  EXPECT_THROW(scheme_variance(WeightScheme::gogps(), -0.1, 40.0), ValidationError);
  EXPECT_THROW(validate_scheme(WeightScheme::elevation({0.0})), ValidationError);
  EXPECT_THROW(validate_scheme(WeightScheme::sigma_eps({-1.0, 1.0})), ValidationError);
  EXPECT_EQ(scheme_from_name("gogps"), SchemeKind::GoGps);
  EXPECT_EQ(scheme_from_name(scheme_name(SchemeKind::SigmaEps)), SchemeKind::SigmaEps);
  EXPECT_THROW(scheme_from_name("bogus"), ValidationError);
}

TEST(SolveWls, NoiselessRecovery) {
  const auto sim = generate(test::open_sky(20, 5));
  for (const auto& ep : sim.epochs) {
    const auto sol = solve_wls(ep, WeightScheme::gogps(), {}, sim.frame);
    EXPECT_TRUE(sol.converged);
    EXPECT_LE(sol.iterations, 10);
    EXPECT_EQ(sol.residuals.size(), ep.observations.size());
    EXPECT_LT((sol.state.position.vec() - ep.truth_position->vec()).norm(), 1e-3);
  }
}

namespace {

// Linearized single-epoch problem built by hand from the observations.
void linearize(const EpochObservations& ep, const LocalFrame& f, const EpochState& at,
               Eigen::MatrixXd& j, Eigen::VectorXd& r) {
  const int n = static_cast<int>(ep.observations.size());
  j.setZero(n, kEpochStateDim);
  r.resize(n);
  for (int i = 0; i < n; ++i) {
    const auto& o = ep.observations[i];
    const Eigen::Vector3d s = ecef_to_enu(o.sat_pos, f).vec();
    const Eigen::Vector3d d = at.position.vec() - s;
    j.block<1, 3>(i, 0) = -d.normalized().transpose();
    j(i, 3 + static_cast<int>(o.constellation)) = -1.0;
    r(i) = o.pseudorange - d.norm() - at.clock_biases[static_cast<int>(o.constellation)] -
           o.correction;
  }
}

}  // namespace

TEST(SolveWls, ContaminatedEpochMatchesDenseOracle) {
  auto cfg = test::open_sky(1, 21, 1.0);
  const auto sim = generate(cfg);
  EpochObservations ep = sim.epochs[0];
  // keep six satellites of one system so all clock slots are observed
  std::vector<SatelliteObservation> keep;
  for (const auto& o : ep.observations) {
    if (o.constellation == Constellation::GpsQzss && keep.size() < 6) keep.push_back(o);
  }
  ASSERT_EQ(keep.size(), 6u);
  keep[2].pseudorange += 35.0;
  ep.observations = keep;

  std::vector<double> var;
  for (int i = 0; i < 6; ++i) var.push_back(1.0 + 0.5 * i);
  const auto sol = solve_wls_with_variances(ep, var, {}, sim.frame, {50, 1e-10, 1e-6});

  // Gauss-Newton on position + the GPS clock written directly with dense inverses.
  Eigen::VectorXd x = Eigen::VectorXd::Zero(4);
  Eigen::VectorXd w(6);
  for (int i = 0; i < 6; ++i) w(i) = 1.0 / var[i];
  for (int it = 0; it < 50; ++it) {
    EpochState st{{x(0), x(1), x(2)}, {x(3), 0, 0, 0}};
    Eigen::MatrixXd j;
    Eigen::VectorXd r;
    linearize(ep, sim.frame, st, j, r);
    const Eigen::MatrixXd g = j.leftCols(4);
    const Eigen::MatrixXd h = g.transpose() * w.asDiagonal() * g;
    x -= h.inverse() * (g.transpose() * w.asDiagonal() * r);
  }
  EXPECT_NEAR(sol.state.position.e, x(0), 1e-8);
  EXPECT_NEAR(sol.state.position.n, x(1), 1e-8);
  EXPECT_NEAR(sol.state.position.u, x(2), 1e-8);
  EXPECT_NEAR(sol.state.clock_biases[0], x(3), 1e-8);
}

TEST(SolveWls, WeightScaleInvarianceAndOrthogonality) {
  const auto sim = generate(test::harsh(10, 8));
  for (const auto& ep : sim.epochs) {
    const auto a = solve_wls(ep, WeightScheme::gogps(), {}, sim.frame);
    std::vector<double> scaled = a.variances;
    for (double& v : scaled) v *= 7.0;
    const auto b = solve_wls_with_variances(ep, scaled, {}, sim.frame);
    EXPECT_LT((a.state.position.vec() - b.state.position.vec()).norm(), 1e-6);

    // J^T W r ~ 0 at convergence (position and observed clock columns)
    Eigen::MatrixXd j;
    Eigen::VectorXd r;
    linearize(ep, sim.frame, a.state, j, r);
    Eigen::VectorXd w(r.size());
    for (int i = 0; i < r.size(); ++i) w(i) = 1.0 / a.variances[i];
    const Eigen::VectorXd g = j.transpose() * w.asDiagonal() * r;
    EXPECT_LT(g.cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(SolveWls, LinearCaseOneIteration) {
  // Start at the converged state of a noiseless epoch moved by a small
  // amount; a second solve from the answer must not move at all.
  const auto sim = generate(test::open_sky(1, 12));
  const auto& ep = sim.epochs[0];
  const auto a = solve_wls(ep, WeightScheme::gogps(), {}, sim.frame);
  const auto b = solve_wls(ep, WeightScheme::gogps(), a.state, sim.frame);
  EXPECT_LE(b.iterations, 1);
  EXPECT_LT((a.state.position.vec() - b.state.position.vec()).norm(), 1e-6);
}
