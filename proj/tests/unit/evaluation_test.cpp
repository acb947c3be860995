#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "cdfgo/error.hpp"
#include "cdfgo/evaluation.hpp"
#include "support.hpp"

using namespace cdfgo;

namespace {

EpochRecord record(double ee, double en, double se, double sn) {
  EpochRecord r;
  r.error = {ee, en};
  r.sigma = {se, sn};
  r.covariance = Eigen::Vector2d(se * se, sn * sn).asDiagonal();
  return r;
}

std::size_t count_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

}  // namespace

TEST(Percentile, NearestRank) {
  std::vector<double> v(100);
  for (int i = 0; i < 100; ++i) v[i] = 100 - i;  // unsorted on purpose
  EXPECT_EQ(nearest_rank_percentile(v, 95.0), 95.0);
  EXPECT_EQ(nearest_rank_percentile(v, 50.0), 50.0);
  EXPECT_EQ(nearest_rank_percentile(v, 100.0), 100.0);
  EXPECT_EQ(nearest_rank_percentile({3.0}, 1.0), 3.0);
  EXPECT_THROW(nearest_rank_percentile({}, 50.0), ValidationError);
  EXPECT_THROW(nearest_rank_percentile(v, 0.0), ValidationError);

  const std::vector<double> zeros(17, 0.0);
  const auto h = horizontal_errors(zeros);
  EXPECT_EQ(h.mean, 0.0);
  EXPECT_EQ(h.p50, 0.0);
  EXPECT_EQ(h.p95, 0.0);
}

TEST(Percentile, MatchesSortOracle) {
  std::mt19937_64 rng(8);
  std::exponential_distribution<double> e(0.3);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> v(1 + rng() % 300);
    for (double& x : v) x = e(rng);
    std::vector<double> s = v;
    std::sort(s.begin(), s.end());
    for (double p : {5.0, 50.0, 95.0, 99.0}) {
      const auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * s.size()));
      EXPECT_EQ(nearest_rank_percentile(v, p), s[std::max<std::size_t>(rank, 1) - 1]);
    }
    double mean = 0.0;
    for (double x : v) mean += x;
    EXPECT_NEAR(horizontal_errors(v).mean, mean / v.size(), 1e-12);
  }
}

TEST(Diagnostics, ZeroErrors) {
  std::vector<EpochRecord> recs(10, record(0.0, 0.0, 1.0, 2.0));
  const double ks[] = {0.5, 1.0, 3.0};
  for (const auto& d : credibility_diagnostics(recs, ks)) {
    EXPECT_EQ(d.exceedance[0], 0.0);
    EXPECT_EQ(d.exceedance[1], 0.0);
    EXPECT_EQ(d.coverage[0], 1.0);
    EXPECT_EQ(d.coverage[1], 1.0);
  }
}

TEST(Diagnostics, HandCountedTwentyRecords) {
  // East: |e| / sigma = 0.5, 1.5, 2.5, 3.5 repeated five times.
  // North: sigma 0 on records 0 and 1 (error 0 and 1), |e|/sigma = 2 elsewhere.
  std::vector<EpochRecord> recs;
  for (int i = 0; i < 20; ++i) {
    const double ratio = 0.5 + (i % 4);
    const double sign = i % 2 ? -1.0 : 1.0;
    if (i < 2) {
      recs.push_back(record(sign * ratio * 2.0, i == 0 ? 0.0 : 1.0, 2.0, 0.0));
    } else {
      recs.push_back(record(sign * ratio * 2.0, 6.0, 2.0, 3.0));
    }
  }
  const double ks[] = {1.0, 3.0};
  const auto d = credibility_diagnostics(recs, ks);
  // East: 15 of 20 exceed 1 sigma, 5 of 20 exceed 3 sigma.
  EXPECT_EQ(d[0].exceedance[0], 15.0 / 20.0);
  EXPECT_EQ(d[1].exceedance[0], 5.0 / 20.0);
  // North: 18 at 2 sigma plus the zero-sigma non-zero error.
  EXPECT_EQ(d[0].exceedance[1], 19.0 / 20.0);
  EXPECT_EQ(d[1].exceedance[1], 1.0 / 20.0);
  for (const auto& a : d) {
    for (int k = 0; k < 2; ++k) EXPECT_EQ(a.exceedance[k] + a.coverage[k], 1.0);
  }
}

TEST(Diagnostics, MonotoneInK) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<EpochRecord> recs;
  for (int i = 0; i < 500; ++i) recs.push_back(record(g(rng) * 1.7, g(rng), 1.0, 1.3));
  std::vector<double> ks;
  for (double k = 0.1; k < 5.0; k += 0.1) ks.push_back(k);
  const auto d = credibility_diagnostics(recs, ks);
  for (std::size_t i = 1; i < d.size(); ++i) {
    for (int a = 0; a < 2; ++a) {
      EXPECT_LE(d[i].exceedance[a], d[i - 1].exceedance[a]);
      EXPECT_GE(d[i].coverage[a], d[i - 1].coverage[a]);
    }
  }
}

TEST(Diagnostics, SelfSampledGaussianIsNominal) {
  Eigen::Matrix2d cov;
  cov << 4.0, 1.2, 1.2, 1.0;
  const Eigen::Matrix2d l = cov.llt().matrixL();
  std::mt19937_64 rng(12345);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<EpochRecord> recs(100000);
  for (auto& r : recs) {
    r.covariance = cov;
    r.sigma = cov.diagonal().cwiseSqrt();
    r.error = l * Eigen::Vector2d(g(rng), g(rng));
  }
  const double ks[] = {1.0, 3.0};
  const auto d = credibility_diagnostics(recs, ks);
  for (int a = 0; a < 2; ++a) {
    EXPECT_NEAR(d[0].coverage[a], 0.6827, 0.005);
    EXPECT_NEAR(d[1].exceedance[a], 0.0027, 0.0006);
  }
}

TEST(NormalizedWeights, Basics) {
  const auto eq = normalized_weights(Eigen::VectorXd::Constant(7, 0.3));
  for (int i = 0; i < 7; ++i) EXPECT_NEAR(eq(i), 1.0 / 7.0, 1e-15);
  const Eigen::Vector3d v(0.2, 0.3, 0.5);
  EXPECT_LT((normalized_weights(v) - v).cwiseAbs().maxCoeff(), 1e-15);
  std::mt19937_64 rng(1);
  Eigen::VectorXd r = Eigen::VectorXd::Random(20).cwiseAbs();
  EXPECT_NEAR(normalized_weights(r).sum(), 1.0, 1e-12);
  EXPECT_THROW(normalized_weights(Eigen::VectorXd::Zero(4)), ValidationError);
}

TEST(SingleDifference, CleanEpochIsZero) {
  const auto sim = generate(test::open_sky(3, 6));
  for (const auto& ep : sim.epochs) {
    const auto sd = single_diff_errors(ep, *ep.truth_position, *ep.truth_clock, sim.frame);
    // pseudoranges are ~2e7 m, so roundoff alone is a few nm
    for (double e : sd.error) EXPECT_NEAR(e, 0.0, 1e-7);
  }
}

TEST(SingleDifference, InjectionAndClockShift) {
  const auto sim = generate(test::open_sky(1, 6, 1.0));
  const auto& ep = sim.epochs[0];
  const auto base = single_diff_errors(ep, *ep.truth_position, *ep.truth_clock, sim.frame);
  int victim = -1;
  for (std::size_t i = 0; i < ep.observations.size(); ++i) {
    if (!base.is_reference[i] && !base.no_reference[i]) {
      victim = static_cast<int>(i);
      break;
    }
  }
  ASSERT_GE(victim, 0);
  auto hit = ep;
  hit.observations[victim].pseudorange += 25.0;
  const auto sd = single_diff_errors(hit, *ep.truth_position, *ep.truth_clock, sim.frame);
  for (std::size_t i = 0; i < sd.error.size(); ++i) {
    EXPECT_NEAR(sd.error[i] - base.error[i], static_cast<int>(i) == victim ? 25.0 : 0.0, 1e-7);
  }

  ClockBiases shifted = *ep.truth_clock;
  for (double& b : shifted) b += 1234.5;
  shifted[2] -= 99.0;
  const auto sh = single_diff_errors(ep, *ep.truth_position, shifted, sim.frame);
  for (std::size_t i = 0; i < sh.error.size(); ++i) {
    EXPECT_NEAR(sh.error[i], base.error[i], 1e-7);
    if (base.is_reference[i]) {
      EXPECT_EQ(base.error[i], 0.0);
    }
  }
}

TEST(SingleDifference, SingletonHasNoReference) {
  const auto sim = generate(test::open_sky(1, 6));
  auto ep = sim.epochs[0];
  std::vector<SatelliteObservation> keep;
  bool have_gal = false;
  for (const auto& o : ep.observations) {
    if (o.constellation == Constellation::Galileo) {
      if (have_gal) continue;
      have_gal = true;
    }
    keep.push_back(o);
  }
  ep.observations = keep;
  const auto sd = single_diff_errors(ep, *ep.truth_position, *ep.truth_clock, sim.frame);
  for (std::size_t i = 0; i < ep.observations.size(); ++i) {
    if (ep.observations[i].constellation == Constellation::Galileo) {
      EXPECT_TRUE(sd.no_reference[i]);
      EXPECT_FALSE(sd.is_reference[i]);
    }
  }
}

TEST(Evaluate, RunLevelAggregates) {
  const auto sim = generate(test::harsh(23, 5));
  const auto run = test::prepare(sim);
  std::vector<EpochEstimate> est;
  const auto rep = evaluate_method("GoGPS", run, scheme_weighting(WeightScheme::gogps()), {}, &est);
  ASSERT_EQ(rep.evaluation.records.size(), 23u);
  ASSERT_EQ(est.size(), 23u);
  double nll_sum = 0.0, es_sum = 0.0;
  for (const auto& r : rep.evaluation.records) {
    nll_sum += r.nll;
    es_sum += r.es;
  }
  EXPECT_NEAR(rep.evaluation.mean_nll, nll_sum / 23.0, 1e-12);
  EXPECT_NEAR(rep.evaluation.mean_es, es_sum / 23.0, 1e-12);
  // windows start at 0, 5, 10, 15 and a final one at 18
  for (const auto& e : est) {
    const int expect = e.epoch_index < 20 ? (e.epoch_index / 5) * 5 : 18;
    EXPECT_EQ(e.window_start, expect) << e.epoch_index;
    EXPECT_GT(e.hdop, 0.0);
  }
  const long factors = rep.weights.clean_count + rep.weights.contaminated_count;
  long total = 0;
  for (const auto& ep : run.epochs) total += ep.size();
  EXPECT_EQ(factors, total);
  EXPECT_EQ(rep.hdop.clean_count + rep.hdop.contaminated_count, 23);

  const auto again = evaluate_method("GoGPS", run, scheme_weighting(WeightScheme::gogps()));
  EXPECT_EQ(summary_json(std::span(&rep, 1)), summary_json(std::span(&again, 1)));
}

TEST(Evaluate, SatelliteDiagnosticsSumToOne) {
  const auto sim = generate(test::harsh(5, 5));
  const auto run = test::prepare(sim);
  std::vector<EpochEstimate> est;
  evaluate_method("GoGPS", run, scheme_weighting(WeightScheme::gogps()), {}, &est);
  for (int e = 0; e < 5; ++e) {
    const auto sats = satellite_diagnostics(run.epochs[e], est[e]);
    ASSERT_EQ(static_cast<int>(sats.size()), run.epochs[e].size());
    double sum = 0.0;
    for (const auto& s : sats) {
      sum += s.normalized_weight;
      if (s.reference) {
        EXPECT_EQ(s.sd_error, 0.0);
      }
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Export, CsvRoundTripAndHeadersOnly) {
  const auto sim = generate(test::harsh(12, 6));
  const auto run = test::prepare(sim);
  std::vector<EpochEstimate> est;
  const auto rep = evaluate_method("GoGPS", run, scheme_weighting(WeightScheme::gogps()), {}, &est);
  const auto dir = test::scratch_dir("export");
  export_envelope(rep.evaluation.records, dir);
  EXPECT_EQ(count_lines(dir / "envelope.csv"), 13u);
  EXPECT_TRUE(std::filesystem::exists(dir / "envelope.svg"));
  const auto back = read_envelope_csv(dir / "envelope.csv");
  ASSERT_EQ(back.size(), 12u);
  for (std::size_t i = 0; i < back.size(); ++i) {
    const auto& a = rep.evaluation.records[i];
    EXPECT_EQ(back[i].epoch_index, a.epoch_index);
    EXPECT_EQ(back[i].time, a.time);
    EXPECT_EQ(back[i].error, a.error);
    EXPECT_EQ(back[i].sigma, a.sigma);
    EXPECT_EQ(back[i].covariance, a.covariance);
    EXPECT_EQ(back[i].nll, a.nll);
    EXPECT_EQ(back[i].es, a.es);
  }

  const auto sats = satellite_diagnostics(run.epochs[4], est[4]);
  export_satellites(sats, dir);
  const auto sback = read_satellites_csv(dir / "satellites.csv");
  ASSERT_EQ(sback.size(), sats.size());
  for (std::size_t i = 0; i < sats.size(); ++i) {
    EXPECT_EQ(sback[i].sat_id, sats[i].sat_id);
    EXPECT_EQ(sback[i].normalized_weight, sats[i].normalized_weight);
    EXPECT_EQ(sback[i].sd_error, sats[i].sd_error);
    EXPECT_EQ(sback[i].contamination, sats[i].contamination);
    EXPECT_EQ(sback[i].reference, sats[i].reference);
  }
  for (const char* f : {"skyplot.csv", "satellites.svg", "skyplot.svg"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }

  const auto empty = test::scratch_dir("export_empty");
  export_envelope({}, empty);
  export_satellites({}, empty);
  EXPECT_EQ(count_lines(empty / "envelope.csv"), 1u);
  EXPECT_EQ(count_lines(empty / "satellites.csv"), 1u);
  EXPECT_EQ(count_lines(empty / "skyplot.csv"), 1u);
  EXPECT_TRUE(read_envelope_csv(empty / "envelope.csv").empty());
}
