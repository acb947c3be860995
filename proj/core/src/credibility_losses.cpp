#include "cdfgo/credibility_losses.hpp"

#include <cmath>
#include <random>
#include <string>

#include "cdfgo/error.hpp"

namespace cdfgo {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

struct Chol2 {
  double a, b, c;  // L = [[a, 0], [b, c]]
};

Chol2 cholesky2(const Eigen::Matrix2d& cov_in, const char* who) {
  if (!cov_in.allFinite()) throw NumericalError(std::string(who) + ": non-finite covariance");
  const double s00 = cov_in(0, 0) + kCholeskyJitter;
  const double s10 = 0.5 * (cov_in(1, 0) + cov_in(0, 1));
  const double s11 = cov_in(1, 1) + kCholeskyJitter;
  if (!(s00 > 0.0)) throw NumericalError(std::string(who) + ": covariance not positive definite");
  const double a = std::sqrt(s00);
  const double b = s10 / a;
  const double c2 = s11 - b * b;
  if (!(c2 > 0.0)) throw NumericalError(std::string(who) + ": covariance not positive definite");
  return {a, b, std::sqrt(c2)};
}

}  // namespace

void LossConfig::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0) || !(alpha + beta > 0.0)) {
    throw ValidationError("loss: alpha, beta must be >= 0 with alpha + beta > 0");
  }
  if (mc_samples < 2 || mc_samples % 2 != 0) {
    throw ValidationError("loss: mc_samples must be an even number >= 2");
  }
}

std::string_view objective_name(Objective o) {
  switch (o) {
    case Objective::Mae: return "mae";
    case Objective::Nll: return "nll";
    case Objective::Es: return "es";
    case Objective::Combined: return "combined";
  }
  return "?";
}

Objective objective_from_name(std::string_view name) {
  if (name == "mae") return Objective::Mae;
  if (name == "nll") return Objective::Nll;
  if (name == "es") return Objective::Es;
  if (name == "combined") return Objective::Combined;
  throw ValidationError("unknown objective '" + std::string(name) +
                        "' (expected mae, nll, es or combined)");
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(base);
  h = mix(h ^ a);
  h = mix(h ^ b);
  h = mix(h ^ c);
  return h;
}

LossValue nll(const EnPredictive& pred) {
  const Eigen::Matrix2d& s = pred.covariance;
  if (!s.allFinite()) throw NumericalError("nll: non-finite covariance");
  const double det = s(0, 0) * s(1, 1) - s(0, 1) * s(1, 0);
  if (!(s(0, 0) > 0.0) || !(det > 0.0)) throw NumericalError("nll: covariance not positive definite");
  Eigen::Matrix2d inv;
  inv << s(1, 1), -s(0, 1), -s(1, 0), s(0, 0);
  inv /= det;
  const Eigen::Vector2d e = pred.ground_truth - pred.mean;
  const Eigen::Vector2d ie = inv * e;

  LossValue out;
  out.value = 0.5 * (std::log(det) + e.dot(ie) + 2.0 * kLog2Pi);
  out.d_mean = -ie;
  const Eigen::Matrix2d g = 0.5 * (inv - ie * ie.transpose());
  out.d_cov = 0.5 * (g + g.transpose());
  return out;
}

LossValue energy_score_mc(const EnPredictive& pred, int samples, std::uint64_t seed) {
  if (samples < 2 || samples % 2 != 0) throw ValidationError("energy score: K must be even and >= 2");
  const Chol2 l = cholesky2(pred.covariance, "energy score");
  const Eigen::Vector2d off = pred.mean - pred.ground_truth;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double inv_k = 1.0 / samples;

  LossValue out;
  double la_bar = 0.0, lb_bar = 0.0, lc_bar = 0.0;
  double term1 = 0.0, term2 = 0.0;
  for (int j = 0; j < samples / 2; ++j) {
    const double e0 = normal(rng), e1 = normal(rng);
    const double f0 = normal(rng), f1 = normal(rng);
    // y - gt for both members of the pair
    const double y0 = off(0) + l.a * e0, y1 = off(1) + l.b * e0 + l.c * e1;
    const double z0 = off(0) + l.a * f0, z1 = off(1) + l.b * f0 + l.c * f1;

    const double ny = std::hypot(y0, y1);
    const double nz = std::hypot(z0, z1);
    term1 += ny + nz;
    if (ny > 0.0) {
      const double g0 = inv_k * y0 / ny, g1 = inv_k * y1 / ny;
      out.d_mean += Eigen::Vector2d(g0, g1);
      la_bar += g0 * e0;
      lb_bar += g1 * e0;
      lc_bar += g1 * e1;
    }
    if (nz > 0.0) {
      const double g0 = inv_k * z0 / nz, g1 = inv_k * z1 / nz;
      out.d_mean += Eigen::Vector2d(g0, g1);
      la_bar += g0 * f0;
      lb_bar += g1 * f0;
      lc_bar += g1 * f1;
    }

    const double de0 = e0 - f0, de1 = e1 - f1;
    const double d0 = l.a * de0, d1 = l.b * de0 + l.c * de1;
    const double nd = std::hypot(d0, d1);
    term2 += nd;
    if (nd > 0.0) {
      const double g0 = -inv_k * d0 / nd, g1 = -inv_k * d1 / nd;
      la_bar += g0 * de0;
      lb_bar += g1 * de0;
      lc_bar += g1 * de1;
    }
  }
  out.value = inv_k * (term1 - term2);

  // Back through a = sqrt(S00), b = S10 / a, c = sqrt(S11 - b^2).
  const double b_total = lb_bar - lc_bar * l.b / l.c;
  const double g11 = lc_bar / (2.0 * l.c);
  const double g10 = b_total / l.a;
  const double g00 = la_bar / (2.0 * l.a) - b_total * l.b / (2.0 * l.a * l.a);
  out.d_cov << g00, 0.5 * g10, 0.5 * g10, g11;
  return out;
}

LossValue combined(const EnPredictive& pred, const LossConfig& cfg, std::uint64_t seed) {
  LossValue out;
  if (cfg.alpha != 0.0) {
    const LossValue n = nll(pred);
    out.value += cfg.alpha * n.value;
    out.d_mean += cfg.alpha * n.d_mean;
    out.d_cov += cfg.alpha * n.d_cov;
  }
  if (cfg.beta != 0.0) {
    const LossValue e = energy_score_mc(pred, cfg.mc_samples, seed);
    out.value += cfg.beta * e.value;
    out.d_mean += cfg.beta * e.d_mean;
    out.d_cov += cfg.beta * e.d_cov;
  }
  return out;
}

LossValue mae(const EnPredictive& pred) {
  LossValue out;
  const Eigen::Vector2d e = pred.mean - pred.ground_truth;
  out.value = e.norm();
  if (out.value > 0.0) out.d_mean = e / out.value;
  return out;
}

LossValue objective_loss(Objective objective, const EnPredictive& pred, const LossConfig& cfg,
                         std::uint64_t seed) {
  switch (objective) {
    case Objective::Mae: return mae(pred);
    case Objective::Nll: return nll(pred);
    case Objective::Es: return energy_score_mc(pred, cfg.mc_samples, seed);
    case Objective::Combined: return combined(pred, cfg, seed);
  }
  throw ValidationError("unknown objective");
}

double nll_eval(const EnPredictive& pred) { return nll(pred).value; }

double es_eval(const EnPredictive& pred, int samples, std::uint64_t seed) {
  return energy_score_mc(pred, samples, seed).value;
}

}  // namespace cdfgo
