#pragma once

#include <cstdint>
#include <string_view>

#include <Eigen/Core>

namespace cdfgo {

// Gaussian EN predictive and the truth it is scored against.
struct EnPredictive {
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  Eigen::Matrix2d covariance = Eigen::Matrix2d::Identity();
  Eigen::Vector2d ground_truth = Eigen::Vector2d::Zero();
};

// Loss value and its gradients. `d_cov` uses the symmetric convention
// dL = sum_ij d_cov(i, j) dSigma(i, j) for symmetric perturbations.
struct LossValue {
  double value = 0.0;
  Eigen::Vector2d d_mean = Eigen::Vector2d::Zero();
  Eigen::Matrix2d d_cov = Eigen::Matrix2d::Zero();
};

inline constexpr double kCholeskyJitter = 1e-9;
inline constexpr int kTrainSamples = 2048;
inline constexpr int kEvalSamples = 8192;
inline constexpr std::uint64_t kEvalSeed = 20240611;

struct LossConfig {
  double alpha = 0.5;
  double beta = 0.5;
  int mc_samples = kTrainSamples;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

enum class Objective { Mae, Nll, Es, Combined };
std::string_view objective_name(Objective o);
Objective objective_from_name(std::string_view name);

// splitmix64 mixing of a base seed with up to three indices.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0,
                          std::uint64_t c = 0);

LossValue nll(const EnPredictive& pred);

// (1/K) sum_k |y_k - gt| - (1/K) sum_{j < K/2} |y_{2j} - y_{2j+1}|,
// y_k = mean + L eps_k, L = chol(Sigma + jitter I). K must be even.
LossValue energy_score_mc(const EnPredictive& pred, int samples, std::uint64_t seed);

LossValue combined(const EnPredictive& pred, const LossConfig& cfg, std::uint64_t seed);

// |mean - gt|; the covariance gradient is identically zero.
LossValue mae(const EnPredictive& pred);

LossValue objective_loss(Objective objective, const EnPredictive& pred, const LossConfig& cfg,
                         std::uint64_t seed);

double nll_eval(const EnPredictive& pred);
double es_eval(const EnPredictive& pred, int samples = kEvalSamples,
               std::uint64_t seed = kEvalSeed);

}  // namespace cdfgo
