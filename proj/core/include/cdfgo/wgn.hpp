#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "cdfgo/classical_weighting.hpp"
#include "cdfgo/observation_model.hpp"

namespace cdfgo {

// [elevation rad, observed pseudorange m, cn0 dB-Hz, signed WLS residual m]
inline constexpr int kNumFeatures = 4;
using FeatureRow = Eigen::Matrix<double, 1, kNumFeatures>;

struct FeatureStats {
  std::array<double, kNumFeatures> mean{0.0, 0.0, 0.0, 0.0};
  std::array<double, kNumFeatures> stddev{1.0, 1.0, 1.0, 1.0};

  // Population mean/std over rows. A constant column gets std 1.
  static FeatureStats fit(const std::vector<FeatureRow>& rows);
  void validate() const;
};

struct SatelliteFeatures {
  Eigen::MatrixXd values;  // n x 4, normalized, canonical factor order
  std::vector<char> valid;  // 0 rows are zero-filled and excluded from attention

  int size() const { return static_cast<int>(values.rows()); }
};

// Raw feature rows of one epoch in canonical factor order. `wls` must come
// from the same epoch (its residuals are in input order).
std::vector<FeatureRow> raw_features(const EpochObservations& epoch, const WlsSolution& wls,
                                     const LocalFrame& frame);

SatelliteFeatures assemble_features(const EpochObservations& epoch, const WlsSolution& wls,
                                    const FeatureStats& stats, const LocalFrame& frame);
SatelliteFeatures normalize_features(const std::vector<FeatureRow>& rows,
                                     const FeatureStats& stats);

struct WgnConfig {
  int d_model = 32;
  int ff_dim = 64;
  int num_layers = 2;
  int head_hidden = 32;
  double leaky_slope = 0.01;
  double ln_eps = 1e-5;
  double w_min = 0.0;

  void validate() const;
};

struct NamedTensor {
  std::string name;
  Eigen::MatrixXd value;
};

struct FactorWeights {
  Eigen::VectorXd z;
  Eigen::VectorXd w;
  Eigen::VectorXd sigma;
  Eigen::VectorXd information;
};

// Activations kept by `forward` for the reverse pass.
struct WgnTape {
  struct Layer {
    Eigen::MatrixXd x_in, q, k, v, attn, ctx, h1, xhat1, f1, g1, xhat2;
    Eigen::VectorXd inv_std1, inv_std2;
  };
  Eigen::MatrixXd input, proj_pre;
  std::vector<Layer> layers;
  Eigen::MatrixXd enc_out, head_pre, head_act;
  Eigen::VectorXd z, w;
  std::vector<char> valid;
};

using WgnGradients = std::vector<Eigen::MatrixXd>;

// Projection MLP, post-norm single-head self-attention encoder layers and a
// two-layer head producing one score per satellite. Row-vector convention:
// satellites are rows, so a linear map is X W + b.
class WgnModel {
 public:
  WgnModel() : WgnModel(WgnConfig{}, 1) {}
  WgnModel(const WgnConfig& config, std::uint64_t init_seed);

  const WgnConfig& config() const { return config_; }
  const FeatureStats& stats() const { return stats_; }
  void set_stats(const FeatureStats& stats);

  std::vector<NamedTensor>& tensors() { return tensors_; }
  const std::vector<NamedTensor>& tensors() const { return tensors_; }
  Eigen::MatrixXd& tensor(const std::string& name);
  const Eigen::MatrixXd& tensor(const std::string& name) const;
  std::size_t num_parameters() const;

  FactorWeights forward(const SatelliteFeatures& features, WgnTape* tape = nullptr) const;
  // Accumulates dL/dtheta into `grads` (shaped like tensors()) given dL/dOmega.
  void backward(const WgnTape& tape, const Eigen::VectorXd& d_information,
                WgnGradients& grads) const;

  WgnGradients zero_gradients() const;

 private:
  struct LayerIndex {
    int wq, bq, wk, wv, bv, wo, bo, ln1_g, ln1_b, ff1_w, ff1_b, ff2_w, ff2_b, ln2_g, ln2_b;
  };
  int add(const std::string& name, int rows, int cols);

  WgnConfig config_;
  FeatureStats stats_;
  std::vector<NamedTensor> tensors_;
  int proj_w_ = 0, proj_b_ = 0;
  std::vector<LayerIndex> layers_;
  int head1_w_ = 0, head1_b_ = 0, head2_w_ = 0, head2_b_ = 0;
};

double gradient_norm(const WgnGradients& grads);

}  // namespace cdfgo
