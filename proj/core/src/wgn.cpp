#include "cdfgo/wgn.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "cdfgo/error.hpp"

namespace cdfgo {

namespace {

using Mat = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;

Mat leaky(const Mat& x, double slope) {
  return x.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
}

// dy/dx * upstream, evaluated at the pre-activation.
Mat leaky_back(const Mat& pre, const Mat& up, double slope) {
  return up.binaryExpr(pre, [slope](double g, double p) { return p > 0.0 ? g : slope * g; });
}

Mat affine(const Mat& x, const Mat& w, const Mat& b) {
  Mat y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

// Row-wise layer norm; returns normalized rows and stores 1/std per row.
Mat layer_norm(const Mat& x, double eps, Mat& xhat, Eigen::VectorXd& inv_std, const Mat& gamma,
               const Mat& beta) {
  const int n = static_cast<int>(x.rows());
  const double d = static_cast<double>(x.cols());
  xhat.resize(x.rows(), x.cols());
  inv_std.resize(n);
  for (int i = 0; i < n; ++i) {
    const double mu = x.row(i).sum() / d;
    const RowVec c = x.row(i).array() - mu;
    const double var = c.squaredNorm() / d;
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = c * inv_std(i);
  }
  Mat y = xhat.array().rowwise() * gamma.row(0).array();
  y.rowwise() += beta.row(0);
  return y;
}

Mat layer_norm_back(const Mat& dy, const Mat& xhat, const Eigen::VectorXd& inv_std,
                    const Mat& gamma, Mat& d_gamma, Mat& d_beta) {
  d_gamma.row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
  d_beta.row(0) += dy.colwise().sum();
  const Mat dxhat = dy.array().rowwise() * gamma.row(0).array();
  const double d = static_cast<double>(dy.cols());
  Mat dx(dy.rows(), dy.cols());
  for (int i = 0; i < dy.rows(); ++i) {
    const double m1 = dxhat.row(i).sum() / d;
    const double m2 = dxhat.row(i).dot(xhat.row(i)) / d;
    dx.row(i) = inv_std(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2).matrix();
  }
  return dx;
}

double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

}  // namespace

// ---------------------------------------------------------------- features

FeatureStats FeatureStats::fit(const std::vector<FeatureRow>& rows) {
  if (rows.empty()) throw ValidationError("feature stats: no training rows");
  FeatureStats s;
  const double n = static_cast<double>(rows.size());
  for (int f = 0; f < kNumFeatures; ++f) {
    double mean = 0.0;
    for (const auto& r : rows) mean += r(f);
    mean /= n;
    double var = 0.0;
    for (const auto& r : rows) var += (r(f) - mean) * (r(f) - mean);
    var /= n;
    s.mean[f] = mean;
    s.stddev[f] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return s;
}

void FeatureStats::validate() const {
  for (int f = 0; f < kNumFeatures; ++f) {
    if (!std::isfinite(mean[f])) throw ValidationError("feature stats: non-finite mean");
    if (!(stddev[f] > 0.0) || !std::isfinite(stddev[f])) {
      throw ValidationError("feature stats: std must be finite and > 0");
    }
  }
}

std::vector<FeatureRow> raw_features(const EpochObservations& epoch, const WlsSolution& wls,
                                     const LocalFrame& frame) {
  if (wls.residuals.size() != epoch.observations.size()) {
    throw ValidationError("features: WLS solution does not match epoch " +
                          std::to_string(epoch.epoch_index));
  }
  const Eigen::Vector3d receiver = wls.state.position.vec();
  std::vector<FeatureRow> rows;
  for (int idx : canonical_order(epoch)) {
    const auto& obs = epoch.observations[idx];
    const Eigen::Vector3d sat = ecef_to_enu(obs.sat_pos, frame).vec();
    FeatureRow row;
    row << sky_direction_enu(sat, receiver).elevation, obs.pseudorange, obs.cn0,
        wls.residuals[idx];
    if (!row.allFinite()) {
      throw ValidationError("features: missing or non-finite feature for " + obs.sat_id +
                            " at epoch " + std::to_string(epoch.epoch_index));
    }
    rows.push_back(row);
  }
  return rows;
}

SatelliteFeatures normalize_features(const std::vector<FeatureRow>& rows,
                                     const FeatureStats& stats) {
  SatelliteFeatures out;
  out.values.resize(static_cast<Eigen::Index>(rows.size()), kNumFeatures);
  out.valid.assign(rows.size(), 1);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int f = 0; f < kNumFeatures; ++f) {
      out.values(static_cast<Eigen::Index>(i), f) = (rows[i](f) - stats.mean[f]) / stats.stddev[f];
    }
  }
  return out;
}

SatelliteFeatures assemble_features(const EpochObservations& epoch, const WlsSolution& wls,
                                    const FeatureStats& stats, const LocalFrame& frame) {
  return normalize_features(raw_features(epoch, wls, frame), stats);
}

// ---------------------------------------------------------------- model

void WgnConfig::validate() const {
  if (d_model < 1 || ff_dim < 1 || head_hidden < 1 || num_layers < 0) {
    throw ValidationError("wgn: layer sizes must be positive");
  }
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ValidationError("wgn: leaky_slope in [0, 1)");
  if (!(ln_eps > 0.0)) throw ValidationError("wgn: ln_eps must be > 0");
  if (!(w_min >= 0.0) || !std::isfinite(w_min)) throw ValidationError("wgn: w_min must be >= 0");
}

int WgnModel::add(const std::string& name, int rows, int cols) {
  tensors_.push_back({name, Mat::Zero(rows, cols)});
  return static_cast<int>(tensors_.size()) - 1;
}

WgnModel::WgnModel(const WgnConfig& config, std::uint64_t init_seed) : config_(config) {
  config_.validate();
  const int d = config_.d_model;
  std::vector<int> fan_in;
  auto linear = [&](const std::string& name, int in, int out, bool bias, int* w, int* b) {
    *w = add(name + ".weight", in, out);
    fan_in.push_back(in);
    if (bias) {
      *b = add(name + ".bias", 1, out);
      fan_in.push_back(in);
    }
  };
  linear("proj", kNumFeatures, d, true, &proj_w_, &proj_b_);
  for (int l = 0; l < config_.num_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    LayerIndex li{};
    linear(p + "attn.query", d, d, true, &li.wq, &li.bq);
    linear(p + "attn.key", d, d, false, &li.wk, nullptr);
    linear(p + "attn.value", d, d, true, &li.wv, &li.bv);
    linear(p + "attn.out", d, d, true, &li.wo, &li.bo);
    li.ln1_g = add(p + "norm1.gamma", 1, d);
    fan_in.push_back(0);
    li.ln1_b = add(p + "norm1.beta", 1, d);
    fan_in.push_back(0);
    linear(p + "ff1", d, config_.ff_dim, true, &li.ff1_w, &li.ff1_b);
    linear(p + "ff2", config_.ff_dim, d, true, &li.ff2_w, &li.ff2_b);
    li.ln2_g = add(p + "norm2.gamma", 1, d);
    fan_in.push_back(0);
    li.ln2_b = add(p + "norm2.beta", 1, d);
    fan_in.push_back(0);
    layers_.push_back(li);
  }
  linear("head1", d, config_.head_hidden, true, &head1_w_, &head1_b_);
  linear("head2", config_.head_hidden, 1, true, &head2_w_, &head2_b_);

  std::mt19937_64 rng(init_seed);
  for (std::size_t t = 0; t < tensors_.size(); ++t) {
    Mat& m = tensors_[t].value;
    if (fan_in[t] == 0) {
      // layer norm: gamma = 1, beta = 0
      if (tensors_[t].name.ends_with("gamma")) m.setOnes();
      continue;
    }
    std::uniform_real_distribution<double> u(-1.0 / std::sqrt(fan_in[t]),
                                             1.0 / std::sqrt(fan_in[t]));
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = u(rng);
    }
  }
}

void WgnModel::set_stats(const FeatureStats& stats) {
  stats.validate();
  stats_ = stats;
}

Eigen::MatrixXd& WgnModel::tensor(const std::string& name) {
  for (auto& t : tensors_) {
    if (t.name == name) return t.value;
  }
  throw ValidationError("wgn: unknown tensor '" + name + "'");
}

const Eigen::MatrixXd& WgnModel::tensor(const std::string& name) const {
  return const_cast<WgnModel*>(this)->tensor(name);
}

std::size_t WgnModel::num_parameters() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
  return n;
}

WgnGradients WgnModel::zero_gradients() const {
  WgnGradients g;
  g.reserve(tensors_.size());
  for (const auto& t : tensors_) g.push_back(Mat::Zero(t.value.rows(), t.value.cols()));
  return g;
}

FactorWeights WgnModel::forward(const SatelliteFeatures& features, WgnTape* tape) const {
  const int n = features.size();
  if (features.values.cols() != kNumFeatures) throw ValidationError("wgn: expected 4 features");
  if (static_cast<int>(features.valid.size()) != n) throw ValidationError("wgn: mask size mismatch");
  int valid_count = 0;
  for (char v : features.valid) valid_count += v ? 1 : 0;
  if (valid_count == 0) throw ValidationError("wgn: no unmasked satellite");

  const double slope = config_.leaky_slope;
  const double scale = 1.0 / std::sqrt(static_cast<double>(config_.d_model));
  auto P = [this](int idx) -> const Mat& { return tensors_[idx].value; };

  WgnTape local;
  WgnTape& tp = tape ? *tape : local;
  tp.valid = features.valid;
  tp.input = features.values;
  for (int i = 0; i < n; ++i) {
    if (!features.valid[i]) tp.input.row(i).setZero();
  }
  tp.proj_pre = affine(tp.input, P(proj_w_), P(proj_b_));
  Mat x = leaky(tp.proj_pre, slope);

  tp.layers.assign(layers_.size(), {});
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const LayerIndex& li = layers_[l];
    WgnTape::Layer& c = tp.layers[l];
    c.x_in = x;
    c.q = affine(x, P(li.wq), P(li.bq));
    c.k = x * P(li.wk);
    c.v = affine(x, P(li.wv), P(li.bv));
    Mat s = c.q * c.k.transpose() * scale;
    c.attn.resize(n, n);
    for (int i = 0; i < n; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < n; ++j) {
        if (features.valid[j]) mx = std::max(mx, s(i, j));
      }
      double sum = 0.0;
      for (int j = 0; j < n; ++j) {
        c.attn(i, j) = features.valid[j] ? std::exp(s(i, j) - mx) : 0.0;
        sum += c.attn(i, j);
      }
      c.attn.row(i) /= sum;
    }
    c.ctx = c.attn * c.v;
    const Mat r1 = x + affine(c.ctx, P(li.wo), P(li.bo));
    c.h1 = layer_norm(r1, config_.ln_eps, c.xhat1, c.inv_std1, P(li.ln1_g), P(li.ln1_b));
    c.f1 = affine(c.h1, P(li.ff1_w), P(li.ff1_b));
    c.g1 = leaky(c.f1, slope);
    const Mat r2 = c.h1 + affine(c.g1, P(li.ff2_w), P(li.ff2_b));
    x = layer_norm(r2, config_.ln_eps, c.xhat2, c.inv_std2, P(li.ln2_g), P(li.ln2_b));
  }
  tp.enc_out = x;
  tp.head_pre = affine(x, P(head1_w_), P(head1_b_));
  tp.head_act = leaky(tp.head_pre, slope);
  tp.z = affine(tp.head_act, P(head2_w_), P(head2_b_)).col(0);

  FactorWeights out;
  out.z = tp.z;
  out.w.resize(n);
  out.sigma.resize(n);
  out.information.resize(n);
  for (int i = 0; i < n; ++i) {
    if (!features.valid[i]) {
      out.w(i) = 0.0;
      out.sigma(i) = std::numeric_limits<double>::infinity();
      out.information(i) = 0.0;
      continue;
    }
    out.w(i) = sigmoid(tp.z(i)) + config_.w_min;
    out.sigma(i) = 1.0 / out.w(i);
    out.information(i) = out.w(i) * out.w(i);
  }
  tp.w = out.w;
  return out;
}

void WgnModel::backward(const WgnTape& tape, const Eigen::VectorXd& d_information,
                        WgnGradients& grads) const {
  const int n = static_cast<int>(tape.z.size());
  if (d_information.size() != n) throw ValidationError("wgn backward: gradient size mismatch");
  if (grads.size() != tensors_.size()) throw ValidationError("wgn backward: gradient shape mismatch");
  const double slope = config_.leaky_slope;
  const double scale = 1.0 / std::sqrt(static_cast<double>(config_.d_model));
  auto P = [this](int idx) -> const Mat& { return tensors_[idx].value; };

  // dOmega/dz = 2 w * s (1 - s)
  Mat dz(n, 1);
  for (int i = 0; i < n; ++i) {
    if (!tape.valid[i]) {
      dz(i, 0) = 0.0;
      continue;
    }
    const double s = sigmoid(tape.z(i));
    dz(i, 0) = d_information(i) * 2.0 * tape.w(i) * s * (1.0 - s);
  }

  grads[head2_w_] += tape.head_act.transpose() * dz;
  grads[head2_b_] += dz.colwise().sum();
  const Mat d_head_pre = leaky_back(tape.head_pre, dz * P(head2_w_).transpose(), slope);
  grads[head1_w_] += tape.enc_out.transpose() * d_head_pre;
  grads[head1_b_] += d_head_pre.colwise().sum();
  Mat dx = d_head_pre * P(head1_w_).transpose();

  for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
    const LayerIndex& li = layers_[l];
    const WgnTape::Layer& c = tape.layers[l];

    const Mat dr2 = layer_norm_back(dx, c.xhat2, c.inv_std2, P(li.ln2_g), grads[li.ln2_g],
                                    grads[li.ln2_b]);
    grads[li.ff2_w] += c.g1.transpose() * dr2;
    grads[li.ff2_b] += dr2.colwise().sum();
    const Mat df1 = leaky_back(c.f1, dr2 * P(li.ff2_w).transpose(), slope);
    grads[li.ff1_w] += c.h1.transpose() * df1;
    grads[li.ff1_b] += df1.colwise().sum();
    const Mat dh1 = dr2 + df1 * P(li.ff1_w).transpose();

    const Mat dr1 = layer_norm_back(dh1, c.xhat1, c.inv_std1, P(li.ln1_g), grads[li.ln1_g],
                                    grads[li.ln1_b]);
    grads[li.wo] += c.ctx.transpose() * dr1;
    grads[li.bo] += dr1.colwise().sum();
    const Mat dctx = dr1 * P(li.wo).transpose();
    const Mat dattn = dctx * c.v.transpose();
    const Mat dv = c.attn.transpose() * dctx;
    Mat ds(n, n);
    for (int i = 0; i < n; ++i) {
      const double dot = dattn.row(i).dot(c.attn.row(i));
      ds.row(i) = c.attn.row(i).array() * (dattn.row(i).array() - dot);
    }
    ds *= scale;
    const Mat dq = ds * c.k;
    const Mat dk = ds.transpose() * c.q;

    grads[li.wq] += c.x_in.transpose() * dq;
    grads[li.bq] += dq.colwise().sum();
    grads[li.wk] += c.x_in.transpose() * dk;
    grads[li.wv] += c.x_in.transpose() * dv;
    grads[li.bv] += dv.colwise().sum();
    dx = dr1 + dq * P(li.wq).transpose() + dk * P(li.wk).transpose() +
         dv * P(li.wv).transpose();
  }

  const Mat d_proj = leaky_back(tape.proj_pre, dx, slope);
  grads[proj_w_] += tape.input.transpose() * d_proj;
  grads[proj_b_] += d_proj.colwise().sum();
}

double gradient_norm(const WgnGradients& grads) {
  double s = 0.0;
  for (const auto& g : grads) s += g.squaredNorm();
  return std::sqrt(s);
}

}  // namespace cdfgo
