#include "cdfgo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "cdfgo/error.hpp"

namespace cdfgo {

namespace {
constexpr std::uint64_t kValidationStream = 0x76616c6964ULL;
constexpr std::uint64_t kShuffleStream = 0x73687566ULL;
}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ValidationError("train.learning_rate must be >= 0");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ValidationError("train.beta1/beta2 must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ValidationError("train.adam_eps must be > 0");
  if (batch_size < 1) throw ValidationError("train.batch_size must be >= 1");
  if (passes < 0) throw ValidationError("train.passes must be >= 0");
  if (!(grad_clip_norm > 0.0)) throw ValidationError("train.grad_clip_norm must be > 0");
  if (window_stride < 1) throw ValidationError("train.window_stride must be >= 1");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ValidationError("train.validation_fraction must lie in [0, 1)");
  }
  loss.validate();
  wgn.validate();
}

void adam_update(WgnModel& model, AdamState& adam, const WgnGradients& grads,
                 const TrainConfig& cfg) {
  auto& tensors = model.tensors();
  if (adam.m.empty()) {
    adam.m = model.zero_gradients();
    adam.v = model.zero_gradients();
  }
  ++adam.step;
  const double t = static_cast<double>(adam.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    adam.m[k] = cfg.beta1 * adam.m[k] + (1.0 - cfg.beta1) * grads[k];
    adam.v[k] = cfg.beta2 * adam.v[k] + (1.0 - cfg.beta2) * grads[k].cwiseAbs2();
    if (cfg.learning_rate == 0.0) continue;
    tensors[k].value.array() -= cfg.learning_rate * (adam.m[k].array() / c1) /
                                ((adam.v[k].array() / c2).sqrt() + cfg.adam_eps);
  }
}

double clip_gradients(WgnGradients& grads, double max_norm) {
  const double norm = gradient_norm(grads);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads) g *= s;
  }
  return norm;
}

Trainer::Trainer(const PreparedRun& run, const TrainConfig& cfg) : run_(run), cfg_(cfg) {
  cfg_.validate();
  if (!run_.has_truth()) throw ValidationError("train: dataset has epochs without ground truth");
  const std::vector<int> all = make_windows(run_.size(), kWindowLength, cfg_.window_stride);
  const int n_val = static_cast<int>(std::floor(cfg_.validation_fraction * all.size()));
  const int n_train = static_cast<int>(all.size()) - n_val;
  if (n_train < 1) throw ValidationError("train: no training windows after the validation split");
  train_windows_.assign(all.begin(), all.begin() + n_train);
  // Drop validation windows that overlap the training block.
  const int train_end = train_windows_.back() + kWindowLength;
  for (int i = n_train; i < static_cast<int>(all.size()); ++i) {
    if (all[i] >= train_end) validation_windows_.push_back(all[i]);
  }
  if (validation_windows_.empty() && n_val > 0) validation_windows_.push_back(all.back());
}

WindowSettings Trainer::settings() const {
  WindowSettings s;
  s.objective = cfg_.objective;
  s.loss = cfg_.loss;
  s.solver = cfg_.solver;
  return s;
}

TrainState Trainer::initial_state() const {
  TrainState state;
  state.model = WgnModel(cfg_.wgn, derive_seed(cfg_.seed, 0x696e6974ULL));
  const int last = train_windows_.back() + kWindowLength;
  state.model.set_stats(FeatureStats::fit(collect_features(run_, 0, last)));
  state.adam.m = state.model.zero_gradients();
  state.adam.v = state.model.zero_gradients();
  state.best_model = state.model;
  return state;
}

std::vector<int> Trainer::pass_order(int pass) const {
  std::vector<int> order = train_windows_;
  std::mt19937_64 rng(derive_seed(cfg_.seed, kShuffleStream, static_cast<std::uint64_t>(pass)));
  // Fisher-Yates with an explicit index draw so the order does not depend on
  // the standard library's shuffle implementation.
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

double Trainer::train_step(TrainState& state, std::span<const int> batch) const {
  const WindowSettings ws = settings();
  WgnGradients grads = state.model.zero_gradients();
  double loss = 0.0;
  int nonconverged = 0;
  bool finite = true;
  const std::int64_t step = state.adam.step;
  for (int start : batch) {
    try {
      const WindowResult r =
          window_loss(state.model, run_, start, ws,
                      derive_seed(cfg_.seed, static_cast<std::uint64_t>(step),
                                  static_cast<std::uint64_t>(start)),
                      &grads);
      if (!r.converged) ++nonconverged;
      if (!std::isfinite(r.loss)) finite = false;
      loss += r.loss;
    } catch (const NumericalError&) {
      finite = false;
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (auto& g : grads) g *= inv;
  loss *= inv;

  TrainLogRow row;
  row.pass = state.pass;
  row.nonconverged_windows = nonconverged;
  double norm = gradient_norm(grads);
  if (!finite || !std::isfinite(norm)) {
    ++state.skipped_steps;
    row.step = state.adam.step;
    row.loss = std::numeric_limits<double>::quiet_NaN();
    row.grad_norm = norm;
    row.skipped_steps = state.skipped_steps;
    state.log.push_back(row);
    return row.loss;
  }
  norm = clip_gradients(grads, cfg_.grad_clip_norm);
  adam_update(state.model, state.adam, grads, cfg_);
  row.step = state.adam.step;
  row.loss = loss;
  row.grad_norm = norm;
  row.skipped_steps = state.skipped_steps;
  state.log.push_back(row);
  return loss;
}

double Trainer::validation_loss(const WgnModel& model) const {
  if (validation_windows_.empty()) return std::numeric_limits<double>::quiet_NaN();
  const WindowSettings ws = settings();
  double total = 0.0;
  for (int start : validation_windows_) {
    try {
      total += window_loss(model, run_, start, ws,
                           derive_seed(cfg_.seed, kValidationStream,
                                       static_cast<std::uint64_t>(start)),
                           nullptr)
                   .loss;
    } catch (const NumericalError&) {
      return std::numeric_limits<double>::infinity();
    }
  }
  return total / static_cast<double>(validation_windows_.size());
}

void Trainer::run(TrainState& state, std::optional<std::int64_t> stop_at_step,
                  const std::function<void(const TrainState&)>& on_pass_end) const {
  const int bs = cfg_.batch_size;
  while (state.pass < cfg_.passes) {
    const std::vector<int> order = pass_order(state.pass);
    const int batches = static_cast<int>((order.size() + bs - 1) / bs);
    while (state.batch_cursor < batches) {
      const std::int64_t done = state.adam.step + state.skipped_steps;
      if (stop_at_step && done >= *stop_at_step) return;
      const std::size_t b = static_cast<std::size_t>(state.batch_cursor) * bs;
      const std::size_t e = std::min(order.size(), b + bs);
      train_step(state, std::span<const int>(order.data() + b, e - b));
      ++state.batch_cursor;
    }
    ValidationRow vr;
    vr.pass = state.pass;
    vr.loss = validation_loss(state.model);
    if (validation_windows_.empty() || vr.loss < state.best_validation) {
      if (!validation_windows_.empty()) state.best_validation = vr.loss;
      state.best_pass = state.pass;
      state.best_model = state.model;
      vr.best = true;
    }
    state.validation.push_back(vr);
    ++state.pass;
    state.batch_cursor = 0;
    if (on_pass_end) on_pass_end(state);
  }
}

}  // namespace cdfgo
