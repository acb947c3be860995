#include <gtest/gtest.h>

#include "cdfgo/error.hpp"
#include "cdfgo/io.hpp"
#include "cdfgo/trainer.hpp"
#include "support.hpp"

using namespace cdfgo;

namespace {

TrainConfig small_config(Objective o = Objective::Combined) {
  TrainConfig c;
  c.objective = o;
  c.batch_size = 4;
  c.passes = 2;
  c.seed = 5;
  c.loss.mc_samples = 256;
  c.wgn.d_model = 16;
  c.wgn.ff_dim = 16;
  c.wgn.head_hidden = 8;
  return c;
}

bool same_tensors(const WgnModel& a, const WgnModel& b) {
  for (std::size_t t = 0; t < a.tensors().size(); ++t) {
    if (a.tensors()[t].value != b.tensors()[t].value) return false;
  }
  return true;
}

const PreparedRun& harsh_run() {
  static const SimulatedRun sim = generate(test::harsh(40, 77));
  static const PreparedRun run = test::prepare(sim);
  return run;
}

}  // namespace

TEST(MakeWindows, Counts) {
  EXPECT_EQ(make_windows(5, 5, 1), std::vector<int>{0});
  EXPECT_EQ(make_windows(10, 5, 1).size(), 6u);
  EXPECT_EQ(make_windows(10, 5, 5), (std::vector<int>{0, 5}));
  EXPECT_EQ(make_windows(12, 5, 5), (std::vector<int>{0, 5}));
  EXPECT_EQ(make_covering_windows(12, 5, 5), (std::vector<int>{0, 5, 7}));
  EXPECT_THROW(make_windows(4, 5, 1), ValidationError);
  EXPECT_THROW(make_windows(10, 5, 0), ValidationError);
}

TEST(Trainer, ValidationSplitIsContiguousAndDisjoint) {
  const auto sim = generate(test::harsh(200, 78));
  const auto run = test::prepare(sim);
  Trainer t(run, small_config());
  // 196 windows: 19 held out, the 4 that share epochs with training dropped
  const auto& tr = t.train_windows();
  const auto& va = t.validation_windows();
  EXPECT_EQ(tr.size(), 177u);
  ASSERT_EQ(va.size(), 15u);
  EXPECT_EQ(va.front(), tr.back() + kWindowLength);
  for (std::size_t i = 1; i < va.size(); ++i) EXPECT_EQ(va[i], va[i - 1] + 1);
  EXPECT_EQ(va.back(), 195);
}

TEST(Trainer, PassOrderIsDeterministicPermutation) {
  Trainer t(harsh_run(), small_config());
  auto a = t.pass_order(3);
  EXPECT_EQ(a, t.pass_order(3));
  EXPECT_NE(a, t.pass_order(4));
  std::sort(a.begin(), a.end());
  EXPECT_EQ(a, t.train_windows());
}

TEST(Trainer, ZeroLearningRateLeavesParameters) {
  auto cfg = small_config();
  cfg.learning_rate = 0.0;
  Trainer t(harsh_run(), cfg);
  auto state = t.initial_state();
  const WgnModel before = state.model;
  const int batch[] = {0, 3, 7};
  for (int i = 0; i < 3; ++i) t.train_step(state, batch);
  EXPECT_TRUE(same_tensors(before, state.model));
  EXPECT_EQ(state.adam.step, 3);
}

TEST(Trainer, ClipAndAdam) {
  WgnModel m;
  auto g = m.zero_gradients();
  g[0].setConstant(3.0);
  const double n0 = gradient_norm(g);
  EXPECT_DOUBLE_EQ(clip_gradients(g, 1.0), n0);
  EXPECT_NEAR(gradient_norm(g), 1.0, 1e-12);
  EXPECT_NEAR(clip_gradients(g, 5.0), 1.0, 1e-12);

  // First Adam step moves every touched entry by lr in the -sign(g) direction.
  TrainConfig cfg;
  AdamState adam;
  WgnModel after = m;
  g[0](0, 0) = -2.0;
  adam_update(after, adam, g, cfg);
  const Eigen::MatrixXd d = after.tensors()[0].value - m.tensors()[0].value;
  EXPECT_NEAR(d(0, 0), 1e-3, 1e-9);
  EXPECT_NEAR(d(1, 1), -1e-3, 1e-9);
  EXPECT_EQ(after.tensors()[1].value, m.tensors()[1].value);
}

TEST(Trainer, MaeNeverReadsCovariance) {
  Trainer t(harsh_run(), small_config(Objective::Mae));
  const auto state = t.initial_state();
  for (int start : {0, 5, 11}) {
    const auto r = window_loss(state.model, harsh_run(), start, t.settings(), 1, nullptr);
    for (const auto& l : r.epoch_losses) EXPECT_EQ(l.d_cov, Eigen::Matrix2d::Zero());
  }
}

TEST(Trainer, EveryParameterReceivesGradient) {
  Trainer t(harsh_run(), small_config(Objective::Combined));
  const auto state = t.initial_state();
  auto grads = state.model.zero_gradients();
  for (int start : {0, 1, 2, 3}) {
    window_loss(state.model, harsh_run(), start, t.settings(), derive_seed(1, start), &grads);
  }
  for (std::size_t k = 0; k < grads.size(); ++k) {
    EXPECT_GT(grads[k].cwiseAbs().minCoeff(), 0.0) << state.model.tensors()[k].name;
  }
}

TEST(Trainer, NonFiniteStepIsSkipped) {
  Trainer t(harsh_run(), small_config());
  auto state = t.initial_state();
  state.model.tensor("head2.bias")(0, 0) = std::nan("");
  const WgnModel before = state.model;
  const int batch[] = {0};
  EXPECT_TRUE(std::isnan(t.train_step(state, batch)));
  EXPECT_EQ(state.skipped_steps, 1);
  EXPECT_EQ(state.adam.step, 0);
  ASSERT_EQ(state.log.size(), 1u);
  EXPECT_EQ(state.log[0].skipped_steps, 1);
  for (std::size_t k = 0; k + 1 < before.tensors().size(); ++k) {
    EXPECT_EQ(before.tensors()[k].value, state.model.tensors()[k].value);
  }
}

TEST(Trainer, DeterministicTraces) {
  const auto cfg = small_config();
  Trainer t(harsh_run(), cfg);
  auto a = t.initial_state();
  auto b = t.initial_state();
  t.run(a, 12);
  t.run(b, 12);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].loss, b.log[i].loss);
  EXPECT_TRUE(same_tensors(a.model, b.model));
}

TEST(Trainer, ResumeFromCheckpointIsBitExact) {
  const auto cfg = small_config();
  Trainer t(harsh_run(), cfg);
  auto full = t.initial_state();
  t.run(full);

  auto part = t.initial_state();
  t.run(part, 11);  // stops mid-pass
  ASSERT_GT(part.batch_cursor, 0);
  const auto ck = checkpoint_from_json(checkpoint_to_json(cfg, part));
  auto resumed = ck.state;
  Trainer(harsh_run(), ck.config).run(resumed);

  EXPECT_TRUE(same_tensors(full.model, resumed.model));
  EXPECT_TRUE(same_tensors(full.best_model, resumed.best_model));
  EXPECT_EQ(full.adam.step, resumed.adam.step);
  ASSERT_EQ(full.log.size(), resumed.log.size());
  for (std::size_t i = 0; i < full.log.size(); ++i) EXPECT_EQ(full.log[i].loss, resumed.log[i].loss);
  EXPECT_EQ(full.best_validation, resumed.best_validation);
}

// One window, noiseless data, one satellite biased by +30 m in every epoch.
TEST(Trainer, ToyContaminatedFactorIsSuppressed) {
  auto sim = generate(test::open_sky(5, 41));
  std::string target;
  for (const auto& o : sim.epochs[0].observations) {
    const bool everywhere = std::all_of(sim.epochs.begin(), sim.epochs.end(), [&](const auto& ep) {
      return std::any_of(ep.observations.begin(), ep.observations.end(),
                         [&](const auto& q) { return q.sat_id == o.sat_id; });
    });
    if (everywhere && o.constellation == Constellation::GpsQzss) {
      target = o.sat_id;
      break;
    }
  }
  ASSERT_FALSE(target.empty());
  for (auto& ep : sim.epochs) {
    for (auto& o : ep.observations) {
      if (o.sat_id != target) continue;
      o.pseudorange += 30.0;
      o.truth_contamination = 30.0;
    }
  }
  const auto run = test::prepare(sim);

  TrainConfig cfg;
  cfg.objective = Objective::Nll;
  cfg.validation_fraction = 0.0;
  cfg.learning_rate = 3e-3;
  cfg.seed = 3;
  Trainer t(run, cfg);
  auto state = t.initial_state();
  const int batch[] = {0};
  for (int i = 0; i < 200; ++i) t.train_step(state, batch);
  EXPECT_EQ(state.skipped_steps, 0);

  for (const auto& ep : run.epochs) {
    const auto w = state.model.forward(epoch_features(ep, state.model)).w;
    for (int i = 0; i < ep.size(); ++i) {
      if (ep.sat_ids[i] == target) {
        EXPECT_LT(w(i), 0.1) << "epoch " << ep.epoch_index;
      } else {
        EXPECT_GT(w(i), 0.4) << ep.sat_ids[i];
      }
    }
  }
}

// Noiseless data: training on NLL drives held-out loss well below where it
// started, and the best-pass bookkeeping tracks the minimum.
TEST(Trainer, NoiselessValidationLossDecreases) {
  const auto sim = generate(test::open_sky(30, 8));
  const auto run = test::prepare(sim);
  auto cfg = small_config(Objective::Nll);
  cfg.passes = 6;
  cfg.validation_fraction = 0.2;
  cfg.learning_rate = 3e-3;
  Trainer t(run, cfg);
  auto state = t.initial_state();
  const double initial = t.validation_loss(state.model);
  t.run(state);
  ASSERT_EQ(state.validation.size(), 6u);
  double best = initial;
  for (const auto& v : state.validation) best = std::min(best, v.loss);
  EXPECT_EQ(state.best_validation, best);
  EXPECT_LT(state.validation.back().loss, initial - 0.5);
  EXPECT_DOUBLE_EQ(t.validation_loss(state.best_model), state.best_validation);
}

TEST(Trainer, RejectsBadConfigAndMissingTruth) {
  auto cfg = small_config();
  cfg.batch_size = 0;
  EXPECT_THROW(Trainer(harsh_run(), cfg), ValidationError);
  cfg = small_config();
  cfg.learning_rate = -1.0;
  EXPECT_THROW(cfg.validate(), ValidationError);

  auto sim = generate(test::harsh(6, 2));
  sim.epochs[3].truth_position.reset();
  const auto run = test::prepare(sim);
  EXPECT_THROW(Trainer(run, small_config()), ValidationError);
}
