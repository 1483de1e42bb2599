#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "nowcast/train.hpp"
#include "oracles.hpp"

using namespace nowcast;
using namespace nowcast::train;
using nowcast::testing::random_tensor;

namespace {

std::vector<PlateauScheduler::Decision> run_trace(const std::vector<double>& losses, TrainConfig c = {}) {
  PlateauScheduler s(c);
  std::vector<PlateauScheduler::Decision> out;
  for (double l : losses) out.push_back(s.step(l));
  return out;
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.in_channels = 2;
  m.out_channels = 1;
  m.base_channels = 2;
  m.cbam_reduction = 2;
  m.cbam_kernel = 3;
  return m;
}

struct Fixture {
  std::shared_ptr<data::FrameSeries> series;
  data::DatasetSplits splits;
};

Fixture tiny_data(std::size_t frames = 60) {
  auto s = data::synth_generate({.seed = 11, .frames = frames, .height = 32, .width = 32});
  data::DatasetOptions opt{.spec = {.input_frames = 2, .target_offsets = {1}, .stride = 1}, .rain_fraction = 0.0};
  auto splits = data::build_datasets(s, opt);
  return {std::make_shared<data::FrameSeries>(std::move(s)), std::move(splits)};
}

TrainConfig quick(std::size_t epochs) {
  TrainConfig c;
  c.max_epochs = epochs;
  c.batch_size = 8;
  c.seed = 3;
  return c;
}

bool same_state(const NamedTensors<double>& a, const NamedTensors<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].first != b[i].first || !std::ranges::equal(a[i].second.data(), b[i].second.data())) return false;
  return true;
}

}  // namespace

TEST(Scheduler, PlateauDropAfterFourFlatEpochs) {
  const auto d = run_trace({1.0, 0.9, 0.95, 0.96, 0.97, 0.98});
  for (std::size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(d[i].lr, 1e-3) << i;
  EXPECT_TRUE(d[5].lr_dropped);
  EXPECT_DOUBLE_EQ(d[5].lr, 1e-4);
}

TEST(Scheduler, StrictlyDecreasingNeverDrops) {
  std::vector<double> losses;
  for (int i = 0; i < 200; ++i) losses.push_back(1.0 - 1e-3 * i);
  const auto d = run_trace(losses);
  for (const auto& x : d) {
    EXPECT_FALSE(x.lr_dropped);
    EXPECT_FALSE(x.stop);
    EXPECT_DOUBLE_EQ(x.lr, 1e-3);
  }
}

TEST(Scheduler, FlatLossStopsAtFifteen) {
  PlateauScheduler s(TrainConfig{});
  std::size_t stopped = 0;
  for (std::size_t e = 1; e <= 40 && stopped == 0; ++e)
    if (s.step(1.0).stop) stopped = e;
  EXPECT_EQ(stopped, 15u);
  EXPECT_EQ(s.best_epoch(), 1u);
  EXPECT_EQ(s.best(), 1.0);
}

TEST(Scheduler, EqualLossIsNotImprovement) {
  const auto d = run_trace({1.0, 0.5, 0.5});
  EXPECT_TRUE(d[1].improved);
  EXPECT_FALSE(d[2].improved);
}

TEST(Scheduler, NanIsAnError) {
  PlateauScheduler s(TrainConfig{});
  s.step(1.0);
  EXPECT_THROW(s.step(std::nan("")), NumericError);
}

TEST(Scheduler, RandomTracesKeepRatesOnTheDecadeLadder) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    PlateauScheduler s(TrainConfig{});
    for (int e = 0; e < 60; ++e) {
      const auto d = s.step(rng.uniform());
      const double k = std::log10(1e-3 / d.lr);
      EXPECT_NEAR(k, std::round(k), 1e-9);
      EXPECT_LE(s.drops(), s.epoch() / 4);
    }
  }
}

TEST(Scheduler, SerialisationRoundTrip) {
  PlateauScheduler s(TrainConfig{});
  for (double l : {1.0, 0.8, 0.9, 0.9}) s.step(l);
  std::stringstream ss;
  s.write(ss);
  PlateauScheduler t;
  t.read(ss);
  EXPECT_EQ(t.best(), s.best());
  EXPECT_EQ(t.epoch(), s.epoch());
  EXPECT_EQ(t.since_lr_drop(), s.since_lr_drop());
  EXPECT_EQ(t.step(0.95).lr_dropped, s.step(0.95).lr_dropped);
}

TEST(Adam, ZeroGradientLeavesParameterUnchanged) {
  Rng rng(2);
  auto p = random_tensor<double>({1, 1, 3, 3}, rng, -1, 1, true);
  const auto before = p.clone();
  Adam<double> opt;
  for (int i = 0; i < 3; ++i) opt.step({{"p", p}}, 1e-2);
  EXPECT_TRUE(std::ranges::equal(p.data(), before.data()));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Rng rng(3);
  auto p = random_tensor<double>({1, 2, 4, 4}, rng, -1, 1, true);
  const auto before = p.clone();
  for (auto& g : p.grad()) g = rng.uniform(-1, 1);
  const double lr = 1e-3;
  Adam<double> opt;
  opt.step({{"p", p}}, lr);
  for (std::size_t i = 0; i < p.numel(); ++i) {
    const double delta = std::abs(p.data()[i] - before.data()[i]);
    EXPECT_GE(delta, 0.99 * lr);
    EXPECT_LE(delta, lr * (1 + 1e-12));
    EXPECT_EQ(std::signbit(p.data()[i] - before.data()[i]), !std::signbit(p.grad()[i]));
  }
}

TEST(Adam, QuadraticBowlDecreases) {
  Rng rng(4);
  auto p = random_tensor<double>({1, 1, 4, 4}, rng, -2, 2, true);
  const auto target = random_tensor<double>({1, 1, 4, 4}, rng, -1, 1);
  Adam<double> opt;
  std::vector<double> losses;
  for (int i = 0; i < 50; ++i) {
    Tape<double> tape;
    p.zero_grad();
    auto loss = ops::mse(&tape, p, target);
    losses.push_back(loss.item());
    tape.backward(loss);
    opt.step({{"p", p}}, 1e-2);
  }
  for (std::size_t i = 2; i < losses.size(); ++i) EXPECT_LT(losses[i], losses[i - 1]) << i;
}

TEST(Adam, MissingGradientBufferNamesParameter) {
  Tensor<double> p({1, 1, 2, 2});
  Adam<double> opt;
  try {
    opt.step({{"enc0.weight", p}}, 1e-3);
    FAIL();
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("enc0.weight"), std::string::npos);
  }
}

TEST(Loss, MseExamples) {
  Tape<double>* const none = nullptr;
  Tensor<double> a({1, 1, 1, 4}, {1, 2, 3, 4});
  Tensor<double> b({1, 1, 1, 4}, {1, 2, 3, 4});
  EXPECT_EQ(mse_loss(none, a, b).item(), 0.0);
  Tensor<double> c({1, 1, 1, 4}, {0, 2, 3, 6});
  EXPECT_DOUBLE_EQ(mse_loss(none, a, c).item(), (1.0 + 4.0) / 4.0);
}

TEST(Config, ValidationRejectsNonsense) {
  TrainConfig c;
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.lr0 = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.lr_factor = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Fit, SingleEpochRecordsHistory) {
  auto fx = tiny_data();
  SarUNet<double> model(tiny_model(), 1);
  auto r = fit(model, fx.splits.train, fx.splits.val, quick(1));
  ASSERT_EQ(r.history().size(), 1u);
  EXPECT_EQ(r.history()[0].epoch, 1u);
  EXPECT_TRUE(std::isfinite(r.history()[0].train_mse));
  EXPECT_DOUBLE_EQ(r.history()[0].lr, 1e-3);
  EXPECT_FALSE(model.training());
}

TEST(Fit, BestValidationIsHistoryMinimumAndModelHoldsIt) {
  auto fx = tiny_data();
  SarUNet<double> model(tiny_model(), 1);
  auto c = quick(8);
  c.plateau_patience = 2;
  auto r = fit(model, fx.splits.train, fx.splits.val, c);
  double lo = INFINITY;
  std::size_t arg = 0;
  for (const auto& h : r.history()) {
    if (h.val_mse < lo) lo = h.val_mse, arg = h.epoch;
    const double k = std::log10(c.lr0 / h.lr);
    EXPECT_NEAR(k, std::round(k), 1e-9);
  }
  EXPECT_EQ(r.best_val(), lo);
  EXPECT_EQ(r.best_epoch(), arg);
  EXPECT_EQ(evaluate_mse(model, fx.splits.val, c.batch_size), lo);
}

TEST(Fit, DeterministicAcrossRuns) {
  auto fx = tiny_data();
  SarUNet<double> a(tiny_model(), 1), b(tiny_model(), 1);
  auto ra = fit(a, fx.splits.train, fx.splits.val, quick(3));
  auto rb = fit(b, fx.splits.train, fx.splits.val, quick(3));
  std::ostringstream ha, hb;
  write_history_csv(ha, ra.history(), false);
  write_history_csv(hb, rb.history(), false);
  EXPECT_EQ(ha.str(), hb.str());
  EXPECT_TRUE(same_state(a.state(), b.state()));
}

TEST(Fit, ResumeFromCheckpointReproducesRun) {
  auto fx = tiny_data();
  const auto c = quick(5);
  std::string saved;
  FitHooks<double> hooks;
  hooks.on_epoch_end = [&](const SarUNet<double>& m, const TrainState<double>& st) {
    if (st.epochs_done() == 2) {
      std::ostringstream os;
      save_training_checkpoint(os, m, st);
      saved = os.str();
    }
  };
  SarUNet<double> full(tiny_model(), 1);
  auto whole = fit(full, fx.splits.train, fx.splits.val, c, hooks);
  ASSERT_FALSE(saved.empty());

  std::istringstream is(saved);
  auto loaded = load_training_checkpoint<double>(is);
  EXPECT_EQ(loaded.state.epochs_done(), 2u);
  auto resumed = fit(loaded.loaded.model, fx.splits.train, fx.splits.val, c, {}, &loaded.state);
  ASSERT_EQ(resumed.history().size(), whole.history().size());
  for (std::size_t i = 0; i < whole.history().size(); ++i) {
    EXPECT_EQ(resumed.history()[i].train_mse, whole.history()[i].train_mse) << i;
    EXPECT_EQ(resumed.history()[i].val_mse, whole.history()[i].val_mse) << i;
  }
  EXPECT_TRUE(same_state(loaded.loaded.model.state(), full.state()));
}

TEST(Fit, EmptySplitIsAnError) {
  auto fx = tiny_data();
  data::WindowDataset empty(fx.series, {}, 1.0);
  SarUNet<double> model(tiny_model(), 1);
  EXPECT_THROW(fit(model, empty, fx.splits.val, quick(1)), DataError);
  EXPECT_THROW(fit(model, fx.splits.train, empty, quick(1)), DataError);
}

TEST(Fit, DivergenceIsReported) {
  auto fx = tiny_data();
  SarUNet<double> model(tiny_model(), 1);
  auto c = quick(1);
  c.divergence_limit = 0.0;
  try {
    fit(model, fx.splits.train, fx.splits.val, c);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
  }
}

TEST(Checkpoint, TrainingStateRoundTrip) {
  auto fx = tiny_data();
  SarUNet<double> model(tiny_model(), 1);
  auto r = fit(model, fx.splits.train, fx.splits.val, quick(2));
  std::stringstream ss;
  save_training_checkpoint(ss, model, r.state, {{"note", "x"}});
  auto back = load_training_checkpoint<double>(ss);
  EXPECT_EQ(back.loaded.metadata.at("note"), "x");
  EXPECT_TRUE(same_state(back.loaded.model.state(), model.state()));
  EXPECT_EQ(back.state.optimizer.steps(), r.state.optimizer.steps());
  EXPECT_EQ(back.state.optimizer.first_moments(), r.state.optimizer.first_moments());
  EXPECT_EQ(back.state.rng_state, r.state.rng_state);
  EXPECT_TRUE(same_state(back.state.best_state, r.state.best_state));
  EXPECT_EQ(back.state.history.size(), 2u);
}

TEST(History, CsvFormat) {
  std::vector<EpochRecord> h{{1, 0.5, 0.25, 1e-3, 1.25}, {2, 0.125, 0.0625, 1e-4, 2.0}};
  std::ostringstream a, b;
  write_history_csv(a, h);
  write_history_csv(b, h, false);
  EXPECT_EQ(a.str(), "epoch,train_mse,val_mse,lr,seconds\n1,0.5,0.25,0.001,1.250\n2,0.125,0.0625,0.0001,2.000\n");
  EXPECT_EQ(b.str(), "epoch,train_mse,val_mse,lr\n1,0.5,0.25,0.001\n2,0.125,0.0625,0.0001\n");
}

TEST(Fit, CappedRunContinuesUnderHigherCap) {
  auto fx = tiny_data();
  std::string saved;
  FitHooks<double> hooks;
  hooks.on_epoch_end = [&](const SarUNet<double>& m, const TrainState<double>& st) {
    std::ostringstream os;
    save_training_checkpoint(os, m, st);
    saved = os.str();
  };
  SarUNet<double> capped(tiny_model(), 1);
  fit(capped, fx.splits.train, fx.splits.val, quick(2), hooks);
  std::istringstream is(saved);
  auto loaded = load_training_checkpoint<double>(is);
  ASSERT_TRUE(loaded.state.finished);

  SarUNet<double> straight(tiny_model(), 1);
  const auto whole = fit(straight, fx.splits.train, fx.splits.val, quick(4));
  const auto more = fit(loaded.loaded.model, fx.splits.train, fx.splits.val, quick(4), {}, &loaded.state);
  ASSERT_EQ(more.history().size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(more.history()[i].val_mse, whole.history()[i].val_mse) << i;
}
