#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "clarae/training.hpp"
#include "support/reference_adam.hpp"

using namespace clarae;
using namespace clarae::training;

namespace {

using clarae::testing::ReferenceAdam;

Tensor<double> scalar_param(double v) { return Tensor<double>::scalar(v, true); }

void set_grad(Tensor<double>& p, double g) { p.ensure_grad()[0] = g; }

// Minimal stand-in for a model: one parameter whose value is a running tag,
// so restored snapshots can be identified.
struct FakeModel {
  using value_type = float;
  Tensor<float> w = Tensor<float>::scalar(0.0f, true);
  std::vector<NamedTensor<float>> state() const { return {{"w", w}}; }
  void set_mode(Mode) {}
};

TrainReport scripted(const std::vector<double>& val, TrainConfig cfg, FakeModel& model) {
  cfg.max_epochs = val.size();
  std::size_t i = 0;
  auto train = [&](std::size_t epoch, double) {
    model.w.values()[0] = float(epoch);
    return 1.0;
  };
  auto validate = [&]() { return val[i++]; };
  return run_epochs(model, cfg, train, validate);
}

signals::SignalSet desk_data(std::size_t patients, std::size_t per_patient, std::uint64_t seed,
                             signals::SignalSet* val) {
  signals::CohortConfig c;
  c.n_patients = patients;
  c.signals_per_patient = per_patient;
  c.seed = seed;
  auto recs = signals::generate_cohort(c);
  auto split = signals::split_patientwise(recs, {0.8, 0.1, 0.1}, seed);
  auto train = signals::select(recs, split.train);
  auto p = signals::fit_preprocess(train);
  signals::apply_preprocess(train, p);
  auto v = signals::select(recs, split.val);
  signals::apply_preprocess(v, p);
  *val = signals::stack(v);
  return signals::stack(train);
}

}  // namespace

TEST(Adam, MatchesReferenceOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> u(1e-4, 1e-1);
    const double lr = u(rng);
    auto p = scalar_param(g(rng));
    ReferenceAdam ref{lr, 0.9, 0.999, 1e-8};
    double theta = p.item();
    Adam<double> opt({p});
    for (int step = 0; step < 100; ++step) {
      const double grad = g(rng) * (step % 7 == 3 ? 0.0 : 1.0) + 0.1 * theta;
      set_grad(p, grad);
      opt.step(lr);
      theta = ref.step(theta, grad);
      ASSERT_NEAR(p.item(), theta, 1e-12) << "seed " << seed << " step " << step;
    }
  }
}

TEST(Adam, FirstStepMovesByLearningRate) {
  for (double g : {0.5, 3.0, 1e-3}) {
    auto p = scalar_param(1.0);
    set_grad(p, g);
    Adam<double> opt({p});
    opt.step(1e-3);
    EXPECT_NEAR(p.item(), 1.0 - 1e-3 * g / (g + 1e-8), 1e-15);
    EXPECT_NEAR(p.item(), 0.999, 1e-5);
  }
}

TEST(Adam, ZeroGradientLeavesParamAndDecaysMoments) {
  auto p = scalar_param(2.0);
  Adam<double> opt({p});
  set_grad(p, 0.0);
  opt.step(1e-3);
  EXPECT_EQ(p.item(), 2.0);

  set_grad(p, 1.0);
  opt.step(1e-3);
  const double m = opt.first_moment(0)[0], v = opt.second_moment(0)[0];
  set_grad(p, 0.0);
  opt.step(1e-3);
  EXPECT_DOUBLE_EQ(opt.first_moment(0)[0], 0.9 * m);
  EXPECT_DOUBLE_EQ(opt.second_moment(0)[0], 0.999 * v);
}

TEST(Adam, DeterministicTrajectories) {
  auto run = [] {
    auto p = scalar_param(0.3);
    Adam<double> opt({p});
    std::mt19937_64 rng(4);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> traj;
    for (int i = 0; i < 50; ++i) {
      set_grad(p, g(rng));
      opt.step(1e-2);
      traj.push_back(p.item());
    }
    return traj;
  };
  EXPECT_EQ(run(), run());
}

TEST(PlateauScheduler, HalvesAfterSixthStagnantEpoch) {
  PlateauScheduler s(0.5, 5, 1e-8);
  double lr = 1e-3;
  std::vector<double> lrs;
  for (int i = 0; i < 7; ++i) {
    lr = s.step(1.0, lr);
    lrs.push_back(lr);
  }
  for (int i = 0; i < 6; ++i) EXPECT_EQ(lrs[i], 1e-3) << i;
  EXPECT_EQ(lrs[6], 5e-4);
}

TEST(PlateauScheduler, ExactlyPatiencePlusOne) {
  for (std::size_t patience = 1; patience <= 8; ++patience) {
    PlateauScheduler s(0.5, patience, 1e-8);
    double lr = s.step(0.5, 1.0);
    std::size_t bad = 0;
    while (lr == 1.0) {
      lr = s.step(0.5, lr);
      ++bad;
    }
    EXPECT_EQ(bad, patience + 1);
  }
}

TEST(PlateauScheduler, ImprovingKeepsRate) {
  PlateauScheduler s;
  double lr = 1e-3;
  for (int i = 0; i < 50; ++i) lr = s.step(1.0 - 0.01 * i, lr);
  EXPECT_EQ(lr, 1e-3);
}

TEST(PlateauScheduler, FloorsAtMinimum) {
  PlateauScheduler s(0.5, 5, 1e-8);
  double lr = 1e-8;
  for (int i = 0; i < 40; ++i) {
    lr = s.step(1.0, lr);
    EXPECT_EQ(lr, 1e-8);
  }
  PlateauScheduler t(0.5, 0, 1e-8);
  lr = 1.5e-8;
  lr = t.step(1.0, lr);
  lr = t.step(1.0, lr);
  EXPECT_EQ(lr, 1e-8);
}

TEST(EarlyStopping, TwelveEqualLossesStopAtTwelve) {
  EarlyStopping e(11, 1e-6);
  int stopped_at = 0;
  for (int epoch = 1; epoch <= 30 && !stopped_at; ++epoch) {
    e.observe(1.0);
    if (e.should_stop()) stopped_at = epoch;
  }
  EXPECT_EQ(stopped_at, 12);
}

TEST(EarlyStopping, SubThresholdImprovementCountsAsStagnant) {
  EarlyStopping e(11, 1e-6);
  EXPECT_TRUE(e.observe(1.0));
  for (int epoch = 2; epoch <= 10; ++epoch) {
    EXPECT_FALSE(e.observe(1.0 - 1e-7 * (epoch - 1))) << epoch;
    EXPECT_EQ(e.bad_epochs(), std::size_t(epoch - 1));
  }
  EXPECT_EQ(e.best(), 1.0);
}

TEST(EarlyStopping, SteadyImprovementNeverStops) {
  EarlyStopping e(11, 1e-6);
  for (int epoch = 1; epoch <= 300; ++epoch) {
    EXPECT_TRUE(e.observe(1.0 - 1e-3 * epoch));
    EXPECT_FALSE(e.should_stop());
  }
}

TEST(RunEpochs, StopsAndRestoresBestWeights) {
  FakeModel model;
  std::vector<double> val = {3.0, 2.0, 1.0};
  val.insert(val.end(), 20, 1.5);
  auto rep = scripted(val, TrainConfig{}, model);
  EXPECT_EQ(rep.stop_reason, "early_stop");
  EXPECT_EQ(rep.epochs.size(), 14u);  // best at 3, then 11 stagnant epochs
  EXPECT_EQ(rep.best_epoch, 3u);
  EXPECT_EQ(rep.best_val_loss, 1.0);
  EXPECT_EQ(model.w.item(), 3.0f);
}

TEST(RunEpochs, LearningRateNonIncreasingAndFloored) {
  FakeModel model;
  TrainConfig cfg;
  cfg.early_stop_patience = 1000;
  cfg.lr0 = 1e-6;
  std::vector<double> val(200, 1.0);
  auto rep = scripted(val, cfg, model);
  EXPECT_EQ(rep.stop_reason, "max_epochs");
  for (std::size_t i = 1; i < rep.epochs.size(); ++i) {
    EXPECT_LE(rep.epochs[i].lr, rep.epochs[i - 1].lr);
    EXPECT_GE(rep.epochs[i].lr, cfg.lr_min);
  }
  EXPECT_EQ(rep.epochs.back().lr, cfg.lr_min);
  EXPECT_EQ(rep.epochs[6].lr, 1e-6);  // epochs 2..7 stagnate, the 8th runs at half rate
  EXPECT_EQ(rep.epochs[7].lr, 5e-7);
}

TEST(RunEpochs, DivergenceAborts) {
  FakeModel model;
  EXPECT_THROW(scripted({1.0, std::nan("")}, TrainConfig{}, model), NumericError);
}

TEST(RunEpochs, RejectsInvalidConfig) {
  FakeModel model;
  TrainConfig cfg;
  cfg.sched_factor = 1.0;
  EXPECT_THROW(scripted({1.0}, cfg, model), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.lr_min = 1.0;
  EXPECT_THROW(scripted({1.0}, cfg, model), std::invalid_argument);
}

TEST(MakeInputs, DenoisingNoiseIsSeededAndInRange) {
  signals::SignalSet data;
  data.rows = 4;
  data.len = 200;
  for (std::size_t i = 0; i < 800; ++i) data.data.push_back(std::sin(0.1f * float(i)));
  TrainConfig cfg;
  cfg.target = TargetMode::denoising;
  cfg.snr_min_db = 0.0;
  cfg.snr_max_db = 10.0;
  std::vector<std::size_t> rows = {0, 1, 2, 3};
  auto a = make_inputs(data, rows, cfg, 7);
  auto b = make_inputs(data, rows, cfg, 7);
  auto c = make_inputs(data, rows, cfg, 8);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  for (std::size_t r = 0; r < 4; ++r) {
    std::vector<float> noise(200);
    for (std::size_t j = 0; j < 200; ++j) noise[j] = a[r * 200 + j] - data.row(r)[j];
    const double snr = signals::snr_db<float>(data.row(r), noise);
    EXPECT_GE(snr, -1e-3);
    EXPECT_LE(snr, 10.0 + 1e-3);
  }
  cfg.target = TargetMode::reconstruction;
  EXPECT_EQ(make_inputs(data, rows, cfg, 7), data.data);
}

TEST(Fit, DeskModelMakesProgressDeterministically) {
  signals::SignalSet val;
  auto train = desk_data(10, 40, 3, &val);
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.max_epochs = 3;
  cfg.seed = 5;
  Clarae<float> a(ClaraeConfig::desk(), 1), b(ClaraeConfig::desk(), 1);
  auto ra = fit(a, train, val, cfg);
  auto rb = fit(b, train, val, cfg);
  ASSERT_EQ(ra.epochs.size(), 3u);
  EXPECT_LT(ra.epochs.back().val_loss, ra.epochs.front().val_loss);
  EXPECT_EQ(ra.stop_reason, "max_epochs");
  for (std::size_t i = 0; i < ra.epochs.size(); ++i) {
    EXPECT_EQ(ra.epochs[i].train_loss, rb.epochs[i].train_loss);
    EXPECT_EQ(ra.epochs[i].val_loss, rb.epochs[i].val_loss);
  }
  // The restored weights reproduce the recorded best validation loss.
  EXPECT_EQ(evaluate_mse(a, val, cfg), ra.best_val_loss);
  EXPECT_EQ(a.mode(), Mode::eval);
}

TEST(Fit, BaselineTrainsInDenoisingMode) {
  signals::SignalSet val;
  auto train = desk_data(5, 20, 4, &val);
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.max_epochs = 2;
  cfg.target = TargetMode::denoising;
  BaselineDae<float> model(ClaraeConfig::desk(), 2);
  auto rep = fit(model, train, val, cfg);
  EXPECT_EQ(rep.epochs.size(), 2u);
  EXPECT_TRUE(std::isfinite(rep.best_val_loss));
}

TEST(Fit, RejectsEmptyOrMismatched) {
  signals::SignalSet empty;
  signals::SignalSet val;
  auto train = desk_data(3, 4, 1, &val);
  Clarae<float> model(ClaraeConfig::desk(), 0);
  EXPECT_THROW(fit(model, empty, val, TrainConfig{}), DataError);
  signals::SignalSet short_set;
  short_set.rows = 1;
  short_set.len = 100;
  short_set.data.assign(100, 0.0f);
  EXPECT_THROW(fit(model, short_set, short_set, TrainConfig{}), ShapeError);
}

TEST(FitClassifier, SeparatesGaussianClusters) {
  std::mt19937_64 rng(6);
  std::normal_distribution<float> g(0.0f, 0.15f);
  auto make = [&](std::size_t n, std::vector<float>& z, std::vector<int>& y) {
    for (std::size_t i = 0; i < n; ++i) {
      const int c = int(i % 3);
      for (std::size_t k = 0; k < 8; ++k) z.push_back((k == std::size_t(c) ? 0.6f : -0.2f) + g(rng));
      y.push_back(c);
    }
  };
  std::vector<float> zt, zv;
  std::vector<int> yt, yv;
  make(300, zt, yt);
  make(90, zv, yv);
  MlpClassifier<float> clf(8, 32, 1);
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.max_epochs = 60;
  cfg.lr0 = 1e-2;
  auto rep = fit_classifier(clf, zt, yt, zv, yv, cfg);
  EXPECT_LT(rep.best_val_loss, 0.2);
  int correct = 0;
  for (std::size_t i = 0; i < yv.size(); ++i) {
    correct += clf.predict(std::span<const float>(zv.data() + i * 8, 8)) == yv[i];
  }
  EXPECT_GE(correct, 85);
  EXPECT_THROW(fit_classifier(clf, zt, std::vector<int>(3), zv, yv, cfg), ShapeError);
}
