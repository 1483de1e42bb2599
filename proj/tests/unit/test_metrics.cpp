#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "nowcast/metrics.hpp"
#include "oracles.hpp"

using namespace nowcast;
using namespace nowcast::metrics;
using nowcast::testing::confusion_loop;

namespace {

Tensor<double> row(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor<double>({1, 1, 1, n}, std::move(v));
}

std::vector<int> ints(const Tensor<double>& t) {
  std::vector<int> out;
  for (double v : t.data()) out.push_back(static_cast<int>(v));
  return out;
}

MetricReport report(std::size_t in, std::size_t lead, std::string model, double mse, double f1) {
  MetricReport r;
  r.setup = {in, lead, std::move(model)};
  r.mse = mse;
  r.scores.f1 = f1;
  r.scores.precision = f1;
  r.scores.recall = f1;
  r.scores.accuracy = 0.5;
  return r;
}

}  // namespace

TEST(Binarize, RawHundredthsThreshold) {
  const UnitInfo raw{.unit = data::Unit::raw_hundredths_mm, .scale = 1.0, .interval_minutes = 5};
  // 5 -> 0.6 mm/h, 4 -> 0.48 mm/h
  EXPECT_EQ(ints(binarize(row({5, 4, 0, 100}), raw)), (std::vector<int>{1, 0, 0, 1}));
  const UnitInfo scaled{.unit = data::Unit::raw_hundredths_mm, .scale = 50.0, .interval_minutes = 5};
  EXPECT_EQ(ints(binarize(row({0.1, 0.08}), scaled)), (std::vector<int>{1, 0}));
}

TEST(Binarize, ThresholdEdgeCases) {
  const UnitInfo raw{};
  EXPECT_EQ(ints(binarize(row({0, 0, 0}), raw)), (std::vector<int>{0, 0, 0}));
  EXPECT_EQ(ints(binarize(row({0, 1e-9, 3}), raw, 0.0)), (std::vector<int>{1, 1, 1}));
  const UnitInfo bin{.unit = data::Unit::binary};
  EXPECT_EQ(ints(binarize(row({0, 1, 0.5}), bin)), (std::vector<int>{0, 1, 1}));
  EXPECT_THROW(binarize(row({1}), std::nullopt), UsageError);
}

TEST(Confusion, TwoByTwoExample) {
  const auto c = confusion(row({1, 1, 0, 0}), row({1, 0, 1, 0}));
  EXPECT_EQ(c, (ConfusionCounts{1, 1, 1, 1}));
  const auto s = scores(c);
  EXPECT_EQ(s.precision, 0.5);
  EXPECT_EQ(s.recall, 0.5);
  EXPECT_EQ(s.accuracy, 0.5);
  EXPECT_EQ(s.f1, 0.5);
}

TEST(Confusion, ErrorsAndUndefinedScores) {
  EXPECT_THROW(confusion(row({1, 0}), row({1, 0, 1})), DimensionError);
  EXPECT_THROW(confusion(row({1, 2}), row({1, 0})), UsageError);
  const auto s = scores(confusion(row({0, 0}), row({0, 0})));
  EXPECT_TRUE(s.precision_undefined);
  EXPECT_TRUE(s.recall_undefined);
  EXPECT_TRUE(s.f1_undefined);
  EXPECT_EQ(s.f1, 0.0);
  EXPECT_EQ(s.accuracy, 1.0);
  EXPECT_TRUE(scores({}).accuracy_undefined);
}

TEST(Confusion, RandomPairsMatchLoopOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(64);
    std::vector<double> p(n), t(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = static_cast<double>(rng.below(2));
      t[i] = static_cast<double>(rng.below(2));
    }
    const auto got = confusion(row(p), row(t));
    const auto pi = ints(row(p)), ti = ints(row(t));
    ASSERT_EQ(got, confusion_loop(pi, ti));
    ASSERT_EQ(got.total(), n);
    const auto s = scores(got);
    const double tp = got.tp, fp = got.fp, fn = got.fn;
    if (!s.precision_undefined) EXPECT_DOUBLE_EQ(s.precision, tp / (tp + fp));
    if (!s.recall_undefined) EXPECT_DOUBLE_EQ(s.recall, tp / (tp + fn));
    if (!s.f1_undefined) EXPECT_NEAR(s.f1, 2 * s.precision * s.recall / (s.precision + s.recall), 1e-15);
    EXPECT_DOUBLE_EQ(s.accuracy, (got.tp + got.tn) / static_cast<double>(n));
  }
}

TEST(Confusion, PermutationInvariant) {
  Rng rng(2);
  std::vector<double> p(100), t(100);
  for (std::size_t i = 0; i < 100; ++i) {
    p[i] = static_cast<double>(rng.below(2));
    t[i] = static_cast<double>(rng.below(2));
  }
  const auto before = confusion(row(p), row(t));
  for (std::size_t i = 99; i > 0; --i) {
    const std::size_t j = rng.below(i + 1);
    std::swap(p[i], p[j]);
    std::swap(t[i], t[j]);
  }
  EXPECT_EQ(confusion(row(p), row(t)), before);
}

TEST(Confusion, RecallFallsAsPredictionThresholdRises) {
  Rng rng(3);
  std::vector<double> pred(500), target(500);
  for (std::size_t i = 0; i < 500; ++i) {
    pred[i] = rng.uniform(0, 20);
    target[i] = rng.uniform(0, 20);
  }
  const UnitInfo raw{};
  const auto tb = binarize(row(target), raw);
  double prev = 2;
  for (double th = 0; th <= 3; th += 0.1) {
    const double r = scores(confusion(binarize(row(pred), raw, th), tb)).recall;
    EXPECT_LE(r, prev);
    prev = r;
  }
}

TEST(Evaluate, PersistenceOnFrozenSeriesIsPerfect) {
  auto s = data::synth_generate({.seed = 4, .frames = 80, .height = 32, .width = 32, .wind_x = 0, .wind_y = 0});
  data::DatasetOptions opt{.spec = data::precipitation_spec(6, 30), .rain_fraction = 0.0,
                           .train_share = 0.6, .val_share = 0.2};
  auto splits = data::build_datasets(s, opt);
  const auto r = evaluate_setup(persistence_predictor<double>(1), splits.test, {30, 30, "Persistence"});
  EXPECT_EQ(r.mse, 0.0);
  EXPECT_GT(r.counts.tp, 0u);
  EXPECT_EQ(r.scores.precision, 1.0);
  EXPECT_EQ(r.scores.recall, 1.0);
  EXPECT_EQ(r.scores.accuracy, 1.0);
  EXPECT_EQ(r.scores.f1, 1.0);
  ASSERT_EQ(r.mse_per_lead.size(), 1u);
}

TEST(Evaluate, MseMatchesDirectSum) {
  auto s = data::synth_generate({.seed = 5, .frames = 40, .height = 32, .width = 32});
  data::DatasetOptions opt{.spec = {.input_frames = 3, .target_offsets = {1, 2}, .stride = 1}, .rain_fraction = 0.0};
  auto splits = data::build_datasets(s, opt);
  const auto r = evaluate_setup(persistence_predictor<double>(2), splits.test, {15, 5, "Persistence"}, 4);
  const auto all = splits.test.all<double>();
  double sum = 0, lead0 = 0;
  std::size_t n = 0;
  for (std::size_t b = 0; b < all.targets.shape().n; ++b)
    for (std::size_t k = 0; k < 2; ++k)
      for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t x = 0; x < 32; ++x) {
          const double d = all.inputs.at(b, 2, y, x) - all.targets.at(b, k, y, x);
          sum += d * d;
          if (k == 0) lead0 += d * d;
          ++n;
        }
  EXPECT_NEAR(r.mse, sum / n, 1e-12 * (1 + sum / n));
  EXPECT_NEAR(r.mse_per_lead[0], 2 * lead0 / n, 1e-12 * (1 + lead0 / n));
  EXPECT_NEAR(r.mse_physical, r.mse * splits.test.scale() * splits.test.scale(), 1e-9 * (1 + r.mse_physical));
}

TEST(Report, RowsSortBySetupThenModel) {
  std::vector<MetricReport> rows{report(60, 30, "SAR-UNet", 1, 0.5), report(30, 60, "Persistence", 1, 0.5),
                                 report(30, 30, "Zeta", 1, 0.5),     report(30, 30, "SAR-UNet", 1, 0.5),
                                 report(30, 30, "Alpha", 1, 0.5),    report(30, 30, "Persistence", 1, 0.5),
                                 report(30, 30, "SmaAt-config", 1, 0.5)};
  sort_rows(rows);
  std::vector<std::string> got;
  for (const auto& r : rows)
    got.push_back(std::to_string(r.setup.input_minutes) + "/" + std::to_string(r.setup.lead_minutes) + "/" + r.setup.model);
  EXPECT_EQ(got, (std::vector<std::string>{"30/30/Persistence", "30/30/SmaAt-config", "30/30/SAR-UNet",
                                           "30/30/Alpha", "30/30/Zeta", "30/60/Persistence", "60/30/SAR-UNet"}));
}

TEST(Report, CsvAndTableLayout) {
  std::vector<MetricReport> rows{report(30, 30, "Persistence", 0.25, 0.5), report(30, 30, "SAR-UNet", 0.125, 0.75)};
  std::ostringstream csv;
  write_report_csv(csv, rows);
  EXPECT_EQ(csv.str(), "model,mse,precision,recall,accuracy,f1\n"
                       "Persistence,0.25,0.5,0.5,0.5,0.5\nSAR-UNet,0.125,0.75,0.75,0.5,0.75\n");
  std::ostringstream with_setup;
  write_report_csv(with_setup, rows, true);
  EXPECT_EQ(with_setup.str().substr(0, with_setup.str().find('\n')),
            "input_minutes,lead_minutes,model,mse,precision,recall,accuracy,f1");

  std::ostringstream t1, t2;
  write_report_table(t1, rows);
  write_report_table(t2, rows);
  EXPECT_EQ(t1.str(), t2.str());
  const std::string table = t1.str();
  EXPECT_EQ(table.rfind("input 30 min, lead 30 min\n", 0), 0u);
  const auto sar = table.substr(table.find("SAR-UNet"));
  EXPECT_NE(sar.find("0.125000*"), std::string::npos);
  EXPECT_NE(sar.find("0.750000*"), std::string::npos);
  // accuracy ties mark both rows
  EXPECT_NE(table.substr(table.find("Persistence")).find("0.500000*"), std::string::npos);
}

TEST(Report, AverageAndLeadCsv) {
  auto a = report(30, 30, "SAR-UNet", 0.5, 0.5);
  auto b = report(60, 30, "SAR-UNet", 0.25, 1.0);
  a.mse_per_lead = {0.5};
  std::ostringstream avg, lead;
  write_average_csv(avg, {a, b, report(30, 30, "Persistence", 1, 0)});
  EXPECT_EQ(avg.str(), "model,mse,precision,recall,accuracy,f1\nPersistence,1,0,0,0.5,0\nSAR-UNet,0.375,0.75,0.75,0.5,0.75\n");
  write_lead_csv(lead, {a});
  EXPECT_EQ(lead.str(), "input_minutes,lead_minutes,model,lead_index,mse\n30,30,SAR-UNet,0,0.5\n");
}
