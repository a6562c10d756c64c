#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "est/eval.hpp"
#include "support.hpp"

namespace est::eval {
namespace {

Image<double> row(std::initializer_list<double> v) {
  Image<double> img(1, static_cast<int>(v.size()));
  int i = 0;
  for (double x : v) img(0, i++) = x;
  return img;
}

TEST(DepthMetrics, HandCase) {
  const auto r = depth_metrics(row({1.1, 2.0, 3.0, 10.0}), row({1.0, 2.0, 4.0, 8.0}));
  // Worked by hand: errors (0.1, 0, -1, 2); ratios (1.1, 1, 4/3, 1.25).
  EXPECT_NEAR(r.abs, 0.775, 1e-12);
  EXPECT_NEAR(r.abs_rel, (0.1 / 1 + 0.0 + 1.0 / 4 + 2.0 / 8) / 4, 1e-12);
  EXPECT_NEAR(r.sq_rel, (0.01 / 1 + 0.0 + 1.0 / 4 + 4.0 / 8) / 4, 1e-12);
  EXPECT_NEAR(r.rmse, std::sqrt((0.01 + 0.0 + 1.0 + 4.0) / 4), 1e-12);
  const double l1 = std::log(1.1), l3 = std::log(0.75), l4 = std::log(1.25);
  EXPECT_NEAR(r.rmse_log, std::sqrt((l1 * l1 + l3 * l3 + l4 * l4) / 4), 1e-12);
  // 1.25 is not strictly below 1.25; 4/3 fails the first threshold only.
  EXPECT_EQ(r.delta1, 0.5);
  EXPECT_EQ(r.delta2, 1.0);
  EXPECT_EQ(r.delta3, 1.0);
  EXPECT_EQ(r.valid, 4);
}

TEST(DepthMetrics, PerfectPrediction) {
  const auto gt = row({0.5, 1.0, 3.0, 7.0});
  const auto r = depth_metrics(gt, gt);
  EXPECT_EQ(r.abs, 0.0);
  EXPECT_EQ(r.abs_rel, 0.0);
  EXPECT_EQ(r.sq_rel, 0.0);
  EXPECT_EQ(r.rmse, 0.0);
  EXPECT_EQ(r.rmse_log, 0.0);
  EXPECT_EQ(r.delta1, 1.0);
  EXPECT_EQ(r.delta2, 1.0);
  EXPECT_EQ(r.delta3, 1.0);
}

TEST(DepthMetrics, DoubledPrediction) {
  const auto gt = row({0.5, 1.0, 3.0, 7.0});
  auto pred = gt;
  for (auto& v : pred.data()) v *= 2.0;
  const auto r = depth_metrics(pred, gt);
  EXPECT_DOUBLE_EQ(r.abs_rel, 1.0);
  EXPECT_EQ(r.delta1, 0.0);
  EXPECT_EQ(r.delta2, 0.0);
  EXPECT_EQ(r.delta3, 0.0);
}

TEST(DepthMetrics, InlierRatiosNest) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    Image<double> p(4, 4), g(4, 4);
    for (auto& v : g.data()) v = rng.uniform(0.5, 5.0);
    for (std::size_t i = 0; i < p.size(); ++i) p.data()[i] = g.data()[i] * std::exp(rng.normal() * 0.4);
    const auto r = depth_metrics(p, g);
    EXPECT_LE(r.delta1, r.delta2);
    EXPECT_LE(r.delta2, r.delta3);
  }
}

TEST(DepthMetrics, UniformPositiveErrorNeverImproves) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    Image<double> g(3, 3), p(3, 3);
    for (auto& v : g.data()) v = rng.uniform(0.5, 5.0);
    for (std::size_t i = 0; i < p.size(); ++i) p.data()[i] = g.data()[i] + rng.uniform(0.0, 0.5);
    auto q = p;
    for (auto& v : q.data()) v += 0.3;
    EXPECT_GE(depth_metrics(q, g).abs, depth_metrics(p, g).abs);
    EXPECT_GE(depth_metrics(q, g).rmse, depth_metrics(p, g).rmse);
  }
}

TEST(DepthMetrics, RangeCapExcludesFarPixels) {
  // The poisoned far pixel would dominate every error term if counted.
  const auto r = depth_metrics(row({1.0, 2.0, 1e9}), row({1.0, 2.0, 6.0}), 5.0);
  EXPECT_EQ(r.valid, 2);
  EXPECT_EQ(r.abs, 0.0);
  const auto all = depth_metrics(row({1.0, 2.0, 1e9}), row({1.0, 2.0, 6.0}));
  EXPECT_EQ(all.valid, 3);
}

TEST(DepthMetrics, SkipsInvalidAndRejectsEmpty) {
  const auto r = depth_metrics(row({1.0, 5.0, 0.0}), row({1.0, 0.0, 2.0}));
  EXPECT_EQ(r.valid, 1);
  EXPECT_THROW(depth_metrics(row({1.0}), row({0.0})), EmptyReport);
  EXPECT_THROW(depth_metrics(row({1.0, 2.0}), row({1.0})), std::invalid_argument);
}

MetricReport with_abs(double a) {
  MetricReport r;
  r.abs = a;
  return r;
}

TEST(TemporalStd, TwoPointCase) { EXPECT_NEAR(temporal_std({with_abs(0.1), with_abs(0.3)}).std, 0.1, 1e-15); }

TEST(TemporalStd, ConstantSequenceIsZero) {
  EXPECT_EQ(temporal_std({with_abs(0.2), with_abs(0.2), with_abs(0.2)}).std, 0.0);
}

TEST(TemporalStd, MatchesTwoPassFormula) {
  Rng rng(3);
  std::vector<MetricReport> frames;
  std::vector<double> a;
  for (int i = 0; i < 11; ++i) {
    a.push_back(rng.uniform(0.0, 1.0));
    frames.push_back(with_abs(a.back()));
  }
  double m = 0.0;
  for (double v : a) m += v;
  m /= a.size();
  double s = 0.0;
  for (double v : a) s += (v - m) * (v - m);
  const auto r = temporal_std(frames);
  EXPECT_NEAR(r.std, std::sqrt(s / a.size()), 1e-15);
  EXPECT_EQ(r.per_frame_abs, a);
  EXPECT_THROW(temporal_std({with_abs(0.1)}), std::invalid_argument);
}

TEST(MeanReport, AveragesFieldsAndSumsCounts) {
  MetricReport a, b;
  a.abs = 1.0;
  a.delta1 = 0.5;
  a.valid = 3;
  b.abs = 3.0;
  b.delta1 = 1.0;
  b.valid = 5;
  const auto m = mean_report({a, b});
  EXPECT_EQ(m.abs, 2.0);
  EXPECT_EQ(m.delta1, 0.75);
  EXPECT_EQ(m.valid, 8);
  EXPECT_THROW(mean_report({}), EmptyReport);
}

TEST(Csv, RowFollowsHeaderOrder) {
  std::ostringstream os;
  const auto r = depth_metrics(row({1.1, 2.0, 3.0, 10.0}), row({1.0, 2.0, 4.0, 8.0}));
  write_csv_row(os, "7", r);
  const std::string line = os.str();
  EXPECT_EQ(line.substr(0, 2), "7,");
  EXPECT_NE(line.find(",0.775,"), std::string::npos);
  EXPECT_EQ(std::count(line.begin(), line.end(), ','), 9);
  EXPECT_EQ(std::count(kCsvHeader, kCsvHeader + std::strlen(kCsvHeader), ','), 9);
}

}  // namespace
}  // namespace est::eval
