#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "mkg/errors.hpp"
#include "mkg/evaluation.hpp"
#include "oracles.hpp"

using namespace mkg;

namespace {

struct Case {
  std::vector<double> scores;
  std::vector<int> labels;
};

Case random_case(std::mt19937_64& rng, std::size_t n, bool coarse) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Case c;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = u(rng);
    c.scores.push_back(coarse ? std::round(s * 4.0) / 4.0 : s);
    c.labels.push_back(u(rng) < 0.5 ? 1 : 0);
  }
  c.labels[0] = 1;
  c.labels[1] = 0;
  return c;
}

BacktestInput one_day(std::vector<double> scores, std::vector<double> before, std::vector<double> after) {
  BacktestInput in;
  in.dates = {"2020-01-02"};
  in.scores = {std::move(scores)};
  in.previous_close = {std::move(before)};
  in.close = {std::move(after)};
  return in;
}

}  // namespace

TEST(DirectionalAccuracy, SixOfTen) {
  const std::vector<double> p{0.9, 0.8, 0.7, 0.6, 0.2, 0.1, 0.9, 0.3, 0.4, 0.6};
  const std::vector<int> y{1, 1, 1, 1, 0, 0, 0, 1, 1, 0};
  EXPECT_DOUBLE_EQ(directional_accuracy(p, y), 0.6);
  const std::vector<int> all{1, 1, 1, 1, 0, 0, 1, 0, 0, 1};
  EXPECT_EQ(directional_accuracy(p, all), 1.0);
}

TEST(DirectionalAccuracy, HalfCountsAsDown) {
  EXPECT_EQ(directional_accuracy(std::vector<double>{0.5}, std::vector<int>{0}), 1.0);
}

TEST(DirectionalAccuracy, MatchesCount) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Case c = random_case(rng, 100, false);
    EXPECT_EQ(directional_accuracy(c.scores, c.labels), oracle::counted_da(c.scores, c.labels));
  }
}

TEST(DirectionalAccuracy, Errors) {
  EXPECT_THROW(directional_accuracy(std::vector<double>{}, std::vector<int>{}), ContractError);
  EXPECT_THROW(directional_accuracy(std::vector<double>{0.1, 0.2}, std::vector<int>{1}), ContractError);
  EXPECT_THROW(directional_accuracy(std::vector<double>{0.1}, std::vector<int>{2}), ContractError);
}

TEST(Auc, PerfectSeparation) {
  const std::vector<double> s{0.1, 0.9, 0.2, 0.8};
  const std::vector<int> y{0, 1, 0, 1};
  EXPECT_EQ(auc_roc(s, y), 1.0);
  EXPECT_EQ(auc_pr(s, y), 1.0);
}

TEST(Auc, AllTiedIsHalf) {
  const std::vector<double> s(6, 0.3);
  const std::vector<int> y{0, 1, 0, 1, 0, 1};
  EXPECT_EQ(auc_roc(s, y), 0.5);
  EXPECT_EQ(auc_pr(s, y), 0.5);
}

TEST(Auc, SixElementHandCase) {
  const std::vector<double> s{0.9, 0.4, 0.4, 0.7, 0.2, 0.6};
  const std::vector<int> y{1, 1, 0, 0, 0, 1};
  // Positive-negative pairs: 0.9 beats 3, 0.4 ties one and beats 0.2, 0.6 beats 0.4 and 0.2.
  EXPECT_DOUBLE_EQ(auc_roc(s, y), 6.5 / 9.0);
  EXPECT_DOUBLE_EQ(auc_roc(s, y), oracle::pairwise_roc(s, y));
  EXPECT_NEAR(auc_pr(s, y), oracle::threshold_ap(s, y), 1e-15);
}

TEST(Auc, MatchesOraclesWithAndWithoutTies) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 40; ++trial) {
    const Case c = random_case(rng, 5 + trial, trial % 2 == 0);
    EXPECT_NEAR(auc_roc(c.scores, c.labels), oracle::pairwise_roc(c.scores, c.labels), 1e-12);
    EXPECT_NEAR(auc_pr(c.scores, c.labels), oracle::threshold_ap(c.scores, c.labels), 1e-12);
  }
}

TEST(Auc, InvertedScoresComplement) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Case c = random_case(rng, 30, trial % 2 == 1);
    const double a = auc_roc(c.scores, c.labels);
    for (double& s : c.scores) s = -s;
    EXPECT_NEAR(auc_roc(c.scores, c.labels), 1.0 - a, 1e-12);
  }
}

TEST(Auc, SingleClassIsUndefined) {
  const std::vector<double> s{0.1, 0.2};
  EXPECT_THROW(auc_roc(s, std::vector<int>{1, 1}), UndefinedMetricError);
  EXPECT_THROW(auc_pr(s, std::vector<int>{0, 0}), UndefinedMetricError);
}

TEST(TopK, TiesByIndex) {
  const std::vector<double> s{0.5, 0.9, 0.5, 0.5, 0.1};
  EXPECT_EQ(select_top_k(s, 3), (std::vector<std::size_t>{1, 0, 2}));
  EXPECT_EQ(select_top_k(s, 5).size(), 5u);
  EXPECT_THROW(select_top_k(s, 6), ConfigError);
  EXPECT_THROW(select_top_k(s, 0), ConfigError);
}

TEST(Irr, TwoStocks) {
  const std::vector<std::size_t> held{0, 1};
  const DayReturn r = irr(held, std::vector<double>{100, 200}, std::vector<double>{110, 190});
  EXPECT_NEAR(r.raw, 0.05, 1e-15);
  EXPECT_NEAR(r.equal_weight, 0.025, 1e-15);
  const DayReturn flat = irr(held, std::vector<double>{100, 200}, std::vector<double>{100, 200});
  EXPECT_EQ(flat.raw, 0.0);
}

TEST(Irr, MatchesLoop) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> price(10.0, 100.0);
  std::vector<double> before(5), after(5);
  for (std::size_t i = 0; i < 5; ++i) {
    before[i] = price(rng);
    after[i] = price(rng);
  }
  const std::vector<std::size_t> held{4, 1, 2};
  double sum = 0.0;
  for (std::size_t i : held) sum += (after[i] - before[i]) / before[i];
  const DayReturn r = irr(held, before, after);
  EXPECT_NEAR(r.raw, sum, 1e-15);
  EXPECT_NEAR(r.equal_weight, sum / 3.0, 1e-15);
}

TEST(Irr, BadPrices) {
  const std::vector<std::size_t> held{0, 2};
  EXPECT_THROW(irr(held, std::vector<double>{1, 1}, std::vector<double>{1, 1}), DataError);
  EXPECT_THROW(irr(held, std::vector<double>{1, 1, 0}, std::vector<double>{1, 1, 1}), DataError);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(irr(held, std::vector<double>{1, 1, nan}, std::vector<double>{1, 1, 1}), DataError);
}

TEST(Sharpe, TwoPassOracle) {
  const std::vector<double> r{0.01, 0.02, 0.03};
  EXPECT_NEAR(sharpe(r), oracle::two_pass_sharpe(r, 0.015), 1e-12);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.001, 0.02);
  std::vector<double> many(250);
  for (double& x : many) x = n(rng);
  EXPECT_NEAR(sharpe(many, 0.03), oracle::two_pass_sharpe(many, 0.03), 1e-12);
}

TEST(Sharpe, ZeroExcessIsZero) {
  const double rf = 0.015 / 252.0;
  const std::vector<double> r{rf + 0.01, rf, rf, rf - 0.01};
  EXPECT_NEAR(sharpe(r), 0.0, 1e-12);
}

TEST(Sharpe, ScaleInvariantInExcessReturns) {
  const double rf = 0.015 / 252.0;
  const std::vector<double> excess{0.01, -0.004, 0.02, 0.003};
  std::vector<double> a, b;
  for (double e : excess) {
    a.push_back(rf + e);
    b.push_back(rf + 3.0 * e);
  }
  EXPECT_NEAR(sharpe(a), sharpe(b), 1e-12);
}

TEST(Sharpe, Undefined) {
  EXPECT_THROW(sharpe(std::vector<double>{0.01}), UndefinedMetricError);
  EXPECT_THROW(sharpe(std::vector<double>{0.01, 0.01, 0.01}), UndefinedMetricError);
}

TEST(Backtest, OneDayTopOne) {
  BacktestConfig config;
  config.top_k = 1;
  const BacktestReport r = backtest(one_day({0.9, 0.1}, {100, 50}, {110, 40}), config);
  ASSERT_EQ(r.value_curve.size(), 2u);
  EXPECT_EQ(r.value_curve.front(), 10000.0);
  EXPECT_NEAR(r.value_curve.back(), 10996.70, 1e-9);
  EXPECT_EQ(r.selected.front(), (std::vector<std::size_t>{0}));
  EXPECT_NEAR(r.raw_irr, 0.1, 1e-15);
  EXPECT_TRUE(std::isnan(r.sharpe));
  EXPECT_TRUE(std::isnan(r.directional_accuracy));
}

TEST(Backtest, ConstantPricesZeroCostIsFlat) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  BacktestInput in;
  const std::vector<double> prices{10, 20, 30, 40, 50};
  for (int d = 0; d < 8; ++d) {
    in.dates.push_back("2020-01-" + std::to_string(10 + d));
    std::vector<double> s(5);
    for (double& x : s) x = u(rng);
    in.scores.push_back(s);
    in.previous_close.push_back(prices);
    in.close.push_back(prices);
  }
  BacktestConfig config;
  config.top_k = 2;
  config.cost = 0.0;
  const BacktestReport r = backtest(in, config);
  ASSERT_EQ(r.value_curve.size(), 9u);
  for (double v : r.value_curve) EXPECT_EQ(v, 10000.0);
  EXPECT_EQ(r.cumulative_return, 0.0);
  EXPECT_EQ(r.raw_irr, 0.0);
}

TEST(Backtest, CostNeverHelps) {
  const BacktestInput in = one_day({0.3, 0.6, 0.9}, {10, 10, 10}, {11, 9, 12});
  double last = std::numeric_limits<double>::infinity();
  for (double cost : {0.0, 0.0003, 0.003, 0.03}) {
    BacktestConfig config;
    config.top_k = 2;
    config.cost = cost;
    const double v = backtest(in, config).value_curve.back();
    EXPECT_LT(v, last);
    last = v;
  }
}

TEST(Backtest, MetricsFromLabels) {
  BacktestInput in = one_day({0.9, 0.2, 0.6, 0.4}, {1, 1, 1, 1}, {2, 1, 1, 1});
  in.labels = {{1, 0, 0, 1}};
  BacktestConfig config;
  config.top_k = 1;
  const BacktestReport r = backtest(in, config);
  EXPECT_EQ(r.directional_accuracy, 0.5);
  EXPECT_EQ(r.roc_auc, 0.75);
  EXPECT_TRUE(r == backtest(in, config));
}

TEST(Backtest, Errors) {
  BacktestInput in = one_day({0.5, 0.5}, {1, 1}, {1, 1});
  EXPECT_THROW(backtest(in), ConfigError);
  BacktestConfig config;
  config.top_k = 1;
  config.cost = -0.1;
  EXPECT_THROW(backtest(in, config), ConfigError);
  in.dates.push_back("2020-01-03");
  config.cost = 0.0;
  EXPECT_THROW(backtest(in, config), ContractError);
}
