#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace mkg {

/// Fraction of cases whose thresholded up-probability (> 0.5 means up) matches the label.
double directional_accuracy(std::span<const double> up_probability, std::span<const int> labels);

/// Average precision: sum over distinct score thresholds of (recall step) x precision.
/// Tied scores enter together.
double auc_pr(std::span<const double> scores, std::span<const int> labels);

/// Area under the ROC curve with midranks for ties.
double auc_roc(std::span<const double> scores, std::span<const int> labels);

/// Indices of the `k` highest scores, ties broken by ascending index.
std::vector<std::size_t> select_top_k(std::span<const double> scores, std::size_t k);

struct DayReturn {
  double raw = 0.0;           // sum of constituent returns
  double equal_weight = 0.0;  // mean of constituent returns
};

/// Close-to-close returns of the held set between two price snapshots.
DayReturn irr(std::span<const std::size_t> held, std::span<const double> previous,
              std::span<const double> current);

inline constexpr double kTradingDaysPerYear = 252.0;

/// Annualised Sharpe ratio of daily returns over the daily risk-free rate.
double sharpe(std::span<const double> daily_returns, double annual_risk_free = 0.015);

struct BacktestConfig {
  std::size_t top_k = 15;
  double budget = 10000.0;
  double cost = 0.0003;
  double annual_risk_free = 0.015;
};

/// Scores and prices for each test day. previous_close[d] is the close on the
/// trading day before dates[d]; labels may be left empty.
struct BacktestInput {
  std::vector<std::string> dates;
  std::vector<std::vector<double>> scores;
  std::vector<std::vector<double>> previous_close;
  std::vector<std::vector<double>> close;
  std::vector<std::vector<int>> labels;
};

struct BacktestReport {
  std::vector<std::string> dates;
  std::vector<std::vector<std::size_t>> selected;
  std::vector<double> raw_returns;        // sum of constituent returns per day
  std::vector<double> portfolio_returns;  // equal-weight return after cost
  std::vector<double> value_curve;        // budget, then one value per day
  double cumulative_return = 0.0;         // final value / budget - 1
  double raw_irr = 0.0;                   // sum of daily raw returns
  double sharpe = 0.0;                    // NaN when undefined
  double directional_accuracy = 0.0;      // NaN without labels
  double pr_auc = 0.0;
  double roc_auc = 0.0;

  /// Field-wise equality; NaN metrics compare equal to NaN.
  friend bool operator==(const BacktestReport& a, const BacktestReport& b);
};

/// Top-k equal-weight hold for one day, cost charged on the whole position:
/// V_t = V_{t-1} (1 + R_t) (1 - cost).
BacktestReport backtest(const BacktestInput& input, const BacktestConfig& config = {});

}  // namespace mkg
