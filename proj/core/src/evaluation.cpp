#include "mkg/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mkg/errors.hpp"

namespace mkg {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void require_aligned(const char* what, std::size_t scores, std::size_t labels) {
  if (scores != labels) {
    throw ContractError(std::string(what) + ": " + std::to_string(scores) + " scores for " +
                        std::to_string(labels) + " labels");
  }
  if (scores == 0) throw ContractError(std::string(what) + ": empty input");
}

std::pair<std::size_t, std::size_t> class_counts(const char* what, std::span<const int> labels) {
  std::size_t pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw ContractError(std::string(what) + ": labels must be 0 or 1");
    pos += static_cast<std::size_t>(y);
  }
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw UndefinedMetricError(std::string(what) + " needs both classes");
  return {pos, neg};
}

// Indices ordered by descending score, ties by ascending index.
std::vector<std::size_t> descending(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&scores](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

bool same(double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); }

}  // namespace

double directional_accuracy(std::span<const double> up_probability, std::span<const int> labels) {
  require_aligned("directional_accuracy", up_probability.size(), labels.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ContractError("directional_accuracy: labels must be 0 or 1");
    const int predicted = up_probability[i] > 0.5 ? 1 : 0;
    hits += predicted == labels[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double auc_pr(std::span<const double> scores, std::span<const int> labels) {
  require_aligned("auc_pr", scores.size(), labels.size());
  const std::size_t pos = class_counts("auc_pr", labels).first;
  const std::vector<std::size_t> order = descending(scores);
  double area = 0.0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::size_t group_tp = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      group_tp += static_cast<std::size_t>(labels[order[j]]);
      ++j;
    }
    tp += group_tp;
    seen += j - i;
    if (group_tp > 0) {
      area += (static_cast<double>(group_tp) / static_cast<double>(pos)) *
              (static_cast<double>(tp) / static_cast<double>(seen));
    }
    i = j;
  }
  return area;
}

double auc_roc(std::span<const double> scores, std::span<const int> labels) {
  require_aligned("auc_roc", scores.size(), labels.size());
  const auto [pos, neg] = class_counts("auc_roc", labels);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&scores](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positive_rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) positive_rank_sum += midrank;
    }
    i = j;
  }
  const double p = static_cast<double>(pos);
  const double n = static_cast<double>(neg);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

std::vector<std::size_t> select_top_k(std::span<const double> scores, std::size_t k) {
  if (k == 0 || k > scores.size()) {
    throw ConfigError("top_k = " + std::to_string(k) + " with " + std::to_string(scores.size()) + " stocks");
  }
  std::vector<std::size_t> order = descending(scores);
  order.resize(k);
  return order;
}

DayReturn irr(std::span<const std::size_t> held, std::span<const double> previous,
              std::span<const double> current) {
  if (held.empty()) throw ContractError("irr: empty holding");
  DayReturn out;
  for (std::size_t i : held) {
    if (i >= previous.size() || i >= current.size()) {
      throw DataError("irr: missing price for stock " + std::to_string(i));
    }
    if (!(previous[i] > 0.0) || !(current[i] > 0.0)) {
      throw DataError("irr: non-positive price for stock " + std::to_string(i));
    }
    out.raw += (current[i] - previous[i]) / previous[i];
  }
  out.equal_weight = out.raw / static_cast<double>(held.size());
  return out;
}

double sharpe(std::span<const double> daily_returns, double annual_risk_free) {
  const std::size_t n = daily_returns.size();
  if (n < 2) throw UndefinedMetricError("sharpe ratio needs at least two days");
  const double rf = annual_risk_free / kTradingDaysPerYear;
  double mean = 0.0;
  for (double r : daily_returns) mean += r - rf;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double r : daily_returns) ss += (r - rf - mean) * (r - rf - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (sd == 0.0) throw UndefinedMetricError("sharpe ratio of constant returns");
  return mean / sd * std::sqrt(kTradingDaysPerYear);
}

BacktestReport backtest(const BacktestInput& input, const BacktestConfig& config) {
  const std::size_t days = input.scores.size();
  if (input.dates.size() != days || input.previous_close.size() != days || input.close.size() != days) {
    throw ContractError("backtest: dates, scores and prices cover different day counts");
  }
  if (!input.labels.empty() && input.labels.size() != days) {
    throw ContractError("backtest: labels cover a different day count");
  }
  if (config.cost < 0.0 || config.annual_risk_free < 0.0 || !(config.budget > 0.0)) {
    throw ConfigError("backtest: rates must be non-negative and the budget positive");
  }

  BacktestReport report;
  report.dates = input.dates;
  report.value_curve.push_back(config.budget);
  double value = config.budget;
  std::vector<double> all_scores;
  std::vector<int> all_labels;
  for (std::size_t d = 0; d < days; ++d) {
    std::vector<std::size_t> held = select_top_k(input.scores[d], config.top_k);
    const DayReturn r = irr(held, input.previous_close[d], input.close[d]);
    value *= (1.0 + r.equal_weight) * (1.0 - config.cost);
    report.selected.push_back(std::move(held));
    report.raw_returns.push_back(r.raw);
    report.portfolio_returns.push_back((1.0 + r.equal_weight) * (1.0 - config.cost) - 1.0);
    report.value_curve.push_back(value);
    report.raw_irr += r.raw;
    if (!input.labels.empty()) {
      if (input.labels[d].size() != input.scores[d].size()) {
        throw ContractError("backtest: labels and scores differ in stock count on " + input.dates[d]);
      }
      all_scores.insert(all_scores.end(), input.scores[d].begin(), input.scores[d].end());
      all_labels.insert(all_labels.end(), input.labels[d].begin(), input.labels[d].end());
    }
  }
  report.cumulative_return = value / config.budget - 1.0;

  try {
    report.sharpe = sharpe(report.portfolio_returns, config.annual_risk_free);
  } catch (const UndefinedMetricError&) {
    report.sharpe = kNaN;
  }
  report.directional_accuracy = kNaN;
  report.pr_auc = kNaN;
  report.roc_auc = kNaN;
  if (!all_labels.empty()) {
    report.directional_accuracy = directional_accuracy(all_scores, all_labels);
    try {
      report.pr_auc = auc_pr(all_scores, all_labels);
      report.roc_auc = auc_roc(all_scores, all_labels);
    } catch (const UndefinedMetricError&) {
    }
  }
  return report;
}

bool operator==(const BacktestReport& a, const BacktestReport& b) {
  auto same_series = [](const std::vector<double>& x, const std::vector<double>& y) {
    return std::equal(x.begin(), x.end(), y.begin(), y.end(), same);
  };
  return a.dates == b.dates && a.selected == b.selected && same_series(a.raw_returns, b.raw_returns) &&
         same_series(a.portfolio_returns, b.portfolio_returns) && same_series(a.value_curve, b.value_curve) &&
         same(a.cumulative_return, b.cumulative_return) && same(a.raw_irr, b.raw_irr) &&
         same(a.sharpe, b.sharpe) && same(a.directional_accuracy, b.directional_accuracy) &&
         same(a.pr_auc, b.pr_auc) && same(a.roc_auc, b.roc_auc);
}

}  // namespace mkg
