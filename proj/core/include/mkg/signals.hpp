#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mkg {

struct RawDailyBar {
  std::string date;
  double open = 0.0;
  double close = 0.0;
  double high = 0.0;
  double low = 0.0;
  double volume = 0.0;
};

struct SentimentCounts {
  std::string date;
  std::int64_t n_pos = 0;
  std::int64_t n_neg = 0;
};

inline constexpr std::size_t kIndicatorWidth = 5;
inline constexpr std::size_t kSentimentWidth = 3;

/// open, close, high, low returns and the turnover proxy.
using IndicatorVector = std::array<double, kIndicatorWidth>;
/// Q+, Q-, D.
using SentimentVector = std::array<double, kSentimentWidth>;

struct DailySignals {
  IndicatorVector p{};
  SentimentVector q{};
};

/// Trailing window used for the turnover denominator.
inline constexpr std::size_t kTurnoverWindow = 20;

/// One-day returns of the four price fields plus volume over its trailing
/// mean (window includes the current day, shorter at the start of the series).
/// Output element k describes bar k+1; the first bar has no predecessor.
std::vector<IndicatorVector> transform_indicators(std::span<const RawDailyBar> bars,
                                                  std::string_view stock = {});

/// Sentiment shares of positive and negative words; zeros on days without news.
SentimentVector compute_sentiment(const SentimentCounts& counts);

/// 1 when the bar closed strictly above its open.
int label(const RawDailyBar& bar);

/// Shared trading calendar with contiguous train / valid / test ranges.
class TradingCalendar {
 public:
  TradingCalendar() = default;
  /// `train_end` and `valid_end` are inclusive ISO dates bounding the first two splits.
  TradingCalendar(std::vector<std::string> dates, std::string train_end, std::string valid_end);

  const std::vector<std::string>& dates() const { return dates_; }
  std::size_t size() const { return dates_.size(); }
  const std::string& train_end() const { return train_end_; }
  const std::string& valid_end() const { return valid_end_; }

  /// Index of `date`, or size() when absent.
  std::size_t index_of(std::string_view date) const;

  enum class Split { Train, Valid, Test };
  Split split_of(std::size_t day) const;
  /// Days of `split` that have at least `lookback` days of signals before them.
  std::vector<std::size_t> eligible_days(Split split, std::size_t lookback) const;

 private:
  std::vector<std::string> dates_;
  std::string train_end_;
  std::string valid_end_;
};

/// Per-stock signals aligned on the calendar. Entry 0 is never filled because
/// returns need a previous bar.
struct StockSeries {
  std::vector<DailySignals> signals;
  std::vector<int> labels;
};

/// Signals for days t-T .. t-1, oldest first. Requires t >= T + 1.
std::vector<DailySignals> build_window(const StockSeries& series, std::size_t t, std::size_t lookback);

/// Index bounds [first, last) of the window for day t.
std::pair<std::size_t, std::size_t> window_bounds(std::size_t t, std::size_t lookback);

}  // namespace mkg
