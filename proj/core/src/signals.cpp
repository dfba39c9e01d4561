#include "mkg/signals.hpp"

#include <algorithm>

#include "mkg/errors.hpp"

namespace mkg {

std::vector<IndicatorVector> transform_indicators(std::span<const RawDailyBar> bars,
                                                  std::string_view stock) {
  if (bars.size() < 2) {
    throw DataError("stock " + std::string(stock) + ": need at least two bars for returns");
  }
  std::vector<IndicatorVector> out;
  out.reserve(bars.size() - 1);
  for (std::size_t t = 1; t < bars.size(); ++t) {
    const RawDailyBar& prev = bars[t - 1];
    const RawDailyBar& cur = bars[t];
    const std::array<double, 4> before = {prev.open, prev.close, prev.high, prev.low};
    const std::array<double, 4> now = {cur.open, cur.close, cur.high, cur.low};
    IndicatorVector p{};
    for (std::size_t k = 0; k < 4; ++k) {
      if (!(before[k] > 0.0)) {
        throw DataError("stock " + std::string(stock) + " on " + prev.date + ": non-positive price");
      }
      p[k] = (now[k] - before[k]) / before[k];
    }
    const std::size_t window = std::min(t + 1, kTurnoverWindow);
    double volume_sum = 0.0;
    for (std::size_t k = t + 1 - window; k <= t; ++k) volume_sum += bars[k].volume;
    const double mean = volume_sum / static_cast<double>(window);
    p[4] = mean > 0.0 ? cur.volume / mean : 0.0;
    out.push_back(p);
  }
  return out;
}

SentimentVector compute_sentiment(const SentimentCounts& counts) {
  const double total = static_cast<double>(counts.n_pos + counts.n_neg);
  if (total <= 0.0) return {0.0, 0.0, 0.0};
  const double pos = static_cast<double>(counts.n_pos) / total;
  const double neg = static_cast<double>(counts.n_neg) / total;
  return {pos, neg, static_cast<double>(counts.n_pos - counts.n_neg) / total};
}

int label(const RawDailyBar& bar) { return bar.close > bar.open ? 1 : 0; }

TradingCalendar::TradingCalendar(std::vector<std::string> dates, std::string train_end,
                                 std::string valid_end)
    : dates_(std::move(dates)), train_end_(std::move(train_end)), valid_end_(std::move(valid_end)) {
  for (std::size_t i = 1; i < dates_.size(); ++i) {
    if (!(dates_[i - 1] < dates_[i])) {
      throw ValidationError("calendar dates not strictly increasing at " + dates_[i]);
    }
  }
  if (!(train_end_ < valid_end_)) throw ValidationError("train split must end before validation split");
}

std::size_t TradingCalendar::index_of(std::string_view date) const {
  auto it = std::lower_bound(dates_.begin(), dates_.end(), date);
  if (it == dates_.end() || *it != date) return dates_.size();
  return static_cast<std::size_t>(it - dates_.begin());
}

TradingCalendar::Split TradingCalendar::split_of(std::size_t day) const {
  const std::string& d = dates_.at(day);
  if (d <= train_end_) return Split::Train;
  if (d <= valid_end_) return Split::Valid;
  return Split::Test;
}

std::vector<std::size_t> TradingCalendar::eligible_days(Split split, std::size_t lookback) const {
  std::vector<std::size_t> out;
  for (std::size_t t = lookback + 1; t < dates_.size(); ++t) {
    if (split_of(t) == split) out.push_back(t);
  }
  return out;
}

std::pair<std::size_t, std::size_t> window_bounds(std::size_t t, std::size_t lookback) {
  if (lookback == 0) throw ContractError("lookback window must be positive");
  if (t < lookback + 1) {
    throw WindowError("day " + std::to_string(t) + " has fewer than " + std::to_string(lookback) +
                      " days of signals before it");
  }
  return {t - lookback, t};
}

std::vector<DailySignals> build_window(const StockSeries& series, std::size_t t, std::size_t lookback) {
  const auto [first, last] = window_bounds(t, lookback);
  if (last > series.signals.size()) {
    throw WindowError("day " + std::to_string(t) + " is beyond the series");
  }
  return {series.signals.begin() + static_cast<std::ptrdiff_t>(first),
          series.signals.begin() + static_cast<std::ptrdiff_t>(last)};
}

}  // namespace mkg
