#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mkg/dual_attention.hpp"
#include "mkg/encoder.hpp"
#include "mkg/market_graph.hpp"
#include "mkg/numerics/adam.hpp"
#include "mkg/numerics/tape.hpp"
#include "mkg/signals.hpp"

namespace mkg {

struct ModelConfig {
  std::size_t lookback = 20;     // T
  std::size_t slices = 10;       // M
  std::size_t hidden = 78;       // F
  std::size_t attn_hidden = 39;  // F'
  double learning_rate = 0.0008;
  double eta = 0.0054;
  std::size_t max_epochs = 400;
  std::size_t patience = 20;
  std::uint64_t seed = 1;
  bool use_executives = true;
  bool use_implicit = true;
  bool use_explicit = true;
  bool use_dual = true;
  bool implicit_gate = true;
  std::size_t dual_layers = 1;
  double leaky_slope = 0.2;
  std::string early_stop_metric = "pr_auc";  // pr_auc | roc_auc | da
  std::size_t threads = 1;

  DualConfig dual() const;
  /// Throws ConfigError on non-positive sizes or unknown metric names.
  void validate() const;
};

/// Name and shape of every learnable tensor enabled by `config`.
std::map<std::string, Shape> parameter_shapes(const ModelConfig& config);

/// Glorot-uniform weights and zero biases, deterministic in `seed`.
ParamStore init_params(const ModelConfig& config, std::uint64_t seed);

/// 64-bit FNV-1a over parameter names, shapes and raw value bytes.
std::uint64_t params_checksum(const ParamStore& params);

VarMap record_parameters(Tape& tape, const ParamStore& params);

/// Everything the model reads, aligned on one calendar. Day-major tables:
/// signals[t][i] describes stock i on day t (row 0 unused).
struct ModelData {
  MarketGraph graph;  // meta relations already derived
  TradingCalendar calendar;
  std::vector<std::string> stocks;
  std::vector<std::vector<DailySignals>> signals;
  std::vector<std::vector<int>> labels;
  std::vector<std::vector<double>> closes;

  std::size_t stock_count() const { return stocks.size(); }
};

struct DayForward {
  Var sequential;  // N x F
  RecordedImplicitEdges implicit;
  DualOutput dual;
  Var probabilities;  // N x 2, columns (down, up)
};

/// Full forward pass for day t on `tape`.
DayForward forward_day(Tape& tape, const VarMap& vars, const ModelData& data, std::size_t t,
                       const ModelConfig& config);

/// Cross-entropy of day t's labels, summed over stocks.
Var day_loss(const DayForward& forward, const ModelData& data, std::size_t t);

struct DayPrediction {
  std::size_t day = 0;
  std::vector<double> up;  // per stock
};

/// Inference without gradient recording; days run on `config.threads` workers.
std::vector<DayPrediction> predict_days(const ParamStore& params, const ModelData& data,
                                        const std::vector<std::size_t>& days, const ModelConfig& config);

struct SplitMetrics {
  double loss = 0.0;  // mean per stock-day
  double directional_accuracy = 0.0;
  double pr_auc = 0.0;   // NaN when one class is absent
  double roc_auc = 0.0;
};

SplitMetrics evaluate_days(const ParamStore& params, const ModelData& data,
                           const std::vector<std::size_t>& days, const ModelConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean per stock-day over the epoch's steps
  double valid_pr_auc = 0.0;
  double valid_roc_auc = 0.0;
  double valid_da = 0.0;
};

struct TrainResult {
  ParamStore params;  // best by the validation metric
  std::vector<EpochRecord> history;
  double initial_train_loss = 0.0;
  std::size_t best_epoch = 0;  // 0 = initialisation
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// One Adam step per training day, shuffled each epoch; early stopping on the
/// validation metric. Throws DivergenceError on a non-finite loss.
TrainResult train(const ModelData& data, const ModelConfig& config, const EpochCallback& on_epoch = {});

struct GradcheckGroup {
  std::string name;
  std::size_t entries = 0;
  double max_relative_error = 0.0;
  bool passed = false;
};

struct GradcheckReport {
  std::uint64_t seed = 0;  // instance seed actually used
  double kink_margin = 0.0;
  std::vector<GradcheckGroup> groups;
  bool passed = false;
};

struct GradcheckOptions {
  double tolerance = 1e-4;
  double step = 1e-3;             // outer step of the extrapolated central difference
  double min_kink_margin = 1e-2;
  std::optional<std::pair<std::string, double>> fault;  // corrupt one backward rule
};

/// 3 companies, 2 executives, T = 2, F = F' = M = 2, all relation kinds populated.
ModelData gradcheck_instance(std::uint64_t seed, ModelConfig& config);

/// Richardson-extrapolated central differences of one day's loss against the
/// tape gradient.
/// Instances whose arguments sit too close to a kink are re-drawn
/// deterministically from `seed`.
GradcheckReport gradcheck(std::uint64_t seed, const GradcheckOptions& options = {});

/// Same check on caller-provided data and parameters.
GradcheckReport gradcheck_params(const ModelData& data, const ModelConfig& config, const ParamStore& params,
                                 std::size_t day, const GradcheckOptions& options);

/// Registry group of a parameter name: everything before the last '.'.
std::string parameter_group(const std::string& name);

}  // namespace mkg
