#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mkg/evaluation.hpp"
#include "mkg/market_graph.hpp"
#include "mkg/model.hpp"
#include "mkg/signals.hpp"

namespace mkg {

struct EntityRecord {
  std::string id;
  EntityKind kind = EntityKind::Company;
  std::string name;

  friend bool operator==(const EntityRecord&, const EntityRecord&) = default;
};

struct EdgeRecord {
  RelationKind kind = RelationKind::IndustryCategory;
  std::string src;
  std::string dst;

  friend bool operator==(const EdgeRecord&, const EdgeRecord&) = default;
};

struct PriceRecord {
  std::string stock;
  RawDailyBar bar;

  friend bool operator==(const PriceRecord& a, const PriceRecord& b) {
    return a.stock == b.stock && a.bar.date == b.bar.date && a.bar.open == b.bar.open &&
           a.bar.close == b.bar.close && a.bar.high == b.bar.high && a.bar.low == b.bar.low &&
           a.bar.volume == b.bar.volume;
  }
};

struct NewsRecord {
  std::string stock;
  SentimentCounts counts;

  friend bool operator==(const NewsRecord& a, const NewsRecord& b) {
    return a.stock == b.stock && a.counts.date == b.counts.date && a.counts.n_pos == b.counts.n_pos &&
           a.counts.n_neg == b.counts.n_neg;
  }
};

inline constexpr const char* kDefaultTrainEnd = "2019-08-05";
inline constexpr const char* kDefaultValidEnd = "2019-10-22";

struct DatasetBundle {
  std::vector<EntityRecord> entities;
  std::vector<EdgeRecord> edges;
  std::vector<PriceRecord> prices;
  std::vector<NewsRecord> news;
  std::string train_end = kDefaultTrainEnd;
  std::string valid_end = kDefaultValidEnd;

  friend bool operator==(const DatasetBundle&, const DatasetBundle&) = default;
};

/// Edge kinds a dataset file may contain (derived and inferred kinds are computed).
bool is_loadable_relation(RelationKind kind);

/// Checks referential integrity, types, duplicates, price coverage and
/// executive links. Throws ValidationError or DataError naming the file and row.
void validate_dataset(const DatasetBundle& bundle);

/// Reads entities.csv, edges.csv, prices.csv, news.csv and optional splits.csv.
DatasetBundle load_dataset(const std::filesystem::path& dir);
void save_dataset(const DatasetBundle& bundle, const std::filesystem::path& dir);

/// Builds the graph (with meta relations), calendar and day-major tables.
ModelData prepare_model_data(const DatasetBundle& bundle);

// ---- synthetic data -------------------------------------------------------

struct SyntheticSpec {
  std::size_t companies = 73;
  std::size_t executives = 163;
  std::map<RelationKind, std::size_t> edge_counts = {
      {RelationKind::Investment, 7},      {RelationKind::IndustryCategory, 272},
      {RelationKind::SupplyChain, 27},    {RelationKind::BusinessPartnership, 98},
      {RelationKind::Classmate, 338},     {RelationKind::Colleague, 953},
      {RelationKind::Management, 166},    {RelationKind::ExecInvestment, 1},
  };
  double spillover = 0.9;     // lambda
  double noise = 1.0;         // logistic noise scale
  double signal_scale = 8.0;  // log-odds per unit of normalised neighbour return
  std::size_t leaders = 5;    // move every follower; no typed link reaches them
  std::size_t hubs = 12;      // half reach followers through typed links, half through executive ties
  double news_rate = 0.25;    // daily news probability for other companies
  double return_scale = 0.02;
  double leader_move = 3.0;   // leaders' price moves relative to everyone else's
  std::string start = "2017-11-21";
  std::string end = "2019-12-31";
  std::string train_end = kDefaultTrainEnd;
  std::string valid_end = kDefaultValidEnd;
  std::uint64_t seed = 7;

  /// Throws ConfigError for impossible counts or out-of-range rates.
  void validate() const;
};

/// Followers respond to yesterday's moves of the other three kinds, which move on their own.
enum class SyntheticRole { Follower, TypedHub, SocialHub, Leader };

struct SyntheticTruth {
  DatasetBundle bundle;
  std::vector<std::size_t> leaders;            // company indices
  std::vector<SyntheticRole> roles;            // per company
  std::vector<std::vector<double>> drive;      // [day][stock] neighbour signal behind day's label
  std::vector<std::vector<double>> returns;    // [day][stock] intraday return
};

SyntheticTruth generate_synthetic_with_truth(const SyntheticSpec& spec);
DatasetBundle generate_synthetic(const SyntheticSpec& spec);

/// What moves a follower on day t, from yesterday's signed returns: the mean of
/// three channels (typed hubs among its explicit neighbours, social hubs among
/// its CEC/CEEC neighbours, all leaders). A channel averages its non-empty
/// groups; a group contributes its sum over the square root of its size.
/// Zero for every other role.
double neighbour_signal(const MarketGraph& graph, const std::vector<SyntheticRole>& roles,
                        const std::vector<double>& returns, std::size_t company);

/// Weekdays in [start, end], ISO formatted.
std::vector<std::string> weekday_calendar(const std::string& start, const std::string& end);

/// key = value text. Unknown keys raise ConfigError listing valid keys.
SyntheticSpec parse_synthetic_spec(const std::string& text);
SyntheticSpec load_synthetic_spec(const std::filesystem::path& path);

// ---- configuration --------------------------------------------------------

ModelConfig parse_config(const std::string& text, ModelConfig base = {});
ModelConfig load_config(const std::filesystem::path& path);
/// One `key=value` line per setting, in a fixed order.
std::string format_config(const ModelConfig& config);
std::vector<std::string> config_keys();

// ---- checkpoints ----------------------------------------------------------

struct Checkpoint {
  ModelConfig config;
  ParamStore params;
  std::uint64_t checksum = 0;
};

/// Text checkpoint: version tag, seed, config echo, then one block per parameter.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

void save_history(const std::vector<EpochRecord>& history, const std::filesystem::path& path);
std::vector<EpochRecord> load_history(const std::filesystem::path& path);

// ---- reports --------------------------------------------------------------

/// report.csv (summary), daily.csv (selection and returns) and value_curve.csv.
void save_report(const BacktestReport& report, const std::filesystem::path& dir);
BacktestReport load_report(const std::filesystem::path& dir);

void save_metrics(const std::vector<std::pair<std::string, double>>& metrics, const std::filesystem::path& path);

/// Round-trippable decimal form of a double.
std::string format_double(double v);

}  // namespace mkg
