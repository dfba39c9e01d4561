#include "mkg/data_io.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "mkg/errors.hpp"

namespace mkg {

namespace fs = std::filesystem;

namespace {

// ---- text helpers ---------------------------------------------------------

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

bool parse_double(const std::string& s, double& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

template <typename Int>
bool parse_int(const std::string& s, Int& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

bool parse_bool(const std::string& s, bool& out) {
  if (s == "true" || s == "1") {
    out = true;
    return true;
  }
  if (s == "false" || s == "0") {
    out = false;
    return true;
  }
  return false;
}

std::optional<std::chrono::year_month_day> parse_date(const std::string& s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
  int y = 0;
  unsigned m = 0, d = 0;
  if (!parse_int(s.substr(0, 4), y) || !parse_int(s.substr(5, 2), m) || !parse_int(s.substr(8, 2), d)) {
    return std::nullopt;
  }
  std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) return std::nullopt;
  return ymd;
}

std::string format_date(std::chrono::year_month_day ymd) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

std::string version_line(const std::string& tag) { return "# mkg-" + tag + " v1"; }

struct Table {
  fs::path path;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;

  std::string where(std::size_t row) const {
    return path.filename().string() + " line " + std::to_string(lines[row]);
  }
};

Table read_table(const fs::path& path, const std::string& tag, const std::vector<std::string>& header) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  Table table;
  table.path = path;
  std::string line;
  std::size_t number = 0;
  auto next = [&]() {
    if (!std::getline(in, line)) return false;
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };
  if (!next() || trim(line) != version_line(tag)) {
    throw DataError(path.filename().string() + " line 1: expected version line '" + version_line(tag) + "'");
  }
  if (!next() || trim(line) != join(header, ',')) {
    throw DataError(path.filename().string() + " line 2: expected header '" + join(header, ',') + "'");
  }
  while (next()) {
    if (trim(line).empty()) continue;
    std::vector<std::string> fields = split(line, ',');
    if (fields.size() != header.size()) {
      throw DataError(path.filename().string() + " line " + std::to_string(number) + ": expected " +
                      std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
    }
    for (auto& f : fields) f = trim(f);
    table.rows.push_back(std::move(fields));
    table.lines.push_back(number);
  }
  return table;
}

void check_field(const std::string& field, const std::string& file) {
  if (field.find_first_of(",\n\r") != std::string::npos) {
    throw DataError(file + ": field '" + field + "' contains a delimiter");
  }
}

void write_table(const fs::path& path, const std::string& tag, const std::vector<std::string>& header,
                 const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << version_line(tag) << '\n' << join(header, ',') << '\n';
  for (const auto& row : rows) {
    for (const auto& f : row) check_field(f, path.filename().string());
    out << join(row, ',') << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

double field_double(const Table& t, std::size_t row, std::size_t col, const char* name) {
  double v = 0.0;
  if (!parse_double(t.rows[row][col], v)) {
    throw DataError(t.where(row) + ": " + name + " '" + t.rows[row][col] + "' is not a number");
  }
  return v;
}

std::int64_t field_int(const Table& t, std::size_t row, std::size_t col, const char* name) {
  std::int64_t v = 0;
  if (!parse_int(t.rows[row][col], v)) {
    throw DataError(t.where(row) + ": " + name + " '" + t.rows[row][col] + "' is not an integer");
  }
  return v;
}

const std::vector<std::string> kEntityHeader = {"id", "kind", "name"};
const std::vector<std::string> kEdgeHeader = {"kind", "src", "dst"};
const std::vector<std::string> kPriceHeader = {"stock", "date", "open", "close", "high", "low", "volume"};
const std::vector<std::string> kNewsHeader = {"stock", "date", "n_pos", "n_neg"};
const std::vector<std::string> kSplitHeader = {"train_end", "valid_end"};

std::string row_label(const char* file, std::size_t i) {
  return std::string(file) + " row " + std::to_string(i + 1);
}

// ---- randomness -----------------------------------------------------------

class Random {
 public:
  explicit Random(std::uint64_t seed) : engine_(seed) {}
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double open_uniform() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }
  double normal() {
    const double u = open_uniform(), v = uniform();
    return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * M_PI * v);
  }
  double logistic() {
    const double u = open_uniform();
    return std::log(u / (1.0 - u));
  }
  template <typename T>
  void shuffle_prefix(std::vector<T>& v, std::size_t k) {
    for (std::size_t i = 0; i < k && i + 1 < v.size(); ++i) {
      std::swap(v[i], v[i + below(v.size() - i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

using IndexPair = std::pair<std::size_t, std::size_t>;

std::vector<IndexPair> all_pairs(std::size_t n) {
  std::vector<IndexPair> out;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) out.emplace_back(a, b);
  }
  return out;
}

std::vector<IndexPair> sample(std::vector<IndexPair> pool, std::size_t k, Random& rng) {
  rng.shuffle_prefix(pool, k);
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

std::size_t edge_count(const SyntheticSpec& spec, RelationKind kind) {
  auto it = spec.edge_counts.find(kind);
  return it == spec.edge_counts.end() ? 0 : it->second;
}

std::string company_id(std::size_t i) {
  std::string digits = std::to_string(i);
  if (digits.size() < 3) digits.insert(0, 3 - digits.size(), '0');
  return "C" + digits;
}

std::string executive_id(std::size_t i) {
  std::string digits = std::to_string(i);
  if (digits.size() < 3) digits.insert(0, 3 - digits.size(), '0');
  return "E" + digits;
}

// ---- key = value files ----------------------------------------------------

using Setter = std::function<bool(const std::string&)>;

void apply_key_values(const std::string& text, const std::map<std::string, Setter>& setters, const char* what) {
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(std::string(what) + " line " + std::to_string(number) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end()) {
      std::vector<std::string> keys;
      for (const auto& [k, _] : setters) keys.push_back(k);
      throw ConfigError(std::string(what) + " line " + std::to_string(number) + ": unknown key '" + key +
                        "'; valid keys: " + join(keys, ','));
    }
    if (!it->second(value)) {
      throw ConfigError(std::string(what) + " line " + std::to_string(number) + ": invalid value '" + value +
                        "' for " + key);
    }
  }
}

template <typename T>
Setter size_setter(T& field) {
  return [&field](const std::string& v) { return parse_int(v, field); };
}

Setter double_setter(double& field) {
  return [&field](const std::string& v) { return parse_double(v, field); };
}

Setter bool_setter(bool& field) {
  return [&field](const std::string& v) { return parse_bool(v, field); };
}

Setter string_setter(std::string& field) {
  return [&field](const std::string& v) {
    field = v;
    return !v.empty();
  };
}

std::map<std::string, Setter> config_setters(ModelConfig& c) {
  return {
      {"lookback", size_setter(c.lookback)},
      {"slices", size_setter(c.slices)},
      {"hidden", size_setter(c.hidden)},
      {"attn_hidden", size_setter(c.attn_hidden)},
      {"learning_rate", double_setter(c.learning_rate)},
      {"eta", double_setter(c.eta)},
      {"max_epochs", size_setter(c.max_epochs)},
      {"patience", size_setter(c.patience)},
      {"seed", size_setter(c.seed)},
      {"use_executives", bool_setter(c.use_executives)},
      {"use_implicit", bool_setter(c.use_implicit)},
      {"use_explicit", bool_setter(c.use_explicit)},
      {"use_dual", bool_setter(c.use_dual)},
      {"implicit_gate", bool_setter(c.implicit_gate)},
      {"dual_layers", size_setter(c.dual_layers)},
      {"leaky_slope", double_setter(c.leaky_slope)},
      {"early_stop_metric", string_setter(c.early_stop_metric)},
      {"threads", size_setter(c.threads)},
  };
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

bool is_loadable_relation(RelationKind kind) {
  return kind != RelationKind::CEC && kind != RelationKind::CEEC && kind != RelationKind::Implicit;
}

// ---- validation -----------------------------------------------------------

void validate_dataset(const DatasetBundle& bundle) {
  std::map<std::string, EntityId> ids;
  std::size_t companies = 0, executives = 0;
  for (std::size_t i = 0; i < bundle.entities.size(); ++i) {
    const auto& e = bundle.entities[i];
    if (e.id.empty()) throw ValidationError(row_label("entities.csv", i) + ": empty id");
    const std::size_t index = e.kind == EntityKind::Company ? companies++ : executives++;
    if (!ids.emplace(e.id, EntityId{e.kind, index}).second) {
      throw ValidationError(row_label("entities.csv", i) + ": duplicate id '" + e.id + "'");
    }
  }
  if (companies < 1) throw ValidationError("entities.csv: no companies declared");

  MarketGraph graph(companies, executives);
  for (std::size_t i = 0; i < bundle.edges.size(); ++i) {
    const auto& e = bundle.edges[i];
    const std::string where = row_label("edges.csv", i);
    if (!is_loadable_relation(e.kind)) {
      throw ValidationError(where + ": relation '" + std::string(relation_name(e.kind)) +
                            "' is derived and cannot be loaded");
    }
    auto a = ids.find(e.src);
    auto b = ids.find(e.dst);
    if (a == ids.end()) throw ValidationError(where + ": undeclared entity '" + e.src + "'");
    if (b == ids.end()) throw ValidationError(where + ": undeclared entity '" + e.dst + "'");
    try {
      graph.add_edge({e.kind, a->second, b->second});
    } catch (const Error& err) {
      throw ValidationError(where + ": " + err.what());
    }
  }
  for (std::size_t x = 0; x < executives; ++x) {
    bool linked = false;
    for (RelationKind kind : kInterClassRelations) {
      linked = linked || !graph.neighbors({EntityKind::Executive, x}, kind).empty();
    }
    if (!linked) {
      std::string id;
      for (const auto& [name, eid] : ids) {
        if (eid.kind == EntityKind::Executive && eid.index == x) id = name;
      }
      throw ValidationError("executive '" + id + "' has no management or investment link to a company");
    }
  }

  std::set<std::string> dates;
  std::set<std::pair<std::string, std::string>> seen;
  for (std::size_t i = 0; i < bundle.prices.size(); ++i) {
    const auto& p = bundle.prices[i];
    const std::string where = row_label("prices.csv", i);
    auto it = ids.find(p.stock);
    if (it == ids.end()) throw ValidationError(where + ": undeclared stock '" + p.stock + "'");
    if (it->second.kind != EntityKind::Company) {
      throw ValidationError(where + ": '" + p.stock + "' is not a company");
    }
    if (!parse_date(p.bar.date)) throw DataError(where + ": invalid date '" + p.bar.date + "'");
    for (double v : {p.bar.open, p.bar.close, p.bar.high, p.bar.low}) {
      if (!std::isfinite(v) || v <= 0.0) throw DataError(where + ": prices must be positive and finite");
    }
    if (!std::isfinite(p.bar.volume) || p.bar.volume < 0.0) {
      throw DataError(where + ": volume must be non-negative and finite");
    }
    if (!seen.emplace(p.stock, p.bar.date).second) {
      throw ValidationError(where + ": duplicate bar for " + p.stock + " on " + p.bar.date);
    }
    dates.insert(p.bar.date);
  }
  if (dates.size() < 2) throw DataError("prices.csv: need at least two trading days");
  std::map<std::string, std::size_t> bars;
  for (const auto& p : bundle.prices) ++bars[p.stock];
  for (const auto& e : bundle.entities) {
    if (e.kind != EntityKind::Company) continue;
    if (bars[e.id] == dates.size()) continue;
    for (const auto& d : dates) {
      if (!seen.count({e.id, d})) {
        throw DataError("prices.csv: stock '" + e.id + "' has no bar on " + d +
                        " (stocks with missing bars are rejected)");
      }
    }
  }

  std::set<std::pair<std::string, std::string>> news_seen;
  for (std::size_t i = 0; i < bundle.news.size(); ++i) {
    const auto& n = bundle.news[i];
    const std::string where = row_label("news.csv", i);
    auto it = ids.find(n.stock);
    if (it == ids.end()) throw ValidationError(where + ": undeclared stock '" + n.stock + "'");
    if (it->second.kind != EntityKind::Company) {
      throw ValidationError(where + ": '" + n.stock + "' is not a company");
    }
    if (!dates.count(n.counts.date)) {
      throw DataError(where + ": date " + n.counts.date + " is not a trading day");
    }
    if (n.counts.n_pos < 0 || n.counts.n_neg < 0) throw DataError(where + ": negative word count");
    if (!news_seen.emplace(n.stock, n.counts.date).second) {
      throw ValidationError(where + ": duplicate news row for " + n.stock + " on " + n.counts.date);
    }
  }

  if (!parse_date(bundle.train_end) || !parse_date(bundle.valid_end)) {
    throw DataError("splits.csv: split dates must be ISO dates");
  }
  if (!(bundle.train_end < bundle.valid_end)) {
    throw DataError("splits.csv: train_end must precede valid_end");
  }
}

// ---- dataset files --------------------------------------------------------

DatasetBundle load_dataset(const fs::path& dir) {
  for (const char* name : {"entities.csv", "edges.csv", "prices.csv", "news.csv"}) {
    if (!fs::exists(dir / name)) throw DataError("missing dataset file " + (dir / name).string());
  }
  DatasetBundle bundle;

  const Table entities = read_table(dir / "entities.csv", "entities", kEntityHeader);
  for (std::size_t r = 0; r < entities.rows.size(); ++r) {
    const auto& f = entities.rows[r];
    EntityRecord e;
    e.id = f[0];
    if (f[1] == "company") {
      e.kind = EntityKind::Company;
    } else if (f[1] == "executive") {
      e.kind = EntityKind::Executive;
    } else {
      throw DataError(entities.where(r) + ": kind must be company or executive, got '" + f[1] + "'");
    }
    e.name = f[2];
    bundle.entities.push_back(std::move(e));
  }

  const Table edges = read_table(dir / "edges.csv", "edges", kEdgeHeader);
  for (std::size_t r = 0; r < edges.rows.size(); ++r) {
    const auto& f = edges.rows[r];
    auto kind = parse_relation(f[0]);
    if (!kind) throw DataError(edges.where(r) + ": unknown relation '" + f[0] + "'");
    if (!is_loadable_relation(*kind)) {
      throw DataError(edges.where(r) + ": relation '" + f[0] + "' is derived and cannot be loaded");
    }
    bundle.edges.push_back({*kind, f[1], f[2]});
  }

  const Table prices = read_table(dir / "prices.csv", "prices", kPriceHeader);
  for (std::size_t r = 0; r < prices.rows.size(); ++r) {
    const auto& f = prices.rows[r];
    PriceRecord p;
    p.stock = f[0];
    p.bar.date = f[1];
    if (!parse_date(p.bar.date)) throw DataError(prices.where(r) + ": invalid date '" + f[1] + "'");
    p.bar.open = field_double(prices, r, 2, "open");
    p.bar.close = field_double(prices, r, 3, "close");
    p.bar.high = field_double(prices, r, 4, "high");
    p.bar.low = field_double(prices, r, 5, "low");
    p.bar.volume = field_double(prices, r, 6, "volume");
    bundle.prices.push_back(std::move(p));
  }

  const Table news = read_table(dir / "news.csv", "news", kNewsHeader);
  for (std::size_t r = 0; r < news.rows.size(); ++r) {
    const auto& f = news.rows[r];
    NewsRecord n;
    n.stock = f[0];
    n.counts.date = f[1];
    n.counts.n_pos = field_int(news, r, 2, "n_pos");
    n.counts.n_neg = field_int(news, r, 3, "n_neg");
    bundle.news.push_back(std::move(n));
  }

  if (fs::exists(dir / "splits.csv")) {
    const Table splits = read_table(dir / "splits.csv", "splits", kSplitHeader);
    if (splits.rows.size() != 1) throw DataError("splits.csv: expected exactly one row");
    bundle.train_end = splits.rows[0][0];
    bundle.valid_end = splits.rows[0][1];
  }

  validate_dataset(bundle);
  return bundle;
}

void save_dataset(const DatasetBundle& bundle, const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<std::vector<std::string>> rows;
  for (const auto& e : bundle.entities) {
    rows.push_back({e.id, e.kind == EntityKind::Company ? "company" : "executive", e.name});
  }
  write_table(dir / "entities.csv", "entities", kEntityHeader, rows);

  rows.clear();
  for (const auto& e : bundle.edges) rows.push_back({std::string(relation_name(e.kind)), e.src, e.dst});
  write_table(dir / "edges.csv", "edges", kEdgeHeader, rows);

  rows.clear();
  for (const auto& p : bundle.prices) {
    rows.push_back({p.stock, p.bar.date, format_double(p.bar.open), format_double(p.bar.close),
                    format_double(p.bar.high), format_double(p.bar.low), format_double(p.bar.volume)});
  }
  write_table(dir / "prices.csv", "prices", kPriceHeader, rows);

  rows.clear();
  for (const auto& n : bundle.news) {
    rows.push_back({n.stock, n.counts.date, std::to_string(n.counts.n_pos), std::to_string(n.counts.n_neg)});
  }
  write_table(dir / "news.csv", "news", kNewsHeader, rows);

  write_table(dir / "splits.csv", "splits", kSplitHeader, {{bundle.train_end, bundle.valid_end}});
}

ModelData prepare_model_data(const DatasetBundle& bundle) {
  validate_dataset(bundle);
  ModelData data;
  std::map<std::string, EntityId> ids;
  std::size_t companies = 0, executives = 0;
  for (const auto& e : bundle.entities) {
    if (e.kind == EntityKind::Company) {
      ids[e.id] = {EntityKind::Company, companies++};
      data.stocks.push_back(e.id);
    } else {
      ids[e.id] = {EntityKind::Executive, executives++};
    }
  }
  std::vector<TypedEdge> edges;
  for (const auto& e : bundle.edges) edges.push_back({e.kind, ids.at(e.src), ids.at(e.dst)});
  data.graph = derive_meta_relations(build_graph(companies, executives, edges));

  std::set<std::string> date_set;
  for (const auto& p : bundle.prices) date_set.insert(p.bar.date);
  std::vector<std::string> dates(date_set.begin(), date_set.end());
  data.calendar = TradingCalendar(dates, bundle.train_end, bundle.valid_end);
  const std::size_t days = dates.size();

  std::vector<std::vector<RawDailyBar>> bars(companies, std::vector<RawDailyBar>(days));
  for (const auto& p : bundle.prices) bars[ids.at(p.stock).index][data.calendar.index_of(p.bar.date)] = p.bar;

  data.signals.assign(days, std::vector<DailySignals>(companies));
  data.labels.assign(days, std::vector<int>(companies, 0));
  data.closes.assign(days, std::vector<double>(companies, 0.0));
  for (std::size_t i = 0; i < companies; ++i) {
    const std::vector<IndicatorVector> ind = transform_indicators(bars[i], data.stocks[i]);
    for (std::size_t t = 0; t < days; ++t) {
      if (t > 0) data.signals[t][i].p = ind[t - 1];
      data.labels[t][i] = label(bars[i][t]);
      data.closes[t][i] = bars[i][t].close;
    }
  }
  for (const auto& n : bundle.news) {
    data.signals[data.calendar.index_of(n.counts.date)][ids.at(n.stock).index].q = compute_sentiment(n.counts);
  }
  return data;
}

// ---- synthetic data -------------------------------------------------------

void SyntheticSpec::validate() const {
  if (companies < 2) throw ConfigError("synthetic spec: need at least two companies");
  if (executives < 1) throw ConfigError("synthetic spec: need at least one executive");
  if (!(spillover >= 0.0 && spillover <= 1.0)) throw ConfigError("synthetic spec: spillover must lie in [0, 1]");
  if (!(noise >= 0.0) || !(signal_scale >= 0.0) || !(return_scale > 0.0) || !(leader_move > 0.0)) {
    throw ConfigError(
        "synthetic spec: noise and signal_scale must be non-negative, return_scale and leader_move positive");
  }
  if (!(news_rate >= 0.0 && news_rate <= 1.0)) throw ConfigError("synthetic spec: news_rate must lie in [0, 1]");
  if (leaders + hubs >= companies) throw ConfigError("synthetic spec: leaders and hubs leave no follower");
  if (!parse_date(start) || !parse_date(end) || !(start <= end)) {
    throw ConfigError("synthetic spec: start and end must be ISO dates with start <= end");
  }
  if (!parse_date(train_end) || !parse_date(valid_end) || !(train_end < valid_end)) {
    throw ConfigError("synthetic spec: split dates must be ISO dates with train_end < valid_end");
  }
  const std::size_t company_pairs = companies * (companies - 1) / 2;
  const std::size_t executive_pairs = executives * (executives - 1) / 2;
  const std::size_t cross = companies * executives;
  for (const auto& [kind, count] : edge_counts) {
    const std::string name(relation_name(kind));
    if (!is_loadable_relation(kind)) throw ConfigError("synthetic spec: cannot generate " + name + " edges");
    const std::size_t limit = is_company_relation(kind) ? company_pairs
                              : is_executive_relation(kind) ? executive_pairs
                                                            : cross;
    if (count > limit) {
      throw ConfigError("synthetic spec: " + std::to_string(count) + " " + name + " edges exceed the " +
                        std::to_string(limit) + " possible pairs");
    }
  }
  const std::size_t management = edge_count(*this, RelationKind::Management);
  const std::size_t investment = edge_count(*this, RelationKind::ExecInvestment);
  if (management < executives) {
    throw ConfigError("synthetic spec: " + std::to_string(management) + " management edges cannot link all " +
                      std::to_string(executives) + " executives");
  }
  if (management + investment > cross) {
    throw ConfigError("synthetic spec: management and exec_investment edges exceed the possible pairs");
  }
  if (weekday_calendar(start, end).size() < 2) throw ConfigError("synthetic spec: fewer than two weekdays");
}

std::vector<std::string> weekday_calendar(const std::string& start, const std::string& end) {
  auto a = parse_date(start);
  auto b = parse_date(end);
  if (!a || !b) throw ConfigError("calendar bounds must be ISO dates");
  std::vector<std::string> out;
  for (std::chrono::sys_days d{*a}; d <= std::chrono::sys_days{*b}; d += std::chrono::days{1}) {
    const std::chrono::weekday wd{d};
    if (wd == std::chrono::Saturday || wd == std::chrono::Sunday) continue;
    out.push_back(format_date(std::chrono::year_month_day{d}));
  }
  return out;
}

double neighbour_signal(const MarketGraph& graph, const std::vector<SyntheticRole>& roles,
                        const std::vector<double>& returns, std::size_t company) {
  if (roles[company] != SyntheticRole::Follower) return 0.0;
  // Group: sum of hub returns over sqrt(size). Channel: mean of its groups.
  auto group = [&](const std::vector<std::size_t>& members, SyntheticRole role, double& sum, std::size_t& count) {
    double s = 0.0;
    std::size_t k = 0;
    for (std::size_t j : members) {
      if (roles[j] != role) continue;
      s += returns[j];
      ++k;
    }
    if (k == 0) return;
    sum += s / std::sqrt(static_cast<double>(k));
    ++count;
  };
  const EntityId self{EntityKind::Company, company};
  double total = 0.0;
  std::size_t channels = 0;
  auto close_channel = [&](double sum, std::size_t count) {
    if (count == 0) return;
    total += sum / static_cast<double>(count);
    ++channels;
  };
  double sum = 0.0;
  std::size_t count = 0;
  for (RelationKind kind : kExplicitRelations) group(graph.neighbors(self, kind), SyntheticRole::TypedHub, sum, count);
  close_channel(sum, count);
  sum = 0.0;
  count = 0;
  group(graph.neighbors(self, RelationKind::CEC), SyntheticRole::SocialHub, sum, count);
  group(graph.neighbors(self, RelationKind::CEEC), SyntheticRole::SocialHub, sum, count);
  close_channel(sum, count);
  std::vector<std::size_t> all(roles.size());
  std::iota(all.begin(), all.end(), 0);
  sum = 0.0;
  count = 0;
  group(all, SyntheticRole::Leader, sum, count);
  close_channel(sum, count);
  return channels ? total / static_cast<double>(channels) : 0.0;
}

SyntheticTruth generate_synthetic_with_truth(const SyntheticSpec& spec) {
  spec.validate();
  Random rng(spec.seed);
  const std::size_t n = spec.companies, m = spec.executives;
  SyntheticTruth truth;
  DatasetBundle& bundle = truth.bundle;
  bundle.train_end = spec.train_end;
  bundle.valid_end = spec.valid_end;
  for (std::size_t i = 0; i < n; ++i) bundle.entities.push_back({company_id(i), EntityKind::Company, "Company " + std::to_string(i)});
  for (std::size_t e = 0; e < m; ++e) {
    bundle.entities.push_back({executive_id(e), EntityKind::Executive, "Executive " + std::to_string(e)});
  }

  // Hubs and leaders move on their own; followers respond to them.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle_prefix(order, n);
  truth.roles.assign(n, SyntheticRole::Follower);
  const std::size_t typed_hubs = (spec.hubs + 1) / 2;
  for (std::size_t k = 0; k < spec.leaders + spec.hubs; ++k) {
    truth.roles[order[k]] = k < spec.leaders                ? SyntheticRole::Leader
                            : k < spec.leaders + typed_hubs ? SyntheticRole::TypedHub
                                                            : SyntheticRole::SocialHub;
    if (k < spec.leaders) truth.leaders.push_back(order[k]);
  }
  std::sort(truth.leaders.begin(), truth.leaders.end());
  const std::vector<SyntheticRole>& roles = truth.roles;

  // Management: every executive runs one company, companies covered first.
  rng.shuffle_prefix(order, n);
  std::set<IndexPair> managed;  // (company, executive)
  std::vector<std::size_t> employer(m);
  for (std::size_t e = 0; e < m; ++e) {
    employer[e] = e < n ? order[e] : rng.below(n);
    managed.insert({employer[e], e});
  }
  std::vector<IndexPair> cross_pool;
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t e = 0; e < m; ++e) {
      if (!managed.count({c, e})) cross_pool.emplace_back(c, e);
    }
  }
  const std::size_t extra_management = edge_count(spec, RelationKind::Management) - m;
  rng.shuffle_prefix(cross_pool, cross_pool.size());
  for (std::size_t k = 0; k < extra_management; ++k) managed.insert(cross_pool[k]);
  std::vector<IndexPair> invested(cross_pool.begin() + static_cast<std::ptrdiff_t>(extra_management),
                                  cross_pool.begin() + static_cast<std::ptrdiff_t>(
                                                           extra_management +
                                                           edge_count(spec, RelationKind::ExecInvestment)));
  std::sort(invested.begin(), invested.end());

  std::vector<TypedEdge> typed;
  auto add = [&](RelationKind kind, EntityId a, EntityId b) {
    typed.push_back({kind, a, b});
    const auto name = [](EntityId id) {
      return id.kind == EntityKind::Company ? company_id(id.index) : executive_id(id.index);
    };
    bundle.edges.push_back({kind, name(a), name(b)});
  };
  // Typed links join a typed hub and a follower; executive ties join the
  // executives of a social hub and a follower. Nothing loops back.
  auto bridging = [](const std::vector<SyntheticRole>& side, SyntheticRole hub) {
    std::vector<IndexPair> out;
    for (const auto& [a, b] : all_pairs(side.size())) {
      if ((side[a] == hub && side[b] == SyntheticRole::Follower) ||
          (side[b] == hub && side[a] == SyntheticRole::Follower)) {
        out.emplace_back(a, b);
      }
    }
    return out;
  };
  std::vector<SyntheticRole> executive_roles(m);
  for (std::size_t e = 0; e < m; ++e) executive_roles[e] = roles[employer[e]];
  const std::vector<IndexPair> company_pool = bridging(roles, SyntheticRole::TypedHub);
  const std::vector<IndexPair> executive_pool = bridging(executive_roles, SyntheticRole::SocialHub);
  auto draw = [&](const std::vector<IndexPair>& pool, RelationKind kind) {
    const std::size_t count = edge_count(spec, kind);
    if (count > pool.size()) {
      throw ConfigError("synthetic spec: " + std::to_string(count) + " " + std::string(relation_name(kind)) +
                        " edges exceed the " + std::to_string(pool.size()) + " hub-follower pairs");
    }
    return sample(pool, count, rng);
  };
  for (RelationKind kind : kExplicitRelations) {
    for (const auto& [a, b] : draw(company_pool, kind)) {
      add(kind, {EntityKind::Company, a}, {EntityKind::Company, b});
    }
  }
  for (const auto& [c, e] : managed) add(RelationKind::Management, {EntityKind::Company, c}, {EntityKind::Executive, e});
  for (const auto& [c, e] : invested) {
    add(RelationKind::ExecInvestment, {EntityKind::Company, c}, {EntityKind::Executive, e});
  }
  for (RelationKind kind : kExecutiveRelations) {
    for (const auto& [a, b] : draw(executive_pool, kind)) {
      add(kind, {EntityKind::Executive, a}, {EntityKind::Executive, b});
    }
  }

  const MarketGraph graph = derive_meta_relations(build_graph(n, m, typed));
  const std::vector<std::string> dates = weekday_calendar(spec.start, spec.end);
  std::vector<double> close(n);
  for (auto& c : close) c = 20.0 + 180.0 * rng.uniform();
  std::vector<double> z_prev(n, 0.0);  // signed return in units of return_scale
  truth.drive.assign(dates.size(), std::vector<double>(n, 0.0));
  truth.returns.assign(dates.size(), std::vector<double>(n, 0.0));
  const double gain = spec.spillover * spec.signal_scale;
  for (std::size_t t = 0; t < dates.size(); ++t) {
    std::vector<double> z(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double drive = t == 0 ? 0.0 : neighbour_signal(graph, roles, z_prev, i);
      truth.drive[t][i] = drive;
      const double x = gain * drive + spec.noise * rng.logistic();
      const bool up = x > 0.0 || (x == 0.0 && rng.uniform() < 0.5);
      z[i] = (up ? 1.0 : -1.0) * std::max(std::abs(rng.normal()), 0.01);
      const double r = z[i] * spec.return_scale * (roles[i] == SyntheticRole::Leader ? spec.leader_move : 1.0);
      truth.returns[t][i] = r;

      RawDailyBar bar;
      bar.date = dates[t];
      bar.open = close[i] * (1.0 + 0.003 * rng.normal());
      bar.close = bar.open * (1.0 + r);
      bar.high = std::max(bar.open, bar.close) * (1.0 + 0.004 * std::abs(rng.normal()));
      bar.low = std::min(bar.open, bar.close) * (1.0 - 0.004 * std::abs(rng.normal()));
      bar.volume = std::round(1e6 * (1.0 + 25.0 * std::abs(r)) * std::exp(0.2 * rng.normal()));
      close[i] = bar.close;
      bundle.prices.push_back({company_id(i), bar});

      if (roles[i] == SyntheticRole::Leader || rng.uniform() < spec.news_rate) {
        const std::int64_t total = 1 + static_cast<std::int64_t>(rng.below(20));
        const double p_pos = 1.0 / (1.0 + std::exp(-z[i]));
        std::int64_t pos = 0;
        for (std::int64_t k = 0; k < total; ++k) pos += rng.uniform() < p_pos ? 1 : 0;
        bundle.news.push_back({company_id(i), {dates[t], pos, total - pos}});
      }
    }
    z_prev = std::move(z);
  }
  return truth;
}

DatasetBundle generate_synthetic(const SyntheticSpec& spec) { return generate_synthetic_with_truth(spec).bundle; }

SyntheticSpec parse_synthetic_spec(const std::string& text) {
  SyntheticSpec spec;
  std::map<std::string, Setter> setters = {
      {"companies", size_setter(spec.companies)},
      {"executives", size_setter(spec.executives)},
      {"spillover", double_setter(spec.spillover)},
      {"noise", double_setter(spec.noise)},
      {"signal_scale", double_setter(spec.signal_scale)},
      {"leaders", size_setter(spec.leaders)},
      {"hubs", size_setter(spec.hubs)},
      {"news_rate", double_setter(spec.news_rate)},
      {"return_scale", double_setter(spec.return_scale)},
      {"leader_move", double_setter(spec.leader_move)},
      {"start", string_setter(spec.start)},
      {"end", string_setter(spec.end)},
      {"train_end", string_setter(spec.train_end)},
      {"valid_end", string_setter(spec.valid_end)},
      {"seed", size_setter(spec.seed)},
  };
  for (std::size_t k = 0; k < kRelationKindCount; ++k) {
    const auto kind = static_cast<RelationKind>(k);
    if (!is_loadable_relation(kind)) continue;
    setters[std::string(relation_name(kind))] = [&spec, kind](const std::string& v) {
      std::size_t count = 0;
      if (!parse_int(v, count)) return false;
      spec.edge_counts[kind] = count;
      return true;
    };
  }
  apply_key_values(text, setters, "spec");
  return spec;
}

SyntheticSpec load_synthetic_spec(const fs::path& path) { return parse_synthetic_spec(read_file(path)); }

// ---- configuration --------------------------------------------------------

ModelConfig parse_config(const std::string& text, ModelConfig base) {
  apply_key_values(text, config_setters(base), "config");
  base.validate();
  return base;
}

ModelConfig load_config(const fs::path& path) { return parse_config(read_file(path)); }

std::vector<std::string> config_keys() {
  return {"lookback",     "slices",         "hidden",       "attn_hidden",   "learning_rate", "eta",
          "max_epochs",   "patience",       "seed",         "use_executives", "use_implicit",  "use_explicit",
          "use_dual",     "implicit_gate",  "dual_layers",  "leaky_slope",   "early_stop_metric", "threads"};
}

std::string format_config(const ModelConfig& c) {
  auto b = [](bool v) { return v ? std::string("true") : std::string("false"); };
  std::ostringstream out;
  out << "lookback=" << c.lookback << '\n'
      << "slices=" << c.slices << '\n'
      << "hidden=" << c.hidden << '\n'
      << "attn_hidden=" << c.attn_hidden << '\n'
      << "learning_rate=" << format_double(c.learning_rate) << '\n'
      << "eta=" << format_double(c.eta) << '\n'
      << "max_epochs=" << c.max_epochs << '\n'
      << "patience=" << c.patience << '\n'
      << "seed=" << c.seed << '\n'
      << "use_executives=" << b(c.use_executives) << '\n'
      << "use_implicit=" << b(c.use_implicit) << '\n'
      << "use_explicit=" << b(c.use_explicit) << '\n'
      << "use_dual=" << b(c.use_dual) << '\n'
      << "implicit_gate=" << b(c.implicit_gate) << '\n'
      << "dual_layers=" << c.dual_layers << '\n'
      << "leaky_slope=" << format_double(c.leaky_slope) << '\n'
      << "early_stop_metric=" << c.early_stop_metric << '\n'
      << "threads=" << c.threads << '\n';
  return out.str();
}

// ---- checkpoints ----------------------------------------------------------

void save_checkpoint(const Checkpoint& checkpoint, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "mkg-checkpoint v1\n";
  out << "seed " << checkpoint.config.seed << '\n';
  std::istringstream config(format_config(checkpoint.config));
  std::string line;
  while (std::getline(config, line)) out << "config " << line << '\n';
  out << "params " << checkpoint.params.size() << '\n';
  for (const auto& [name, t] : checkpoint.params) {
    out << "param " << name << ' ' << t.rank();
    for (std::size_t d : t.shape()) out << ' ' << d;
    out << '\n';
    for (std::size_t i = 0; i < t.size(); ++i) out << (i ? " " : "") << format_double(t[i]);
    out << '\n';
  }
  out << "checksum " << hex64(params_checksum(checkpoint.params)) << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::string line;
  std::size_t number = 0;
  auto next = [&](const char* expect) {
    if (!std::getline(in, line)) throw DataError(path.filename().string() + ": truncated before " + expect);
    ++number;
    return line;
  };
  auto fail = [&](const std::string& msg) {
    throw DataError(path.filename().string() + " line " + std::to_string(number) + ": " + msg);
  };
  if (next("version") != "mkg-checkpoint v1") fail("expected 'mkg-checkpoint v1'");
  std::uint64_t seed = 0;
  if (next("seed").rfind("seed ", 0) != 0 || !parse_int(line.substr(5), seed)) fail("expected seed");

  std::string config_text;
  while (next("params").rfind("config ", 0) == 0) config_text += line.substr(7) + '\n';
  Checkpoint ck;
  try {
    ck.config = parse_config(config_text);
  } catch (const ConfigError& e) {
    fail(std::string("config echo: ") + e.what());
  }
  if (ck.config.seed != seed) fail("seed line disagrees with config echo");

  std::size_t count = 0;
  if (line.rfind("params ", 0) != 0 || !parse_int(line.substr(7), count)) fail("expected params count");
  for (std::size_t k = 0; k < count; ++k) {
    std::istringstream head(next("param header"));
    std::string tag, name;
    std::size_t rank = 0;
    head >> tag >> name >> rank;
    if (tag != "param" || name.empty() || rank == 0) fail("expected 'param <name> <rank> <dims>'");
    Shape shape(rank);
    for (auto& d : shape) {
      if (!(head >> d) || d == 0) fail("bad shape for " + name);
    }
    const std::vector<std::string> fields = split(next("values"), ' ');
    if (fields.size() != shape_size(shape)) fail("expected " + std::to_string(shape_size(shape)) + " values for " + name);
    std::vector<double> values(fields.size());
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (!parse_double(fields[i], values[i])) fail("bad value '" + fields[i] + "' for " + name);
    }
    ck.params.emplace(name, Tensor(shape, std::move(values)));
  }
  std::string stored;
  if (next("checksum").rfind("checksum ", 0) != 0) fail("expected checksum");
  stored = trim(line.substr(9));
  ck.checksum = params_checksum(ck.params);
  if (stored != hex64(ck.checksum)) fail("checksum mismatch (file " + stored + ", computed " + hex64(ck.checksum) + ")");

  const auto expected = parameter_shapes(ck.config);
  if (expected.size() != ck.params.size()) fail("parameter registry does not match the config echo");
  for (const auto& [name, shape] : expected) {
    auto it = ck.params.find(name);
    if (it == ck.params.end() || it->second.shape() != shape) {
      fail("parameter " + name + " missing or mis-shaped for the config echo");
    }
  }
  return ck;
}

void save_history(const std::vector<EpochRecord>& history, const fs::path& path) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : history) {
    rows.push_back({std::to_string(r.epoch), format_double(r.train_loss), format_double(r.valid_pr_auc),
                    format_double(r.valid_roc_auc), format_double(r.valid_da)});
  }
  write_table(path, "history", {"epoch", "train_loss", "valid_pr_auc", "valid_roc_auc", "valid_da"}, rows);
}

std::vector<EpochRecord> load_history(const fs::path& path) {
  const Table t = read_table(path, "history", {"epoch", "train_loss", "valid_pr_auc", "valid_roc_auc", "valid_da"});
  std::vector<EpochRecord> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    EpochRecord rec;
    rec.epoch = static_cast<std::size_t>(field_int(t, r, 0, "epoch"));
    rec.train_loss = field_double(t, r, 1, "train_loss");
    rec.valid_pr_auc = field_double(t, r, 2, "valid_pr_auc");
    rec.valid_roc_auc = field_double(t, r, 3, "valid_roc_auc");
    rec.valid_da = field_double(t, r, 4, "valid_da");
    out.push_back(rec);
  }
  return out;
}

// ---- reports --------------------------------------------------------------

void save_report(const BacktestReport& report, const fs::path& dir) {
  fs::create_directories(dir);
  write_table(dir / "report.csv", "report", {"key", "value"},
              {{"days", std::to_string(report.dates.size())},
               {"cumulative_return", format_double(report.cumulative_return)},
               {"raw_irr", format_double(report.raw_irr)},
               {"sharpe", format_double(report.sharpe)},
               {"directional_accuracy", format_double(report.directional_accuracy)},
               {"pr_auc", format_double(report.pr_auc)},
               {"roc_auc", format_double(report.roc_auc)}});

  std::vector<std::vector<std::string>> rows;
  for (std::size_t d = 0; d < report.dates.size(); ++d) {
    std::vector<std::string> held;
    for (std::size_t i : report.selected[d]) held.push_back(std::to_string(i));
    rows.push_back({report.dates[d], join(held, ';'), format_double(report.raw_returns[d]),
                    format_double(report.portfolio_returns[d])});
  }
  write_table(dir / "daily.csv", "daily", {"date", "selected", "raw_return", "portfolio_return"}, rows);

  rows.clear();
  for (std::size_t k = 0; k < report.value_curve.size(); ++k) {
    rows.push_back({std::to_string(k), k == 0 ? std::string("start") : report.dates[k - 1],
                    format_double(report.value_curve[k])});
  }
  write_table(dir / "value_curve.csv", "value-curve", {"step", "date", "value"}, rows);
}

BacktestReport load_report(const fs::path& dir) {
  BacktestReport report;
  const Table summary = read_table(dir / "report.csv", "report", {"key", "value"});
  std::map<std::string, double> values;
  for (std::size_t r = 0; r < summary.rows.size(); ++r) values[summary.rows[r][0]] = field_double(summary, r, 1, "value");
  auto get = [&](const char* key) {
    auto it = values.find(key);
    if (it == values.end()) throw DataError("report.csv: missing key " + std::string(key));
    return it->second;
  };
  report.cumulative_return = get("cumulative_return");
  report.raw_irr = get("raw_irr");
  report.sharpe = get("sharpe");
  report.directional_accuracy = get("directional_accuracy");
  report.pr_auc = get("pr_auc");
  report.roc_auc = get("roc_auc");

  const Table daily = read_table(dir / "daily.csv", "daily", {"date", "selected", "raw_return", "portfolio_return"});
  for (std::size_t r = 0; r < daily.rows.size(); ++r) {
    report.dates.push_back(daily.rows[r][0]);
    std::vector<std::size_t> held;
    for (const auto& f : split(daily.rows[r][1], ';')) {
      std::size_t i = 0;
      if (!parse_int(f, i)) throw DataError(daily.where(r) + ": bad stock index '" + f + "'");
      held.push_back(i);
    }
    report.selected.push_back(std::move(held));
    report.raw_returns.push_back(field_double(daily, r, 2, "raw_return"));
    report.portfolio_returns.push_back(field_double(daily, r, 3, "portfolio_return"));
  }
  const Table curve = read_table(dir / "value_curve.csv", "value-curve", {"step", "date", "value"});
  for (std::size_t r = 0; r < curve.rows.size(); ++r) report.value_curve.push_back(field_double(curve, r, 2, "value"));
  if (static_cast<double>(report.dates.size()) != get("days") || report.value_curve.size() != report.dates.size() + 1) {
    throw DataError("report files disagree on the number of days");
  }
  return report;
}

void save_metrics(const std::vector<std::pair<std::string, double>>& metrics, const fs::path& path) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& [k, v] : metrics) rows.push_back({k, format_double(v)});
  write_table(path, "metrics", {"metric", "value"}, rows);
}

}  // namespace mkg
