#include "mkg/model.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>
#include <thread>

#include "mkg/errors.hpp"
#include "mkg/evaluation.hpp"

namespace mkg {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;  // [0, 1)
}

bool is_bias(const std::string& name) {
  const std::string leaf = name.substr(name.rfind('.') + 1);
  return leaf == "b" || leaf.rfind("b_", 0) == 0;
}

std::pair<double, double> fans(const Shape& shape) {
  if (shape.size() == 1) return {static_cast<double>(shape[0]), 1.0};
  if (shape.size() == 2) return {static_cast<double>(shape[1]), static_cast<double>(shape[0])};
  // [5 x 3 x M] fusion tensor: bilinear input to M slices.
  return {static_cast<double>(shape[0] * shape[1]), static_cast<double>(shape[2])};
}

double mean_nll(const std::vector<DayPrediction>& preds, const ModelData& data) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& p : preds) {
    for (std::size_t i = 0; i < p.up.size(); ++i) {
      const double prob = data.labels[p.day][i] == 1 ? p.up[i] : 1.0 - p.up[i];
      total -= std::log(std::max(prob, 1e-12));
      ++count;
    }
  }
  return count ? total / static_cast<double>(count) : kNaN;
}

std::vector<std::size_t> usable_days(const ModelData& data, TradingCalendar::Split split, std::size_t lookback) {
  std::vector<std::size_t> out;
  for (std::size_t t : data.calendar.eligible_days(split, lookback)) {
    if (t < data.signals.size()) out.push_back(t);
  }
  return out;
}

double loss_value(const ModelData& data, const ModelConfig& config, const ParamStore& params, std::size_t day) {
  Tape tape(false);
  VarMap vars = record_parameters(tape, params);
  DayForward fwd = forward_day(tape, vars, data, day, config);
  return day_loss(fwd, data, day).value().item();
}

}  // namespace

DualConfig ModelConfig::dual() const {
  DualConfig d;
  d.use_executives = use_executives;
  d.use_implicit = use_implicit;
  d.use_explicit = use_explicit;
  d.use_dual = use_dual;
  d.implicit_gate = implicit_gate;
  d.layers = dual_layers;
  d.slope = leaky_slope;
  return d;
}

void ModelConfig::validate() const {
  if (lookback == 0 || slices == 0 || hidden == 0 || attn_hidden == 0) {
    throw ConfigError("lookback, slices, hidden and attn_hidden must be positive");
  }
  if (dual_layers == 0) throw ConfigError("dual_layers must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (std::isnan(eta)) throw ConfigError("eta must be a number");
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) throw ConfigError("leaky_slope must lie in (0, 1)");
  if (early_stop_metric != "pr_auc" && early_stop_metric != "roc_auc" && early_stop_metric != "da") {
    throw ConfigError("early_stop_metric must be one of pr_auc, roc_auc, da; got " + early_stop_metric);
  }
  if (threads == 0) throw ConfigError("threads must be at least 1");
}

std::map<std::string, Shape> parameter_shapes(const ModelConfig& config) {
  const std::size_t m = config.slices, f = config.hidden, fp = config.attn_hidden;
  std::map<std::string, Shape> out;
  out["fusion.W_T"] = {kIndicatorWidth, kSentimentWidth, m};
  out["fusion.V"] = {m, kIndicatorWidth + kSentimentWidth};
  out["fusion.b"] = {m};
  for (const char* gate : {"z", "r", "h"}) {
    out[std::string("gru.W_") + gate] = {f, m};
    out[std::string("gru.U_") + gate] = {f, f};
    out[std::string("gru.b_") + gate] = {f};
  }
  if (config.use_implicit) out["implicit.u"] = {2 * f};
  out["head.W"] = {2, f + fp};
  out["head.b"] = {2};

  const DualConfig dual = config.dual();
  if (!config.use_dual) {
    out["flat.W"] = {fp, f};
    out["flat.a"] = {2 * fp};
    return out;
  }
  const std::vector<RelationKind> relations = company_relations(dual);
  for (std::size_t layer = 0; layer < config.dual_layers; ++layer) {
    const std::string p = layer_prefix(layer);
    const std::size_t in = layer == 0 ? f : fp;
    out[p + "project.company"] = {fp, in};
    if (config.use_executives) {
      out[p + "project.executive"] = {fp, in};
      for (RelationKind kind : kInterClassRelations) out[p + "inter.a_" + std::string(relation_name(kind))] = {2 * fp};
      out[p + "inter.q_company"] = {fp};
      out[p + "inter.q_executive"] = {fp};
      out[p + "intra.W_executive"] = {fp, fp};
      out[p + "intra.q_executive"] = {fp};
      for (RelationKind kind : kExecutiveRelations) out[p + "intra.a_" + std::string(relation_name(kind))] = {2 * fp};
    }
    if (!relations.empty()) {
      out[p + "intra.W_company"] = {fp, fp};
      out[p + "intra.q_company"] = {fp};
      for (RelationKind kind : relations) out[p + "intra.a_" + std::string(relation_name(kind))] = {2 * fp};
    }
  }
  return out;
}

ParamStore init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  ParamStore out;
  for (const auto& [name, shape] : parameter_shapes(config)) {
    Tensor t(shape);
    if (!is_bias(name)) {
      const auto [fan_in, fan_out] = fans(shape);
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      for (auto& v : t.data()) v = (2.0 * unit_uniform(rng) - 1.0) * limit;
    }
    out.emplace(name, std::move(t));
  }
  return out;
}

std::uint64_t params_checksum(const ParamStore& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, t] : params) {
    mix(name.data(), name.size());
    for (std::size_t d : t.shape()) {
      const std::uint64_t v = d;
      mix(&v, sizeof v);
    }
    for (double v : t.data()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      mix(&bits, sizeof bits);
    }
  }
  return h;
}

VarMap record_parameters(Tape& tape, const ParamStore& params) {
  VarMap vars;
  for (const auto& [name, t] : params) vars.emplace(name, tape.parameter(name, t));
  return vars;
}

DayForward forward_day(Tape& tape, const VarMap& vars, const ModelData& data, std::size_t t,
                       const ModelConfig& config) {
  const std::size_t n = data.stock_count();
  const std::size_t steps = config.lookback;
  const auto [first, last] = window_bounds(t, steps);
  if (last > data.signals.size() || t >= data.labels.size()) {
    throw WindowError("day " + std::to_string(t) + " is beyond the loaded data");
  }
  if (data.graph.company_count() != n) throw ContractError("forward_day: graph and stock list disagree");

  Tensor p({steps * n, kIndicatorWidth});
  Tensor q({steps * n, kSentimentWidth});
  for (std::size_t k = 0; k < steps; ++k) {
    const auto& day = data.signals[first + k];
    if (day.size() != n) throw DataError("signals for day " + std::to_string(first + k) + " are incomplete");
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < kIndicatorWidth; ++c) p(k * n + i, c) = day[i].p[c];
      for (std::size_t c = 0; c < kSentimentWidth; ++c) q(k * n + i, c) = day[i].q[c];
    }
  }
  Var fused = fuse(tape.constant(std::move(p)), tape.constant(std::move(q)), FusionVars::from(vars));
  std::vector<Var> inputs;
  for (std::size_t k = 0; k < steps; ++k) inputs.push_back(slice_rows(fused, k * n, n));

  DayForward out;
  out.sequential = encode_sequence(inputs, GruVars::from(vars));
  if (config.use_implicit) {
    out.implicit = infer_implicit_edges(out.sequential, require_var(vars, "implicit.u"), config.eta,
                                        config.leaky_slope);
  }
  out.dual = dual_forward(data.graph, out.sequential, out.implicit, vars, config.dual());
  Var logits = add_row(matmul_nt(concat_cols({out.sequential, out.dual.companies}), require_var(vars, "head.W")),
                       require_var(vars, "head.b"));
  out.probabilities = row_softmax(logits);
  return out;
}

Var day_loss(const DayForward& forward, const ModelData& data, std::size_t t) {
  return nll_clamped(forward.probabilities, data.labels.at(t));
}

std::vector<DayPrediction> predict_days(const ParamStore& params, const ModelData& data,
                                        const std::vector<std::size_t>& days, const ModelConfig& config) {
  std::vector<DayPrediction> out(days.size());
  auto run = [&](std::size_t k) {
    Tape tape(false);
    VarMap vars = record_parameters(tape, params);
    DayForward fwd = forward_day(tape, vars, data, days[k], config);
    const Tensor& probs = fwd.probabilities.value();
    out[k].day = days[k];
    out[k].up.resize(probs.rows());
    for (std::size_t i = 0; i < probs.rows(); ++i) out[k].up[i] = probs(i, 1);
  };
  const std::size_t workers = std::min(config.threads, days.size());
  if (workers <= 1) {
    for (std::size_t k = 0; k < days.size(); ++k) run(k);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t k = next++; k < days.size(); k = next++) run(k);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

SplitMetrics evaluate_days(const ParamStore& params, const ModelData& data, const std::vector<std::size_t>& days,
                           const ModelConfig& config) {
  if (days.empty()) throw ContractError("evaluate_days: no days to evaluate");
  const std::vector<DayPrediction> preds = predict_days(params, data, days, config);
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& p : preds) {
    scores.insert(scores.end(), p.up.begin(), p.up.end());
    labels.insert(labels.end(), data.labels[p.day].begin(), data.labels[p.day].end());
  }
  SplitMetrics m;
  m.loss = mean_nll(preds, data);
  m.directional_accuracy = directional_accuracy(scores, labels);
  try {
    m.pr_auc = auc_pr(scores, labels);
    m.roc_auc = auc_roc(scores, labels);
  } catch (const UndefinedMetricError&) {
    m.pr_auc = kNaN;
    m.roc_auc = kNaN;
  }
  return m;
}

TrainResult train(const ModelData& data, const ModelConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  TrainResult result;
  ParamStore params = init_params(config, config.seed);
  result.params = params;

  std::vector<std::size_t> order = usable_days(data, TradingCalendar::Split::Train, config.lookback);
  const std::vector<std::size_t> valid = usable_days(data, TradingCalendar::Split::Valid, config.lookback);
  if (order.empty()) throw DataError("no training day has a full lookback window");
  result.initial_train_loss = evaluate_days(params, data, order, config).loss;
  if (config.max_epochs == 0) return result;

  AdamState adam;
  adam.learning_rate = config.learning_rate;
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  double best = -std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  const double per_day = static_cast<double>(data.stock_count());

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);
    }
    double total = 0.0;
    for (std::size_t t : order) {
      Tape tape;
      VarMap vars = record_parameters(tape, params);
      Var loss = day_loss(forward_day(tape, vars, data, t, config), data, t);
      const double value = loss.value().item();
      if (!std::isfinite(value)) {
        throw DivergenceError("non-finite loss in epoch " + std::to_string(epoch) + " on " +
                              data.calendar.dates()[t]);
      }
      adam_step(params, tape.backward(loss), adam);
      total += value;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = total / (per_day * static_cast<double>(order.size()));
    double metric = -rec.train_loss;
    if (!valid.empty()) {
      const SplitMetrics v = evaluate_days(params, data, valid, config);
      rec.valid_pr_auc = v.pr_auc;
      rec.valid_roc_auc = v.roc_auc;
      rec.valid_da = v.directional_accuracy;
      metric = config.early_stop_metric == "roc_auc" ? v.roc_auc
               : config.early_stop_metric == "da"    ? v.directional_accuracy
                                                     : v.pr_auc;
      if (std::isnan(metric)) metric = v.directional_accuracy;
    } else {
      rec.valid_pr_auc = rec.valid_roc_auc = rec.valid_da = kNaN;
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (metric > best) {
      best = metric;
      result.params = params;
      result.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }
  return result;
}

std::string parameter_group(const std::string& name) {
  const auto dot = name.rfind('.');
  return dot == std::string::npos ? name : name.substr(0, dot);
}

ModelData gradcheck_instance(std::uint64_t seed, ModelConfig& config) {
  config.lookback = 2;
  config.slices = 2;
  config.hidden = 2;
  config.attn_hidden = 2;

  std::mt19937_64 rng(seed);
  auto uniform = [&rng](double lo, double hi) { return lo + (hi - lo) * unit_uniform(rng); };

  using EK = EntityKind;
  using RK = RelationKind;
  const std::vector<TypedEdge> edges = {
      {RK::Management, {EK::Company, 0}, {EK::Executive, 0}},
      {RK::Management, {EK::Company, 1}, {EK::Executive, 0}},
      {RK::Management, {EK::Company, 2}, {EK::Executive, 1}},
      {RK::ExecInvestment, {EK::Company, 1}, {EK::Executive, 1}},
      {RK::Classmate, {EK::Executive, 0}, {EK::Executive, 1}},
      {RK::Colleague, {EK::Executive, 0}, {EK::Executive, 1}},
      {RK::IndustryCategory, {EK::Company, 0}, {EK::Company, 1}},
      {RK::SupplyChain, {EK::Company, 1}, {EK::Company, 2}},
      {RK::BusinessPartnership, {EK::Company, 0}, {EK::Company, 2}},
      {RK::Investment, {EK::Company, 0}, {EK::Company, 1}},
  };
  ModelData data;
  data.graph = derive_meta_relations(build_graph(3, 2, edges));
  data.stocks = {"S0", "S1", "S2"};
  const std::vector<std::string> dates = {"2020-01-01", "2020-01-02", "2020-01-03", "2020-01-06"};
  data.calendar = TradingCalendar(dates, dates.back(), "9999-12-31");
  data.signals.resize(dates.size());
  data.labels.resize(dates.size());
  data.closes.resize(dates.size());
  for (std::size_t t = 0; t < dates.size(); ++t) {
    data.signals[t].resize(3);
    for (std::size_t i = 0; i < 3; ++i) {
      for (auto& v : data.signals[t][i].p) v = uniform(-1.0, 1.0);
      const double pos = uniform(0.0, 1.0);
      data.signals[t][i].q = {pos, 1.0 - pos, 2.0 * pos - 1.0};
      data.labels[t].push_back(static_cast<int>(rng() & 1U));
      data.closes[t].push_back(uniform(50.0, 150.0));
    }
  }
  return data;
}

GradcheckReport gradcheck_params(const ModelData& data, const ModelConfig& config, const ParamStore& params,
                                 std::size_t day, const GradcheckOptions& options) {
  Tape tape;
  VarMap vars = record_parameters(tape, params);
  Var loss = day_loss(forward_day(tape, vars, data, day, config), data, day);
  if (options.fault) tape.inject_fault(options.fault->first, options.fault->second);
  const Gradients analytic = tape.backward(loss);

  GradcheckReport report;
  report.kink_margin = tape.kink_margin();
  std::map<std::string, GradcheckGroup> groups;
  ParamStore probe = params;
  for (const auto& [name, value] : params) {
    GradcheckGroup& g = groups[parameter_group(name)];
    g.name = parameter_group(name);
    Tensor& slot = probe.at(name);
    for (std::size_t k = 0; k < value.size(); ++k) {
      const double original = slot[k];
      auto central = [&](double h) {
        slot[k] = original + h;
        const double up = loss_value(data, config, probe, day);
        slot[k] = original - h;
        const double down = loss_value(data, config, probe, day);
        slot[k] = original;
        return (up - down) / (2.0 * h);
      };
      // Richardson: cancels the h^2 term so a wide step stays accurate.
      const double numeric = (4.0 * central(0.5 * options.step) - central(options.step)) / 3.0;
      const double a = analytic.at(name)[k];
      const double scale = std::max(std::abs(a), std::abs(numeric));
      const double err = scale < 1e-8 ? std::abs(a - numeric) : std::abs(a - numeric) / scale;
      g.max_relative_error = std::max(g.max_relative_error, err);
      ++g.entries;
    }
  }
  report.passed = true;
  for (auto& [name, g] : groups) {
    g.passed = g.max_relative_error <= options.tolerance;
    report.passed = report.passed && g.passed;
    report.groups.push_back(g);
  }
  return report;
}

GradcheckReport gradcheck(std::uint64_t seed, const GradcheckOptions& options) {
  constexpr int kAttempts = 256;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    const std::uint64_t s = seed + static_cast<std::uint64_t>(attempt) * 7919ULL;
    ModelConfig config;
    config.seed = s;
    ModelData data = gradcheck_instance(s, config);
    ParamStore params = init_params(config, s);
    // Non-zero biases so every term is exercised.
    std::mt19937_64 rng(s ^ 0x5bd1e995ULL);
    for (auto& [name, t] : params) {
      for (auto& v : t.data()) v += 0.2 * (unit_uniform(rng) - 0.5);
    }
    const std::size_t day = data.calendar.size() - 1;
    {
      Tape tape(false);
      VarMap vars = record_parameters(tape, params);
      const DayForward fwd = forward_day(tape, vars, data, day, config);
      // The implicit scorer only receives a gradient through existing edges.
      if (fwd.implicit.edges.empty() || tape.kink_margin() < options.min_kink_margin) continue;
    }
    GradcheckReport report = gradcheck_params(data, config, params, day, options);
    report.seed = s;
    return report;
  }
  throw ContractError("gradcheck: no kink-free instance found from seed " + std::to_string(seed));
}

}  // namespace mkg
