// Runs the eight acceptance criteria and prints one PASS/FAIL line each.
// Arguments select a subset by number; no arguments runs everything.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "mkg/data_io.hpp"
#include "mkg/dual_attention.hpp"
#include "mkg/evaluation.hpp"
#include "mkg/market_graph.hpp"
#include "mkg/model.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace mkg;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

EntityId company(std::size_t i) { return {EntityKind::Company, i}; }
EntityId executive(std::size_t i) { return {EntityKind::Executive, i}; }

std::vector<TypedEdge> edge_list(const MarketGraph& g) {
  std::vector<TypedEdge> out;
  for (std::size_t k = 0; k < kRelationKindCount; ++k) {
    const auto kind = static_cast<RelationKind>(k);
    if (!is_loadable_relation(kind)) continue;
    for (const auto& [a, b] : g.edges(kind)) {
      if (is_inter_class(kind)) {
        out.push_back({kind, company(a), executive(b)});
      } else if (is_company_relation(kind)) {
        out.push_back({kind, company(a), company(b)});
      } else {
        out.push_back({kind, executive(a), executive(b)});
      }
    }
  }
  return out;
}

// ---- 1 ----------------------------------------------------------------------

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  const GradcheckReport r = gradcheck(1);
  const double secs = seconds_since(t0);
  double worst = 0.0;
  for (const auto& g : r.groups) worst = std::max(worst, g.max_relative_error);
  return {r.passed && worst <= 1e-4 && secs < 60.0,
          std::to_string(r.groups.size()) + " groups, max rel err " + fmt("%.2e", worst) + ", " +
              fmt("%.1fs", secs)};
}

// ---- 2 ----------------------------------------------------------------------

double softmax_deviation(const DualOutput& out) {
  double worst = 0.0;
  for (const auto& sm : out.softmaxes) {
    const Tensor& w = sm.weights.value();
    if (!sm.segment.empty()) {
      std::map<int, double> total;
      for (std::size_t k = 0; k < sm.segment.size(); ++k) total[sm.segment[k]] += w[k];
      for (const auto& [seg, t] : total) worst = std::max(worst, std::abs(t - 1.0));
    } else {
      for (std::size_t u = 0; u < sm.mask.size(); ++u) {
        double t = 0.0;
        for (std::size_t r = 0; r < sm.mask[u].size(); ++r) t += w(u, r);
        const bool any = std::find(sm.mask[u].begin(), sm.mask[u].end(), true) != sm.mask[u].end();
        worst = std::max(worst, std::abs(t - (any ? 1.0 : 0.0)));
      }
    }
  }
  return worst;
}

struct AttentionRun {
  Tensor companies;
  double deviation = 0.0;
  std::size_t softmaxes = 0;
};

AttentionRun run_attention(const MarketGraph& g, const Tensor& s, const ParamStore& params, const ModelConfig& c) {
  Tape tape(false);
  const VarMap v = record_parameters(tape, params);
  Var seq = tape.constant(s);
  const RecordedImplicitEdges implicit =
      infer_implicit_edges(seq, v.at("implicit.u"), c.eta, c.leaky_slope);
  const DualOutput out = dual_forward(g, seq, implicit, v, c.dual());
  return {out.companies.value(), softmax_deviation(out), out.softmaxes.size()};
}

Outcome attention_simplex() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  double worst_sum = 0.0, worst_perm = 0.0;
  std::size_t checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng() % 7, m = 1 + rng() % 5;
    MarketGraph g = oracle::random_graph(rng, n, m, 0.3);
    std::vector<TypedEdge> edges = edge_list(g);
    for (std::size_t e = 0; e < m; ++e) {
      if (!oracle::linked(g, 0, e)) {
        bool any = false;
        for (std::size_t c = 0; c < n; ++c) any = any || oracle::linked(g, c, e);
        if (!any) edges.push_back({RelationKind::Management, company(rng() % n), executive(e)});
      }
    }

    ModelConfig config;
    config.hidden = 2 + rng() % 3;
    config.attn_hidden = 2 + rng() % 3;
    config.slices = 2;
    config.lookback = 2;
    config.use_dual = trial % 4 != 3;
    config.eta = -0.3;
    ParamStore params = init_params(config, trial);
    for (auto& [name, t] : params) t = testing_support::random_tensor(t.shape(), rng);
    const Tensor s = testing_support::random_tensor({n, config.hidden}, rng);

    const AttentionRun base = run_attention(derive_meta_relations(build_graph(n, m, edges)), s, params, config);
    worst_sum = std::max(worst_sum, base.deviation);
    checked += base.softmaxes;

    // Relabel companies and executives; neighbour sets move with them.
    std::vector<std::size_t> pc(n), pe(m);
    std::iota(pc.begin(), pc.end(), 0);
    std::iota(pe.begin(), pe.end(), 0);
    std::shuffle(pc.begin(), pc.end(), rng);
    std::shuffle(pe.begin(), pe.end(), rng);
    std::vector<TypedEdge> moved;
    for (const auto& e : edges) {
      auto map = [&](EntityId x) {
        return x.kind == EntityKind::Company ? company(pc[x.index]) : executive(pe[x.index]);
      };
      moved.push_back({e.kind, map(e.a), map(e.b)});
    }
    std::shuffle(moved.begin(), moved.end(), rng);
    Tensor ps({n, config.hidden});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < config.hidden; ++c) ps(pc[i], c) = s(i, c);
    const AttentionRun perm = run_attention(derive_meta_relations(build_graph(n, m, moved)), ps, params, config);
    worst_sum = std::max(worst_sum, perm.deviation);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < config.attn_hidden; ++c)
        worst_perm = std::max(worst_perm, std::abs(perm.companies(pc[i], c) - base.companies(i, c)));

    // Same neighbours presented in a different order to one attention call.
    const EdgeIndex idx = symmetric_edges(derive_meta_relations(build_graph(n, m, edges)), RelationKind::CEC);
    if (!idx.empty()) {
      std::vector<std::size_t> order(idx.size());
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      EdgeIndex shuffled;
      for (std::size_t k : order) {
        shuffled.src.push_back(idx.src[k]);
        shuffled.dst.push_back(idx.dst[k]);
      }
      Tape tape(false);
      Var h = tape.constant(testing_support::random_tensor({n, 3}, rng));
      Var a = tape.constant(testing_support::random_tensor({6}, rng));
      const Tensor x = attend(h, h, idx, a, Var{}, 0.2).embedding.value();
      const Tensor y = attend(h, h, shuffled, a, Var{}, 0.2).embedding.value();
      for (std::size_t k = 0; k < x.size(); ++k) worst_perm = std::max(worst_perm, std::abs(x[k] - y[k]));
    }
  }
  const double secs = seconds_since(t0);
  return {worst_sum <= 1e-9 && worst_perm <= 1e-9 && secs < 30.0,
          std::to_string(checked) + " softmaxes, max |sum-1| " + fmt("%.1e", worst_sum) + ", max permutation gap " +
              fmt("%.1e", worst_perm) + ", " + fmt("%.1fs", secs)};
}

// ---- 3 ----------------------------------------------------------------------

Outcome meta_relation_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(303);
  std::size_t mismatches = 0, pairs = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng() % 14, m = 1 + rng() % 10;
    const double density = 0.05 + 0.4 * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const MarketGraph g = derive_meta_relations(oracle::random_graph(rng, n, m, density));
    const oracle::PairSet cec(g.edges(RelationKind::CEC).begin(), g.edges(RelationKind::CEC).end());
    const oracle::PairSet ceec(g.edges(RelationKind::CEEC).begin(), g.edges(RelationKind::CEEC).end());
    mismatches += cec != oracle::cec_paths(g);
    mismatches += ceec != oracle::ceec_paths(g);
    pairs += cec.size() + ceec.size();
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 30.0, std::to_string(mismatches) + " mismatching sets over 200 graphs (" +
                                              std::to_string(pairs) + " pairs), " + fmt("%.1fs", secs)};
}

// ---- 4 ----------------------------------------------------------------------

using EdgeKey = std::set<std::pair<std::size_t, std::size_t>>;

EdgeKey implicit_set(const Tensor& s, const Tensor& u, double eta) {
  EdgeKey out;
  for (const auto& e : infer_implicit_edges(s, {u, eta}, "", 0.2).edges) out.insert({e.src, e.dst});
  return out;
}

Outcome implicit_properties() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(404);
  std::size_t violations = 0, edges_seen = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng() % 19, f = 1 + rng() % 8;
    const Tensor s = testing_support::random_tensor({n, f}, rng);
    const Tensor u = testing_support::random_tensor({2 * f}, rng);
    std::vector<double> etas{-1.0, -0.1, 0.0, 0.0054, 0.1, 0.5, 2.0};
    EdgeKey previous = implicit_set(s, u, -INFINITY);
    violations += previous.size() != n * (n - 1);
    for (double eta : etas) {
      const EdgeKey now = implicit_set(s, u, eta);
      violations += !std::includes(previous.begin(), previous.end(), now.begin(), now.end());
      previous = now;
    }
    violations += !implicit_set(s, u, INFINITY).empty();

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor ps({n, f});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < f; ++c) ps(perm[i], c) = s(i, c);
    const double eta = 0.0054;
    const auto base = infer_implicit_edges(s, {u, eta}, "", 0.2).edges;
    const auto moved = infer_implicit_edges(ps, {u, eta}, "", 0.2).edges;
    std::map<std::pair<std::size_t, std::size_t>, double> expect;
    for (const auto& e : base) expect[{perm[e.src], perm[e.dst]}] = e.alpha;
    violations += expect.size() != moved.size();
    for (const auto& e : moved) {
      auto it = expect.find({e.src, e.dst});
      violations += it == expect.end() || std::abs(it->second - e.alpha) > 1e-12;
    }
    edges_seen += base.size();
  }
  const double secs = seconds_since(t0);
  return {violations == 0 && secs < 10.0, std::to_string(violations) + " violations over 200 trials (" +
                                              std::to_string(edges_seen) + " edges), " + fmt("%.2fs", secs)};
}

// ---- 5 ----------------------------------------------------------------------

Outcome metric_oracles() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(505);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng() % 200;
    std::vector<double> s(n);
    std::vector<int> y(n);
    const bool coarse = trial % 2 == 0;
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = coarse ? std::floor(unit(rng) * 5.0) / 5.0 : unit(rng);
      y[i] = unit(rng) < 0.5;
    }
    y[0] = 1;
    y[1] = 0;
    worst = std::max(worst, std::abs(directional_accuracy(s, y) - oracle::counted_da(s, y)));
    worst = std::max(worst, std::abs(auc_roc(s, y) - oracle::pairwise_roc(s, y)));
  }
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 30;
    std::vector<double> before(n), after(n);
    for (std::size_t i = 0; i < n; ++i) {
      before[i] = 1.0 + 100.0 * unit(rng);
      after[i] = before[i] * (0.8 + 0.4 * unit(rng));
    }
    std::vector<std::size_t> held(n);
    std::iota(held.begin(), held.end(), 0);
    std::shuffle(held.begin(), held.end(), rng);
    held.resize(1 + rng() % n);
    double sum = 0.0;
    for (std::size_t i : held) sum += (after[i] - before[i]) / before[i];
    const DayReturn r = irr(held, before, after);
    worst = std::max(worst, std::abs(r.raw - sum));
    worst = std::max(worst, std::abs(r.equal_weight - sum / static_cast<double>(held.size())));
  }
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng() % 300;
    std::normal_distribution<double> ret(0.0005, 0.01 + 0.02 * unit(rng));
    std::vector<double> r(n);
    for (double& x : r) x = ret(rng);
    const double rf = 0.05 * unit(rng);
    worst = std::max(worst, std::abs(sharpe(r, rf) - oracle::two_pass_sharpe(r, rf)));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-9 && secs < 10.0,
          "DA, ROC-AUC, IRR, Sharpe on 100 cases each, max gap " + fmt("%.1e", worst) + ", " + fmt("%.2fs", secs)};
}

// ---- 6 ----------------------------------------------------------------------

ModelConfig desk_config() {
  ModelConfig c;
  c.lookback = 5;
  c.slices = 4;
  c.hidden = 16;
  c.attn_hidden = 8;
  c.learning_rate = 0.003;
  c.max_epochs = 20;
  c.eta = -5.0;  // every pair starts linked; the gate and attention learn which links carry signal
  return c;
}

Outcome planted_signal() {
  const auto t0 = Clock::now();
  const ModelData data = prepare_model_data(generate_synthetic(SyntheticSpec{}));
  const ModelConfig base = desk_config();
  const auto test_days = data.calendar.eligible_days(TradingCalendar::Split::Test, base.lookback);

  struct Variant {
    std::string name;
    std::function<void(ModelConfig&)> apply;
  };
  const std::vector<Variant> variants{
      {"full", [](ModelConfig&) {}},
      {"sequence-only",
       [](ModelConfig& c) {
         c.use_explicit = false;
         c.use_implicit = false;
         c.use_executives = false;
       }},
      {"-explicit", [](ModelConfig& c) { c.use_explicit = false; }},
      {"-implicit", [](ModelConfig& c) { c.use_implicit = false; }},
      {"-executives", [](ModelConfig& c) { c.use_executives = false; }},
      {"-dual", [](ModelConfig& c) { c.use_dual = false; }},
  };
  const std::uint64_t seeds[] = {1, 2, 3, 4, 5};
  std::vector<double> mean(variants.size(), 0.0);
  for (std::size_t v = 0; v < variants.size(); ++v) {
    std::printf("  %-14s", variants[v].name.c_str());
    for (std::uint64_t seed : seeds) {
      ModelConfig c = base;
      c.seed = seed;
      variants[v].apply(c);
      const TrainResult r = train(data, c);
      const double da = evaluate_days(r.params, data, test_days, c).directional_accuracy;
      mean[v] += da / 5.0;
      std::printf(" %.4f", da);
      std::fflush(stdout);
    }
    std::printf("  mean %.4f  (%.0fs elapsed)\n", mean[v], seconds_since(t0));
  }
  const double best_single = *std::max_element(mean.begin() + 2, mean.end());
  const double secs = seconds_since(t0);
  const bool pass = mean[0] > 0.65 && mean[1] >= 0.48 && mean[1] <= 0.56 && mean[0] - best_single >= 0.02 &&
                    secs < 1800.0;
  return {pass, "full " + fmt("%.4f", mean[0]) + ", sequence-only " + fmt("%.4f", mean[1]) +
                    ", best single ablation " + fmt("%.4f", best_single) + " (gap " +
                    fmt("%.4f", mean[0] - best_single) + "), " + fmt("%.0fs", secs)};
}

// ---- 7 ----------------------------------------------------------------------

Outcome backtest_sanity() {
  const auto t0 = Clock::now();
  BacktestInput flat;
  std::mt19937_64 rng(707);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> prices(30);
  for (double& p : prices) p = 5.0 + 100.0 * unit(rng);
  for (int d = 0; d < 60; ++d) {
    flat.dates.push_back("day" + std::to_string(d));
    std::vector<double> s(30);
    for (double& x : s) x = unit(rng);
    flat.scores.push_back(s);
    flat.previous_close.push_back(prices);
    flat.close.push_back(prices);
  }
  BacktestConfig zero;
  zero.cost = 0.0;
  const BacktestReport fr = backtest(flat, zero);
  bool is_flat = fr.value_curve.size() == 61;
  for (double v : fr.value_curve) is_flat = is_flat && v == zero.budget;

  int wins = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    SyntheticSpec spec;
    spec.seed = seed;
    const ModelData data = prepare_model_data(generate_synthetic(spec));
    const auto days = data.calendar.eligible_days(TradingCalendar::Split::Test, 1);
    BacktestInput oracle_in, random_in;
    std::mt19937_64 pick(seed * 31);
    for (std::size_t t : days) {
      std::vector<double> ret(data.stock_count()), noise(data.stock_count());
      for (std::size_t i = 0; i < data.stock_count(); ++i) {
        ret[i] = data.closes[t][i] / data.closes[t - 1][i] - 1.0;
        noise[i] = unit(pick);
      }
      for (BacktestInput* in : {&oracle_in, &random_in}) {
        in->dates.push_back(data.calendar.dates()[t]);
        in->previous_close.push_back(data.closes[t - 1]);
        in->close.push_back(data.closes[t]);
      }
      oracle_in.scores.push_back(ret);
      random_in.scores.push_back(noise);
    }
    wins += backtest(oracle_in).cumulative_return > backtest(random_in).cumulative_return;
  }
  const double secs = seconds_since(t0);
  return {is_flat && wins >= 9 && secs < 300.0, std::string("flat curve ") + (is_flat ? "exact" : "broken") +
                                                    ", oracle beats random in " + std::to_string(wins) +
                                                    "/10 seeds, " + fmt("%.1fs", secs)};
}

// ---- 8 ----------------------------------------------------------------------

BacktestReport report_for(const ModelData& data, const ParamStore& params, const ModelConfig& c) {
  const auto days = data.calendar.eligible_days(TradingCalendar::Split::Test, c.lookback);
  BacktestInput in;
  for (const auto& p : predict_days(params, data, days, c)) {
    in.dates.push_back(data.calendar.dates()[p.day]);
    in.scores.push_back(p.up);
    in.previous_close.push_back(data.closes[p.day - 1]);
    in.close.push_back(data.closes[p.day]);
    in.labels.push_back(data.labels[p.day]);
  }
  BacktestConfig bc;
  bc.top_k = 5;
  return backtest(in, bc);
}

Outcome determinism() {
  const auto t0 = Clock::now();
  const ModelData data = prepare_model_data(generate_synthetic(testing_support::small_spec(8)));
  ModelConfig c = testing_support::small_model();
  c.max_epochs = 4;
  const TrainResult a = train(data, c), b = train(data, c);
  const std::uint64_t ca = params_checksum(a.params), cb = params_checksum(b.params);
  const bool same_report = report_for(data, a.params, c) == report_for(data, b.params, c);
  const bool same_history = a.history.size() == b.history.size() &&
                            std::equal(a.history.begin(), a.history.end(), b.history.begin(),
                                       [](const EpochRecord& x, const EpochRecord& y) {
                                         return x.train_loss == y.train_loss && x.valid_da == y.valid_da;
                                       });
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(ca));
  return {ca == cb && same_report && same_history,
          std::string("checksum ") + hex + (ca == cb ? " twice" : " vs different") + ", reports " +
              (same_report ? "identical" : "differ") + ", " + fmt("%.1fs", seconds_since(t0))};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient fidelity", gradient_fidelity},
      {"attention simplex", attention_simplex},
      {"meta-relation oracle", meta_relation_oracle},
      {"implicit-edge properties", implicit_properties},
      {"metric oracles", metric_oracles},
      {"planted-signal learnability", planted_signal},
      {"backtest sanity", backtest_sanity},
      {"determinism", determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int number = static_cast<int>(k) + 1;
    if (!only.empty() && !only.count(number)) continue;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", number, criteria[k].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
