// mkg: command-line front end for the market knowledge graph model.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mkg/data_io.hpp"
#include "mkg/errors.hpp"
#include "mkg/evaluation.hpp"
#include "mkg/model.hpp"

namespace fs = std::filesystem;
using namespace mkg;

namespace {

enum Exit { kOk = 0, kUsage = 1, kDataError = 2, kRuntimeError = 3 };

struct UsageError : Error {
  using Error::Error;
};

void apply_ablations(ModelConfig& config, const std::string& list) {
  std::stringstream in(list);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    if (item == "executives") {
      config.use_executives = false;
    } else if (item == "implicit") {
      config.use_implicit = false;
    } else if (item == "explicit") {
      config.use_explicit = false;
    } else if (item == "dual") {
      config.use_dual = false;
    } else {
      throw UsageError("--ablate accepts executives, implicit, explicit, dual; got '" + item + "'");
    }
  }
}

ModelConfig build_config(const std::string& config_path, const std::vector<std::string>& overrides) {
  ModelConfig config = config_path.empty() ? ModelConfig{} : load_config(config_path);
  std::string text;
  for (const auto& o : overrides) text += o + '\n';
  return parse_config(text, config);
}

std::vector<std::size_t> split_days(const ModelData& data, const std::string& split, std::size_t lookback) {
  TradingCalendar::Split s;
  if (split == "train") {
    s = TradingCalendar::Split::Train;
  } else if (split == "valid") {
    s = TradingCalendar::Split::Valid;
  } else if (split == "test") {
    s = TradingCalendar::Split::Test;
  } else {
    throw UsageError("--split must be train, valid or test");
  }
  std::vector<std::size_t> days = data.calendar.eligible_days(s, lookback);
  if (days.empty()) throw DataError("split '" + split + "' has no day with a full lookback window");
  return days;
}

std::string with_suffix(const fs::path& path, const std::string& suffix) {
  return path.string() + suffix;
}

// ---- commands -------------------------------------------------------------

struct GenerateArgs {
  std::string out;
  std::string spec;
  std::uint64_t seed = 7;
  bool seed_set = false;
};

int run_generate(const GenerateArgs& a) {
  SyntheticSpec spec = a.spec.empty() ? SyntheticSpec{} : load_synthetic_spec(a.spec);
  if (a.seed_set) spec.seed = a.seed;
  const DatasetBundle bundle = generate_synthetic(spec);
  save_dataset(bundle, a.out);
  std::size_t companies = 0;
  for (const auto& e : bundle.entities) companies += e.kind == EntityKind::Company ? 1 : 0;
  std::printf("wrote %zu companies, %zu executives, %zu edges, %zu bars, %zu news rows to %s\n", companies,
              bundle.entities.size() - companies, bundle.edges.size(), bundle.prices.size(), bundle.news.size(),
              a.out.c_str());
  return kOk;
}

struct TrainArgs {
  std::string data;
  std::string config;
  std::string out = "model.ckpt";
  std::uint64_t seed = 1;
  bool seed_set = false;
  std::size_t repeats = 1;
  std::string ablate;
  std::vector<std::string> overrides;
  bool quiet = false;
};

int run_train(const TrainArgs& a) {
  ModelConfig config = build_config(a.config, a.overrides);
  apply_ablations(config, a.ablate);
  if (a.seed_set) config.seed = a.seed;
  if (a.repeats == 0) throw UsageError("--repeats must be at least 1");
  const ModelData data = prepare_model_data(load_dataset(a.data));
  const std::vector<std::size_t> test_days =
      data.calendar.eligible_days(TradingCalendar::Split::Test, config.lookback);

  std::vector<std::vector<double>> rows;
  for (std::size_t r = 0; r < a.repeats; ++r) {
    ModelConfig run = config;
    run.seed = config.seed + r;
    const auto t0 = std::chrono::steady_clock::now();
    TrainResult result = train(data, run, [&](const EpochRecord& e) {
      if (!a.quiet) {
        std::printf("seed %llu epoch %3zu  loss %.5f  valid pr_auc %.4f roc_auc %.4f da %.4f\n",
                    static_cast<unsigned long long>(run.seed), e.epoch, e.train_loss, e.valid_pr_auc,
                    e.valid_roc_auc, e.valid_da);
        std::fflush(stdout);
      }
    });
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const fs::path out = r == 0 ? fs::path(a.out) : fs::path(with_suffix(a.out, ".r" + std::to_string(r)));
    Checkpoint ck{run, result.params, 0};
    save_checkpoint(ck, out);
    save_history(result.history, with_suffix(out, ".history.csv"));
    std::printf("seed %llu: %zu epochs, best epoch %zu, %.1fs, checksum %016llx -> %s\n",
                static_cast<unsigned long long>(run.seed), result.history.size(), result.best_epoch, seconds,
                static_cast<unsigned long long>(params_checksum(result.params)), out.string().c_str());
    if (!test_days.empty()) {
      const SplitMetrics m = evaluate_days(result.params, data, test_days, run);
      rows.push_back({static_cast<double>(run.seed), m.directional_accuracy, m.pr_auc, m.roc_auc});
      std::printf("  test da %.4f  pr_auc %.4f  roc_auc %.4f\n", m.directional_accuracy, m.pr_auc, m.roc_auc);
    }
  }

  if (a.repeats > 1 && !rows.empty()) {
    std::vector<std::pair<std::string, double>> summary;
    const char* names[] = {"test_da", "test_pr_auc", "test_roc_auc"};
    for (std::size_t c = 1; c < 4; ++c) {
      double mean = 0.0, ss = 0.0;
      for (const auto& row : rows) mean += row[c];
      mean /= static_cast<double>(rows.size());
      for (const auto& row : rows) ss += (row[c] - mean) * (row[c] - mean);
      const double sd = std::sqrt(ss / static_cast<double>(rows.size() - 1));
      std::printf("%-13s %.4f +/- %.4f over %zu seeds\n", names[c - 1], mean, sd, rows.size());
      summary.emplace_back(std::string(names[c - 1]) + "_mean", mean);
      summary.emplace_back(std::string(names[c - 1]) + "_std", sd);
    }
    save_metrics(summary, with_suffix(a.out, ".repeats.csv"));
  }
  return kOk;
}

struct EvalArgs {
  std::string data;
  std::string checkpoint;
  std::string split = "test";
  std::string out;
  std::size_t threads = 1;
};

int run_evaluate(const EvalArgs& a) {
  Checkpoint ck = load_checkpoint(a.checkpoint);
  ck.config.threads = a.threads;
  const ModelData data = prepare_model_data(load_dataset(a.data));
  const std::vector<std::size_t> days = split_days(data, a.split, ck.config.lookback);
  const SplitMetrics m = evaluate_days(ck.params, data, days, ck.config);
  std::printf("split %s (%zu days x %zu stocks)\n", a.split.c_str(), days.size(), data.stock_count());
  std::printf("  %-22s %.6f\n  %-22s %.6f\n  %-22s %.6f\n  %-22s %.6f\n", "directional_accuracy",
              m.directional_accuracy, "pr_auc", m.pr_auc, "roc_auc", m.roc_auc, "loss", m.loss);
  if (!a.out.empty()) {
    save_metrics({{"days", static_cast<double>(days.size())},
                  {"directional_accuracy", m.directional_accuracy},
                  {"pr_auc", m.pr_auc},
                  {"roc_auc", m.roc_auc},
                  {"loss", m.loss}},
                 a.out);
  }
  return kOk;
}

struct BacktestArgs {
  std::string data;
  std::string checkpoint;
  std::string out = "backtest";
  std::size_t topk = 15;
  double cost = 0.0003;
  double budget = 10000.0;
  double risk_free = 0.015;
  std::size_t threads = 1;
};

int run_backtest(const BacktestArgs& a) {
  Checkpoint ck = load_checkpoint(a.checkpoint);
  ck.config.threads = a.threads;
  const ModelData data = prepare_model_data(load_dataset(a.data));
  const std::vector<std::size_t> days = split_days(data, "test", ck.config.lookback);
  const std::vector<DayPrediction> preds = predict_days(ck.params, data, days, ck.config);
  BacktestInput input;
  for (const auto& p : preds) {
    input.dates.push_back(data.calendar.dates()[p.day]);
    input.scores.push_back(p.up);
    input.previous_close.push_back(data.closes[p.day - 1]);
    input.close.push_back(data.closes[p.day]);
    input.labels.push_back(data.labels[p.day]);
  }
  BacktestConfig bc;
  bc.top_k = a.topk;
  bc.cost = a.cost;
  bc.budget = a.budget;
  bc.annual_risk_free = a.risk_free;
  const BacktestReport report = backtest(input, bc);
  save_report(report, a.out);
  std::printf("backtest over %zu test days, top-%zu, cost %.4f%%\n", days.size(), a.topk, 100.0 * a.cost);
  std::printf("  %-30s %.2f\n", "final value", report.value_curve.back());
  std::printf("  %-30s %.6f\n", "cumulative return (eq-weight)", report.cumulative_return);
  std::printf("  %-30s %.6f\n", "raw IRR (sum of returns)", report.raw_irr);
  std::printf("  %-30s %.6f\n", "sharpe (annualised)", report.sharpe);
  std::printf("  %-30s %.6f\n", "directional_accuracy", report.directional_accuracy);
  std::printf("  %-30s %.6f\n", "pr_auc", report.pr_auc);
  std::printf("  %-30s %.6f\n", "roc_auc", report.roc_auc);
  std::printf("report written to %s\n", a.out.c_str());
  return kOk;
}

struct GradcheckArgs {
  std::string size = "small";
  std::uint64_t seed = 1;
  double tolerance = 1e-4;
  std::string corrupt_op;
};

int run_gradcheck(const GradcheckArgs& a) {
  if (a.size != "small") throw UsageError("--size supports only 'small'");
  GradcheckOptions options;
  options.tolerance = a.tolerance;
  if (!a.corrupt_op.empty()) options.fault = std::make_pair(a.corrupt_op, 1.5);
  const GradcheckReport report = gradcheck(a.seed, options);
  std::printf("gradcheck: 3 companies, 2 executives, T=2, F=F'=M=2 (instance seed %llu, kink margin %.3g)\n",
              static_cast<unsigned long long>(report.seed), report.kink_margin);
  for (const auto& g : report.groups) {
    std::printf("  %-4s %-28s %3zu entries  max rel err %.3e\n", g.passed ? "PASS" : "FAIL", g.name.c_str(),
                g.entries, g.max_relative_error);
  }
  std::printf("%s\n", report.passed ? "PASS" : "FAIL");
  return report.passed ? kOk : kRuntimeError;
}

struct DumpArgs {
  std::string data;
  std::string checkpoint;
  std::string day;
  std::string out;
  double eta = 0.0;
  bool eta_set = false;
};

int run_dump_implicit(const DumpArgs& a) {
  Checkpoint ck = load_checkpoint(a.checkpoint);
  if (!ck.config.use_implicit) throw DataError("checkpoint was trained without the implicit relation");
  if (a.eta_set) ck.config.eta = a.eta;
  const ModelData data = prepare_model_data(load_dataset(a.data));
  const std::size_t t = data.calendar.index_of(a.day);
  if (t == data.calendar.size()) throw DataError("day " + a.day + " is not in the calendar");
  Tape tape(false);
  VarMap vars = record_parameters(tape, ck.params);
  const DayForward fwd = forward_day(tape, vars, data, t, ck.config);
  std::vector<ImplicitEdge> edges = fwd.implicit.edges;
  std::sort(edges.begin(), edges.end(), [](const ImplicitEdge& x, const ImplicitEdge& y) {
    return std::pair(x.src, x.dst) < std::pair(y.src, y.dst);
  });
  std::ostringstream csv;
  csv << "# mkg-implicit v1\nday,src,dst,alpha,gate\n";
  for (const auto& e : edges) {
    csv << a.day << ',' << data.stocks[e.src] << ',' << data.stocks[e.dst] << ',' << format_double(e.alpha) << ','
        << format_double(e.gate) << '\n';
  }
  if (a.out.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream f(a.out, std::ios::binary);
    if (!f) throw DataError("cannot write " + a.out);
    f << csv.str();
    std::printf("%zu implicit edges on %s (eta %s) -> %s\n", edges.size(), a.day.c_str(),
                format_double(ck.config.eta).c_str(), a.out.c_str());
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bi-typed market knowledge graph stock movement model"};
  app.require_subcommand(1, 1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate-data", "Write a synthetic dataset with a planted spillover signal");
  generate->add_option("--out", gen.out, "Output directory")->required();
  generate->add_option("--spec", gen.spec, "Synthetic spec file (key=value)");
  generate->add_option("--seed", gen.seed, "Random seed (overrides the spec)")
      ->each([&gen](const std::string&) { gen.seed_set = true; });

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train and write a checkpoint plus history");
  train_cmd->add_option("--data", tr.data, "Dataset directory")->required();
  train_cmd->add_option("--config", tr.config, "Config file (key=value)");
  train_cmd->add_option("--out", tr.out, "Checkpoint path")->capture_default_str();
  train_cmd->add_option("--seed", tr.seed, "Seed (overrides the config)")
      ->each([&tr](const std::string&) { tr.seed_set = true; });
  train_cmd->add_option("--repeats", tr.repeats, "Train K times with seeds seed..seed+K-1")->capture_default_str();
  train_cmd->add_option("--ablate", tr.ablate, "Comma list of executives,implicit,explicit,dual");
  train_cmd->add_option("--set", tr.overrides, "Config override key=value (repeatable)");
  train_cmd->add_flag("--quiet", tr.quiet, "Only print the per-run summary");

  EvalArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "DA, PR-AUC and ROC-AUC on a split");
  evaluate->add_option("--data", ev.data, "Dataset directory")->required();
  evaluate->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  evaluate->add_option("--split", ev.split, "valid or test")->capture_default_str();
  evaluate->add_option("--out", ev.out, "Metrics file");
  evaluate->add_option("--threads", ev.threads, "Inference threads")->capture_default_str();

  BacktestArgs bt;
  auto* backtest_cmd = app.add_subcommand("backtest", "Top-k daily buy-hold simulation on the test split");
  backtest_cmd->add_option("--data", bt.data, "Dataset directory")->required();
  backtest_cmd->add_option("--checkpoint", bt.checkpoint, "Checkpoint file")->required();
  backtest_cmd->add_option("--out", bt.out, "Report directory")->capture_default_str();
  backtest_cmd->add_option("--topk", bt.topk, "Stocks held per day")->capture_default_str();
  backtest_cmd->add_option("--cost", bt.cost, "Transaction cost rate")->capture_default_str();
  backtest_cmd->add_option("--budget", bt.budget, "Starting budget")->capture_default_str();
  backtest_cmd->add_option("--risk-free", bt.risk_free, "Annual risk-free rate")->capture_default_str();
  backtest_cmd->add_option("--threads", bt.threads, "Inference threads")->capture_default_str();

  GradcheckArgs gc;
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every parameter group");
  gradcheck_cmd->add_option("--size", gc.size, "Instance size")->capture_default_str();
  gradcheck_cmd->add_option("--seed", gc.seed, "Instance seed")->capture_default_str();
  gradcheck_cmd->add_option("--tolerance", gc.tolerance, "Max relative error")->capture_default_str();
  gradcheck_cmd->add_option("--corrupt-op", gc.corrupt_op, "Scale the backward rule of an op tag (self-test)")
      ->group("");

  DumpArgs dp;
  auto* dump = app.add_subcommand("dump-implicit", "List inferred implicit edges for one day");
  dump->add_option("--data", dp.data, "Dataset directory")->required();
  dump->add_option("--checkpoint", dp.checkpoint, "Checkpoint file")->required();
  dump->add_option("--day", dp.day, "Trading day (YYYY-MM-DD)")->required();
  dump->add_option("--out", dp.out, "Output file (stdout when omitted)");
  dump->add_option("--eta", dp.eta, "Override the threshold (inf allowed)")
      ->each([&dp](const std::string&) { dp.eta_set = true; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*generate) return run_generate(gen);
    if (*train_cmd) return run_train(tr);
    if (*evaluate) return run_evaluate(ev);
    if (*backtest_cmd) return run_backtest(bt);
    if (*gradcheck_cmd) return run_gradcheck(gc);
    if (*dump) return run_dump_implicit(dp);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kUsage;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "diverged: %s\n", e.what());
    return kRuntimeError;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kDataError;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kDataError;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kDataError;
  } catch (const WindowError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kDataError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntimeError;
  }
  return kUsage;
}
