#include <benchmark/benchmark.h>

#include <random>

#include "mkg/data_io.hpp"
#include "mkg/market_graph.hpp"
#include "mkg/model.hpp"
#include "mkg/numerics/tape.hpp"

using namespace mkg;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor t(std::move(shape));
  for (double& x : t.data()) x = u(rng);
  return t;
}

ModelConfig desk_config() {
  ModelConfig c;
  c.lookback = 5;
  c.slices = 4;
  c.hidden = 16;
  c.attn_hidden = 8;
  return c;
}

const ModelData& default_data() {
  static const ModelData data = prepare_model_data(generate_synthetic(SyntheticSpec{}));
  return data;
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  const Tensor a = random_tensor({n, n}, rng), b = random_tensor({n, n}, rng);
  for (auto _ : state) {
    Tape tape(false);
    benchmark::DoNotOptimize(matmul(tape.constant(a), tape.constant(b)).value().data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

static void BM_ImplicitEdges(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(2);
  const Tensor s = random_tensor({n, 78}, rng);
  const ImplicitRelationParams p{random_tensor({156}, rng), 0.0054};
  for (auto _ : state) benchmark::DoNotOptimize(infer_implicit_edges(s, p, "", 0.2).edges.size());
}
BENCHMARK(BM_ImplicitEdges)->Arg(73)->Arg(300);

static void BM_MetaRelations(benchmark::State& state) {
  const MarketGraph g = default_data().graph;
  for (auto _ : state) benchmark::DoNotOptimize(derive_meta_relations(g).edges(RelationKind::CEEC).size());
}
BENCHMARK(BM_MetaRelations);

static void BM_ForwardDay(benchmark::State& state) {
  ModelConfig c = desk_config();
  c.eta = state.range(0) ? -5.0 : 0.0054;
  const ParamStore params = init_params(c, 1);
  const std::size_t day = default_data().calendar.size() - 1;
  for (auto _ : state) {
    Tape tape(false);
    benchmark::DoNotOptimize(forward_day(tape, record_parameters(tape, params), default_data(), day, c)
                                 .probabilities.value()
                                 .data()
                                 .data());
  }
}
BENCHMARK(BM_ForwardDay)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

static void BM_TrainStep(benchmark::State& state) {
  ModelConfig c = desk_config();
  c.eta = state.range(0) ? -5.0 : 0.0054;
  const ParamStore params = init_params(c, 1);
  const std::size_t day = default_data().calendar.size() - 1;
  for (auto _ : state) {
    Tape tape;
    const DayForward f = forward_day(tape, record_parameters(tape, params), default_data(), day, c);
    benchmark::DoNotOptimize(tape.backward(day_loss(f, default_data(), day)).size());
  }
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

static void BM_Gradcheck(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(gradcheck(1).passed);
}
BENCHMARK(BM_Gradcheck)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
