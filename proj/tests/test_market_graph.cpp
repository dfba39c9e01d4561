#include <gtest/gtest.h>

#include <limits>
#include <numeric>
#include <random>

#include "mkg/errors.hpp"
#include "mkg/market_graph.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace mkg;

namespace {

EntityId company(std::size_t i) { return {EntityKind::Company, i}; }
EntityId executive(std::size_t i) { return {EntityKind::Executive, i}; }

// Toy market: companies 1..5 -> 0..4, executives A, B, C -> 0, 1, 2.
MarketGraph toy_graph() {
  const std::vector<TypedEdge> edges = {
      {RelationKind::Management, company(1), executive(0)},  // A runs Company 2
      {RelationKind::Management, company(0), executive(1)},  // B runs Company 1
      {RelationKind::Management, company(0), executive(2)},  // C runs Company 1
      {RelationKind::ExecInvestment, company(3), executive(2)},  // C invests in Company 4
      {RelationKind::Classmate, executive(0), executive(1)},
      {RelationKind::IndustryCategory, company(0), company(1)},
      {RelationKind::SupplyChain, company(1), company(2)},
      {RelationKind::BusinessPartnership, company(2), company(4)},
      {RelationKind::Investment, company(3), company(4)},
  };
  return build_graph(5, 3, edges);
}

std::set<std::pair<std::size_t, std::size_t>> as_set(const std::set<MarketGraph::Pair>& s) {
  return {s.begin(), s.end()};
}

}  // namespace

TEST(BuildGraph, EmptyEdgeList) {
  const MarketGraph g = build_graph(4, 2, {});
  for (std::size_t k = 0; k < kRelationKindCount; ++k) EXPECT_EQ(g.edge_count(static_cast<RelationKind>(k)), 0u);
}

TEST(BuildGraph, ToyGraphRoundTrips) {
  const MarketGraph g = toy_graph();
  std::vector<TypedEdge> edges;
  for (std::size_t k = 0; k < kRelationKindCount; ++k) {
    const auto kind = static_cast<RelationKind>(k);
    for (const auto& [a, b] : g.edges(kind)) {
      if (is_inter_class(kind)) {
        edges.push_back({kind, company(a), executive(b)});
      } else {
        const EntityKind ek = is_company_relation(kind) ? EntityKind::Company : EntityKind::Executive;
        edges.push_back({kind, {ek, a}, {ek, b}});
      }
    }
  }
  EXPECT_EQ(build_graph(5, 3, edges), g);
  EXPECT_EQ(g.edge_count(RelationKind::Management), 3u);
}

TEST(BuildGraph, RejectsSignatureViolations) {
  EXPECT_THROW(build_graph(3, 1, {{RelationKind::Management, company(0), company(1)}}), ValidationError);
  EXPECT_THROW(build_graph(3, 2, {{RelationKind::Classmate, company(0), executive(1)}}), ValidationError);
  EXPECT_THROW(build_graph(3, 2, {{RelationKind::SupplyChain, executive(0), executive(1)}}), ValidationError);
}

TEST(BuildGraph, RejectsDanglingSelfLoopAndDuplicate) {
  EXPECT_THROW(build_graph(2, 1, {{RelationKind::IndustryCategory, company(0), company(2)}}), ValidationError);
  EXPECT_THROW(build_graph(2, 1, {{RelationKind::IndustryCategory, company(1), company(1)}}), ValidationError);
  EXPECT_THROW(build_graph(2, 1,
                           {{RelationKind::IndustryCategory, company(0), company(1)},
                            {RelationKind::IndustryCategory, company(1), company(0)}}),
               ValidationError);
  // Same pair under another kind is fine.
  EXPECT_NO_THROW(build_graph(2, 1,
                              {{RelationKind::IndustryCategory, company(0), company(1)},
                               {RelationKind::SupplyChain, company(1), company(0)}}));
}

TEST(BuildGraph, DerivedKindsAreNotLoadable) {
  EXPECT_THROW(build_graph(2, 0, {{RelationKind::Implicit, company(0), company(1)}}), ValidationError);
}

TEST(MetaRelations, SharedExecutiveGivesCec) {
  const MarketGraph g = derive_meta_relations(toy_graph());
  EXPECT_TRUE(g.edges(RelationKind::CEC).count({0, 3}));  // Company 4 - C - Company 1
  const auto nb = g.neighbors(company(0), RelationKind::CEC);
  EXPECT_NE(std::find(nb.begin(), nb.end(), 3u), nb.end());
}

TEST(MetaRelations, ClassmatesGiveCeec) {
  const MarketGraph g = derive_meta_relations(toy_graph());
  EXPECT_TRUE(g.edges(RelationKind::CEEC).count({0, 1}));  // Company 2 - A ~ B - Company 1
  EXPECT_EQ(g.edge_count(RelationKind::CEC), 1u);
}

TEST(MetaRelations, RandomGraphsMatchPathEnumeration) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const MarketGraph g = derive_meta_relations(oracle::random_graph(rng, 12, 8));
    EXPECT_EQ(as_set(g.edges(RelationKind::CEC)), oracle::cec_paths(g));
    EXPECT_EQ(as_set(g.edges(RelationKind::CEEC)), oracle::ceec_paths(g));
  }
}

TEST(MetaRelations, Idempotent) {
  std::mt19937_64 rng(4);
  const MarketGraph once = derive_meta_relations(oracle::random_graph(rng, 9, 6));
  EXPECT_EQ(derive_meta_relations(once), once);
}

TEST(MetaRelations, SymmetricNeighbourhoods) {
  std::mt19937_64 rng(8);
  const MarketGraph g = derive_meta_relations(oracle::random_graph(rng, 10, 7));
  for (RelationKind kind : {RelationKind::CEC, RelationKind::CEEC}) {
    for (std::size_t a = 0; a < 10; ++a) {
      for (std::size_t b : g.neighbors(company(a), kind)) {
        const auto back = g.neighbors(company(b), kind);
        EXPECT_NE(std::find(back.begin(), back.end(), a), back.end());
      }
    }
  }
}

TEST(Neighbors, IsolatedNodeHasNone) {
  const MarketGraph g = build_graph(3, 1, {{RelationKind::IndustryCategory, company(0), company(1)}});
  EXPECT_TRUE(g.neighbors(company(2), RelationKind::IndustryCategory).empty());
}

TEST(Neighbors, MatchesAdjacencyScan) {
  std::mt19937_64 rng(21);
  const MarketGraph g = derive_meta_relations(oracle::random_graph(rng, 8, 5, 0.4));
  for (std::size_t k = 0; k < kRelationKindCount; ++k) {
    const auto kind = static_cast<RelationKind>(k);
    if (kind == RelationKind::Implicit) continue;
    const bool inter = is_inter_class(kind);
    const EntityKind own = inter || is_company_relation(kind) ? EntityKind::Company : EntityKind::Executive;
    for (std::size_t u = 0; u < g.count(own); ++u) {
      std::vector<std::size_t> expected;
      for (const auto& [a, b] : g.edges(kind)) {
        if (a == u) expected.push_back(b);
        if (!inter && b == u) expected.push_back(a);
      }
      std::sort(expected.begin(), expected.end());
      EXPECT_EQ(g.neighbors({own, u}, kind), expected);
    }
  }
}

TEST(Neighbors, KindMismatchIsContractError) {
  const MarketGraph g = toy_graph();
  EXPECT_THROW(g.neighbors(executive(0), RelationKind::IndustryCategory), ContractError);
  EXPECT_THROW(g.neighbors(company(0), RelationKind::Classmate), ContractError);
  EXPECT_THROW(g.neighbors(company(9), RelationKind::IndustryCategory), ContractError);
}

TEST(ImplicitEdges, ZeroVectorGivesNoEdges) {
  std::mt19937_64 rng(1);
  const Tensor s = testing_support::random_tensor({5, 3}, rng);
  EXPECT_TRUE(infer_implicit_edges(s, {Tensor({6}), 0.0054}).edges.empty());
}

TEST(ImplicitEdges, NegativeInfinityGivesCompleteDigraph) {
  std::mt19937_64 rng(1);
  const Tensor s = testing_support::random_tensor({5, 3}, rng);
  const Tensor u = testing_support::random_tensor({6}, rng);
  const auto set = infer_implicit_edges(s, {u, -std::numeric_limits<double>::infinity()});
  EXPECT_EQ(set.edges.size(), 20u);
}

TEST(ImplicitEdges, HandDotProduct) {
  const Tensor s = Tensor::matrix(2, 2, {1, 0, 2, 0});
  const auto set = infer_implicit_edges(s, {Tensor::vector({1, 0, 1, 0}), 2.5}, "2020-01-02");
  ASSERT_EQ(set.edges.size(), 2u);
  EXPECT_EQ(set.day, "2020-01-02");
  for (const auto& e : set.edges) {
    EXPECT_DOUBLE_EQ(e.alpha, 3.0);
    EXPECT_DOUBLE_EQ(e.gate, 1.0 / (1.0 + std::exp(-3.0)));
  }
}

TEST(ImplicitEdges, DirectedWhenScoresDiffer) {
  // u = [1, 0, 0, 0]: alpha_ij depends on s_i only.
  const Tensor s = Tensor::matrix(2, 2, {1, 0, -1, 0});
  const auto set = infer_implicit_edges(s, {Tensor::vector({1, 0, 0, 0}), 0.5});
  ASSERT_EQ(set.edges.size(), 1u);
  EXPECT_EQ(set.edges[0].src, 0u);
  EXPECT_EQ(set.edges[0].dst, 1u);
}

TEST(ImplicitEdges, WidthMismatchIsDimensionError) {
  EXPECT_THROW(infer_implicit_edges(Tensor({3, 2}), {Tensor({5}), 0.0}), DimensionError);
}

TEST(ImplicitEdges, RaisingThresholdNeverAddsEdges) {
  std::mt19937_64 rng(9);
  const Tensor s = testing_support::random_tensor({7, 4}, rng);
  const Tensor u = testing_support::random_tensor({8}, rng);
  std::size_t previous = std::numeric_limits<std::size_t>::max();
  for (double eta = -1.0; eta <= 1.0; eta += 0.1) {
    const std::size_t count = infer_implicit_edges(s, {u, eta}).edges.size();
    EXPECT_LE(count, previous);
    previous = count;
  }
}

TEST(ImplicitEdges, ReplacesPreviousDay) {
  MarketGraph g(3, 0);
  g.set_implicit({"d1", {{0, 1, 1.0, 0.7}, {1, 2, 1.0, 0.7}}});
  g.set_implicit({"d2", {{2, 0, 1.0, 0.7}}});
  EXPECT_EQ(g.implicit().day, "d2");
  EXPECT_TRUE(g.neighbors(company(0), RelationKind::Implicit).empty());
  EXPECT_EQ(g.neighbors(company(2), RelationKind::Implicit), std::vector<std::size_t>{0});
}
