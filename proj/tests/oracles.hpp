#pragma once

// Independent reference computations, written from the definitions with
// brute-force loops. Shared by the unit tests and the acceptance run.

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include "mkg/market_graph.hpp"

namespace oracle {

using PairSet = std::set<std::pair<std::size_t, std::size_t>>;

/// Random bi-typed graph with every loadable kind present at some density.
inline mkg::MarketGraph random_graph(std::mt19937_64& rng, std::size_t companies, std::size_t executives,
                                     double density = 0.25) {
  using mkg::EntityKind;
  using mkg::RelationKind;
  std::bernoulli_distribution coin(density);
  std::vector<mkg::TypedEdge> edges;
  for (std::size_t a = 0; a < companies; ++a) {
    for (std::size_t b = a + 1; b < companies; ++b) {
      for (RelationKind k : mkg::kExplicitRelations) {
        if (coin(rng)) edges.push_back({k, {EntityKind::Company, a}, {EntityKind::Company, b}});
      }
    }
  }
  for (std::size_t a = 0; a < executives; ++a) {
    for (std::size_t b = a + 1; b < executives; ++b) {
      for (RelationKind k : mkg::kExecutiveRelations) {
        if (coin(rng)) edges.push_back({k, {EntityKind::Executive, a}, {EntityKind::Executive, b}});
      }
    }
  }
  std::bernoulli_distribution sparse(density / 2.0);
  for (std::size_t c = 0; c < companies; ++c) {
    for (std::size_t e = 0; e < executives; ++e) {
      for (RelationKind k : mkg::kInterClassRelations) {
        if (sparse(rng)) edges.push_back({k, {EntityKind::Company, c}, {EntityKind::Executive, e}});
      }
    }
  }
  return mkg::build_graph(companies, executives, edges);
}

/// Company-executive incidence over both inter-class kinds.
inline bool linked(const mkg::MarketGraph& g, std::size_t c, std::size_t e) {
  for (auto kind : mkg::kInterClassRelations) {
    if (g.edges(kind).count({c, e})) return true;
  }
  return false;
}

inline bool social(const mkg::MarketGraph& g, std::size_t e1, std::size_t e2) {
  const auto key = std::minmax(e1, e2);
  for (auto kind : mkg::kExecutiveRelations) {
    if (g.edges(kind).count({key.first, key.second})) return true;
  }
  return false;
}

/// Paths company - executive - company.
inline PairSet cec_paths(const mkg::MarketGraph& g) {
  PairSet out;
  const std::size_t n = g.company_count(), m = g.executive_count();
  for (std::size_t c1 = 0; c1 < n; ++c1)
    for (std::size_t e = 0; e < m; ++e)
      for (std::size_t c2 = 0; c2 < n; ++c2)
        if (c1 != c2 && linked(g, c1, e) && linked(g, c2, e)) out.insert(std::minmax(c1, c2));
  return out;
}

/// Paths company - executive - executive - company.
inline PairSet ceec_paths(const mkg::MarketGraph& g) {
  PairSet out;
  const std::size_t n = g.company_count(), m = g.executive_count();
  for (std::size_t c1 = 0; c1 < n; ++c1)
    for (std::size_t e1 = 0; e1 < m; ++e1)
      for (std::size_t e2 = 0; e2 < m; ++e2)
        for (std::size_t c2 = 0; c2 < n; ++c2)
          if (c1 != c2 && e1 != e2 && linked(g, c1, e1) && social(g, e1, e2) && linked(g, c2, e2))
            out.insert(std::minmax(c1, c2));
  return out;
}

inline double pairwise_roc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      pairs += 1.0;
      wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  return wins / pairs;
}

inline double counted_da(const std::vector<double>& p, const std::vector<int>& y) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < p.size(); ++i) hit += (p[i] > 0.5 ? 1 : 0) == y[i];
  return static_cast<double>(hit) / static_cast<double>(p.size());
}

/// Two-pass mean and sample deviation of excess returns, annualised.
inline double two_pass_sharpe(const std::vector<double>& r, double annual_rf) {
  const double rf = annual_rf / 252.0;
  double mean = 0.0;
  for (double x : r) mean += x - rf;
  mean /= static_cast<double>(r.size());
  double ss = 0.0;
  for (double x : r) ss += (x - rf - mean) * (x - rf - mean);
  return mean / std::sqrt(ss / static_cast<double>(r.size() - 1)) * std::sqrt(252.0);
}

/// Average precision by brute force over every distinct threshold.
inline double threshold_ap(const std::vector<double>& s, const std::vector<int>& y) {
  std::vector<double> cuts(s);
  std::sort(cuts.rbegin(), cuts.rend());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  double positives = 0.0;
  for (int v : y) positives += v;
  double ap = 0.0, last_recall = 0.0;
  for (double c : cuts) {
    double tp = 0.0, taken = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] < c) continue;
      taken += 1.0;
      tp += y[i];
    }
    ap += (tp / positives - last_recall) * (tp / taken);
    last_recall = tp / positives;
  }
  return ap;
}

}  // namespace oracle
