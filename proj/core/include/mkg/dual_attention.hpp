#pragma once

#include <string>
#include <vector>

#include "mkg/encoder.hpp"
#include "mkg/market_graph.hpp"
#include "mkg/numerics/tape.hpp"

namespace mkg {

/// Directed message list: row src[k] aggregates from row dst[k].
struct EdgeIndex {
  std::vector<int> src;
  std::vector<int> dst;

  std::size_t size() const { return src.size(); }
  bool empty() const { return src.empty(); }
};

struct AttentionResult {
  Var embedding;                    // targets x F'
  Var weights;                      // E x 1, invalid when there are no edges
  std::vector<bool> has_neighbors;  // per target row
};

/// Single-relation attention:
///   e_k = leaky_relu(a^T [t_src || s_dst]), gamma = softmax of e within each src,
///   out_u = tanh(sum_k gamma_k gate_k s_dst).
/// Rows without neighbours produce zeros. `gate` (E x 1) is optional.
AttentionResult attend(Var targets, Var sources, const EdgeIndex& edges, Var a, Var gate,
                       double slope);

struct RelationFusion {
  Var fused;    // N x F'
  Var weights;  // N x R, invalid when R == 0
};

/// Relation-level fusion with population scores (1 x R) shared by every row.
/// Relation r is excluded for row u where mask[u][r] is false; rows with every
/// relation excluded take `fallback`.
RelationFusion fuse_relations(const std::vector<Var>& embeddings, Var scores,
                              const std::vector<std::vector<bool>>& mask, Var fallback);

/// Population score mean_u(h_u)^T q, as a 1 x 1 value.
Var population_score(Var embeddings, Var q);

/// Executive features: mean of the features of the companies each executive is
/// linked to through any inter-class edge. Throws ValidationError for an
/// executive with no company link.
Var init_entity_features(const MarketGraph& graph, Var companies);

/// h' = W h for every row of h.
Var project(Var features, Var weights);

/// Undirected relation edges as a message list in both directions, sorted.
EdgeIndex symmetric_edges(const MarketGraph& graph, RelationKind kind);
/// Inter-class messages. `to_companies` gives company <- executive messages.
EdgeIndex inter_edges(const MarketGraph& graph, RelationKind kind, bool to_companies);

struct DualConfig {
  bool use_executives = true;
  bool use_implicit = true;
  bool use_explicit = true;
  bool use_dual = true;
  bool implicit_gate = true;
  std::size_t layers = 1;
  double slope = 0.2;
};

/// Company relations enabled by `config`, in registry order.
std::vector<RelationKind> company_relations(const DualConfig& config);

/// Parameter name prefix of dual layer `layer` ("" for the first).
std::string layer_prefix(std::size_t layer);

/// A softmax produced during the forward pass, kept for inspection.
struct SoftmaxTrace {
  std::string name;
  Var weights;                 // E x 1 for node level, N x R for relation level
  std::vector<int> segment;    // node level: group of each weight
  std::vector<std::vector<bool>> mask;  // relation level: support per row
};

struct DualOutput {
  Var companies;   // N x F'
  Var executives;  // invalid when executives are disabled or absent
  std::vector<SoftmaxTrace> softmaxes;
};

/// Inter-class pass then intra-class pass, repeated `config.layers` times.
/// With use_dual = false a single flat attention over the union of enabled
/// relations replaces both passes. `implicit` may carry no edges.
DualOutput dual_forward(const MarketGraph& graph, Var sequential, const RecordedImplicitEdges& implicit,
                        const VarMap& params, const DualConfig& config);

}  // namespace mkg
