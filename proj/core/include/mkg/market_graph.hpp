#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mkg/numerics/tape.hpp"

namespace mkg {

enum class EntityKind { Company, Executive };

struct EntityId {
  EntityKind kind = EntityKind::Company;
  std::size_t index = 0;

  friend bool operator==(const EntityId&, const EntityId&) = default;
};

enum class RelationKind {
  // company - company, explicit
  IndustryCategory,
  SupplyChain,
  BusinessPartnership,
  Investment,
  // company - company, derived from executives
  CEC,
  CEEC,
  // company - company, inferred per day
  Implicit,
  // executive - executive
  Classmate,
  Colleague,
  // company - executive
  Management,
  ExecInvestment,
};

inline constexpr std::size_t kRelationKindCount = 11;

inline constexpr std::array<RelationKind, 4> kExplicitRelations = {
    RelationKind::IndustryCategory, RelationKind::SupplyChain, RelationKind::BusinessPartnership,
    RelationKind::Investment};
inline constexpr std::array<RelationKind, 2> kExecutiveRelations = {RelationKind::Classmate,
                                                                    RelationKind::Colleague};
inline constexpr std::array<RelationKind, 2> kInterClassRelations = {RelationKind::Management,
                                                                     RelationKind::ExecInvestment};

std::string_view relation_name(RelationKind kind);
std::optional<RelationKind> parse_relation(std::string_view name);
std::string_view entity_kind_name(EntityKind kind);

bool is_company_relation(RelationKind kind);    // Company - Company
bool is_executive_relation(RelationKind kind);  // Executive - Executive
bool is_inter_class(RelationKind kind);         // Company - Executive

struct TypedEdge {
  RelationKind kind;
  EntityId a;
  EntityId b;
};

/// Implicit company link i -> j ("j is a neighbor of i") with its score and gate.
struct ImplicitEdge {
  std::size_t src = 0;
  std::size_t dst = 0;
  double alpha = 0.0;
  double gate = 0.0;
};

struct ImplicitEdgeSet {
  std::string day;
  std::vector<ImplicitEdge> edges;
};

/// Bi-typed entity store with one edge set per relation kind.
///
/// Intra-class pairs are stored canonically as (min, max); inter-class pairs as
/// (company, executive). Implicit edges are directed and live in a per-day set.
class MarketGraph {
 public:
  using Pair = std::pair<std::size_t, std::size_t>;

  MarketGraph() = default;
  MarketGraph(std::size_t companies, std::size_t executives);

  std::size_t company_count() const { return company_count_; }
  std::size_t executive_count() const { return executive_count_; }
  std::size_t count(EntityKind kind) const;

  /// Validates endpoint kinds, range, self-loops and duplicates.
  void add_edge(const TypedEdge& edge);
  const std::set<Pair>& edges(RelationKind kind) const;
  std::size_t edge_count(RelationKind kind) const;

  void set_implicit(ImplicitEdgeSet edges);
  const ImplicitEdgeSet& implicit() const { return implicit_; }

  /// Neighbours of `entity` under `kind`, ascending by index.
  std::vector<std::size_t> neighbors(EntityId entity, RelationKind kind) const;

  friend bool operator==(const MarketGraph& a, const MarketGraph& b);

 private:
  std::size_t company_count_ = 0;
  std::size_t executive_count_ = 0;
  std::array<std::set<Pair>, kRelationKindCount> edges_{};
  ImplicitEdgeSet implicit_;
};

MarketGraph build_graph(std::size_t companies, std::size_t executives,
                        const std::vector<TypedEdge>& edges);

/// Adds CEC (companies sharing an executive) and CEEC (companies whose
/// executives are linked by a classmate/colleague edge). Existing CEC/CEEC
/// sets are recomputed, so the operation is idempotent.
MarketGraph derive_meta_relations(const MarketGraph& graph);

struct ImplicitRelationParams {
  Tensor u;  // length 2F
  double eta = 0.0054;
};

/// Implicit edges inferred on the tape. `gate` is an E x 1 Var aligned with `edges`
/// (invalid when no edge passes the threshold).
struct RecordedImplicitEdges {
  std::vector<ImplicitEdge> edges;
  Var gate;
};

/// alpha_ij = leaky_relu(u^T [s_i || s_j]); edge (i, j) iff alpha_ij > eta, i != j.
RecordedImplicitEdges infer_implicit_edges(Var embeddings, Var u, double eta, double slope);

/// Value-level convenience wrapper; `embeddings` is N x F.
ImplicitEdgeSet infer_implicit_edges(const Tensor& embeddings, const ImplicitRelationParams& params,
                                     std::string day = {}, double slope = 0.2);

}  // namespace mkg
