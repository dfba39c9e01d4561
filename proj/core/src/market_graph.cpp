#include "mkg/market_graph.hpp"

#include <algorithm>

#include "mkg/errors.hpp"

namespace mkg {

namespace {

constexpr std::array<std::string_view, kRelationKindCount> kRelationNames = {
    "industry_category", "supply_chain", "business_partnership", "investment", "cec", "ceec",
    "implicit",          "classmate",    "colleague",            "management", "exec_investment"};

std::size_t slot(RelationKind kind) { return static_cast<std::size_t>(kind); }

std::string describe(const EntityId& e) {
  return std::string(entity_kind_name(e.kind)) + " " + std::to_string(e.index);
}

}  // namespace

std::string_view relation_name(RelationKind kind) { return kRelationNames[slot(kind)]; }

std::optional<RelationKind> parse_relation(std::string_view name) {
  for (std::size_t i = 0; i < kRelationNames.size(); ++i) {
    if (kRelationNames[i] == name) return static_cast<RelationKind>(i);
  }
  return std::nullopt;
}

std::string_view entity_kind_name(EntityKind kind) {
  return kind == EntityKind::Company ? "company" : "executive";
}

bool is_company_relation(RelationKind kind) {
  return slot(kind) <= slot(RelationKind::Implicit);
}

bool is_executive_relation(RelationKind kind) {
  return kind == RelationKind::Classmate || kind == RelationKind::Colleague;
}

bool is_inter_class(RelationKind kind) {
  return kind == RelationKind::Management || kind == RelationKind::ExecInvestment;
}

MarketGraph::MarketGraph(std::size_t companies, std::size_t executives)
    : company_count_(companies), executive_count_(executives) {}

std::size_t MarketGraph::count(EntityKind kind) const {
  return kind == EntityKind::Company ? company_count_ : executive_count_;
}

void MarketGraph::add_edge(const TypedEdge& edge) {
  const std::string what = std::string(relation_name(edge.kind)) + " edge (" + describe(edge.a) +
                           ", " + describe(edge.b) + ")";
  if (edge.kind == RelationKind::Implicit) {
    throw ValidationError(what + ": implicit edges are inferred, not loaded");
  }
  for (const EntityId& e : {edge.a, edge.b}) {
    if (e.index >= count(e.kind)) throw ValidationError(what + ": dangling endpoint " + describe(e));
  }
  Pair pair;
  if (is_company_relation(edge.kind) || is_executive_relation(edge.kind)) {
    const EntityKind want = is_company_relation(edge.kind) ? EntityKind::Company : EntityKind::Executive;
    if (edge.a.kind != want || edge.b.kind != want) {
      throw ValidationError(what + ": endpoint types do not match the relation");
    }
    if (edge.a.index == edge.b.index) throw ValidationError(what + ": self-loop");
    pair = {std::min(edge.a.index, edge.b.index), std::max(edge.a.index, edge.b.index)};
  } else {
    if (edge.a.kind == edge.b.kind) throw ValidationError(what + ": endpoint types do not match the relation");
    const EntityId& company = edge.a.kind == EntityKind::Company ? edge.a : edge.b;
    const EntityId& executive = edge.a.kind == EntityKind::Company ? edge.b : edge.a;
    pair = {company.index, executive.index};
  }
  if (!edges_[slot(edge.kind)].insert(pair).second) throw ValidationError(what + ": duplicate edge");
}

const std::set<MarketGraph::Pair>& MarketGraph::edges(RelationKind kind) const {
  return edges_[slot(kind)];
}

std::size_t MarketGraph::edge_count(RelationKind kind) const {
  if (kind == RelationKind::Implicit) return implicit_.edges.size();
  return edges_[slot(kind)].size();
}

void MarketGraph::set_implicit(ImplicitEdgeSet edges) {
  for (const auto& e : edges.edges) {
    if (e.src >= company_count_ || e.dst >= company_count_ || e.src == e.dst) {
      throw ValidationError("implicit edge out of range or self-loop");
    }
  }
  implicit_ = std::move(edges);
}

std::vector<std::size_t> MarketGraph::neighbors(EntityId entity, RelationKind kind) const {
  if (entity.index >= count(entity.kind)) throw ContractError("neighbors: unknown " + describe(entity));
  std::vector<std::size_t> out;
  if (kind == RelationKind::Implicit) {
    if (entity.kind != EntityKind::Company) throw ContractError("neighbors: implicit relation needs a company");
    for (const auto& e : implicit_.edges) {
      if (e.src == entity.index) out.push_back(e.dst);
    }
  } else if (is_inter_class(kind)) {
    for (const auto& [c, e] : edges_[slot(kind)]) {
      if (entity.kind == EntityKind::Company && c == entity.index) out.push_back(e);
      if (entity.kind == EntityKind::Executive && e == entity.index) out.push_back(c);
    }
  } else {
    const EntityKind want = is_company_relation(kind) ? EntityKind::Company : EntityKind::Executive;
    if (entity.kind != want) {
      throw ContractError("neighbors: relation " + std::string(relation_name(kind)) +
                          " does not apply to " + describe(entity));
    }
    for (const auto& [a, b] : edges_[slot(kind)]) {
      if (a == entity.index) out.push_back(b);
      if (b == entity.index) out.push_back(a);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

bool operator==(const MarketGraph& a, const MarketGraph& b) {
  if (a.company_count_ != b.company_count_ || a.executive_count_ != b.executive_count_ ||
      a.edges_ != b.edges_ || a.implicit_.day != b.implicit_.day ||
      a.implicit_.edges.size() != b.implicit_.edges.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.implicit_.edges.size(); ++i) {
    const auto& x = a.implicit_.edges[i];
    const auto& y = b.implicit_.edges[i];
    if (x.src != y.src || x.dst != y.dst || x.alpha != y.alpha || x.gate != y.gate) return false;
  }
  return true;
}

MarketGraph build_graph(std::size_t companies, std::size_t executives,
                        const std::vector<TypedEdge>& edges) {
  MarketGraph graph(companies, executives);
  for (const auto& e : edges) graph.add_edge(e);
  return graph;
}

MarketGraph derive_meta_relations(const MarketGraph& graph) {
  MarketGraph out(graph.company_count(), graph.executive_count());
  for (std::size_t k = 0; k < kRelationKindCount; ++k) {
    const auto kind = static_cast<RelationKind>(k);
    if (kind == RelationKind::CEC || kind == RelationKind::CEEC || kind == RelationKind::Implicit) continue;
    for (const auto& [a, b] : graph.edges(kind)) {
      const bool inter = is_inter_class(kind);
      const EntityKind ka = inter ? EntityKind::Company
                                  : (is_company_relation(kind) ? EntityKind::Company : EntityKind::Executive);
      const EntityKind kb = inter ? EntityKind::Executive : ka;
      out.add_edge({kind, {ka, a}, {kb, b}});
    }
  }
  out.set_implicit(graph.implicit());

  // Companies linked to each executive through any inter-class relation.
  std::vector<std::set<std::size_t>> companies_of(graph.executive_count());
  for (RelationKind kind : kInterClassRelations) {
    for (const auto& [c, e] : graph.edges(kind)) companies_of[e].insert(c);
  }

  std::set<MarketGraph::Pair> cec;
  for (const auto& companies : companies_of) {
    for (auto i = companies.begin(); i != companies.end(); ++i) {
      for (auto j = std::next(i); j != companies.end(); ++j) cec.insert({*i, *j});
    }
  }
  std::set<MarketGraph::Pair> ceec;
  for (RelationKind kind : kExecutiveRelations) {
    for (const auto& [e1, e2] : graph.edges(kind)) {
      for (std::size_t c1 : companies_of[e1]) {
        for (std::size_t c2 : companies_of[e2]) {
          if (c1 != c2) ceec.insert({std::min(c1, c2), std::max(c1, c2)});
        }
      }
    }
  }
  for (const auto& [a, b] : cec) out.add_edge({RelationKind::CEC, {EntityKind::Company, a}, {EntityKind::Company, b}});
  for (const auto& [a, b] : ceec) out.add_edge({RelationKind::CEEC, {EntityKind::Company, a}, {EntityKind::Company, b}});
  return out;
}

RecordedImplicitEdges infer_implicit_edges(Var embeddings, Var u, double eta, double slope) {
  const Tensor& s = embeddings.value();
  const std::size_t n = s.rows(), width = s.cols();
  if (u.value().size() != 2 * width) {
    throw DimensionError("implicit relation: u has " + std::to_string(u.value().size()) +
                         " entries, embeddings need 2x" + std::to_string(width));
  }
  // Column 0 scores s_i against the first half of u, column 1 against the second.
  Var halves = reshape(u, {2, width});
  Var parts = matmul_nt(embeddings, halves);
  const Tensor& pv = parts.value();

  std::vector<int> src, dst;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double pre = pv(i, 0) + pv(j, 1);
      const double alpha = pre > 0.0 ? pre : slope * pre;
      embeddings.tape->note_kink(pre);
      embeddings.tape->note_kink(alpha - eta);
      if (alpha > eta) {
        src.push_back(static_cast<int>(i));
        dst.push_back(static_cast<int>(j));
      }
    }
  }
  RecordedImplicitEdges out;
  if (src.empty()) return out;

  Var left = gather_rows(column(parts, 0), src);
  Var right = gather_rows(column(parts, 1), dst);
  Var alpha = leaky_relu(left + right, slope);
  out.gate = sigmoid(alpha);
  const Tensor& av = alpha.value();
  const Tensor& gv = out.gate.value();
  out.edges.reserve(src.size());
  for (std::size_t e = 0; e < src.size(); ++e) {
    out.edges.push_back({static_cast<std::size_t>(src[e]), static_cast<std::size_t>(dst[e]), av[e], gv[e]});
  }
  return out;
}

ImplicitEdgeSet infer_implicit_edges(const Tensor& embeddings, const ImplicitRelationParams& params,
                                     std::string day, double slope) {
  Tape tape(false);
  Var s = tape.constant(embeddings);
  Var u = tape.constant(params.u);
  auto recorded = infer_implicit_edges(s, u, params.eta, slope);
  return ImplicitEdgeSet{std::move(day), std::move(recorded.edges)};
}

}  // namespace mkg
