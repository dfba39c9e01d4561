#include "mkg/dual_attention.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "mkg/errors.hpp"

namespace mkg {

namespace {

Var zeros(Tape& tape, std::size_t rows, std::size_t cols) { return tape.constant(Tensor({rows, cols})); }

std::string inter_name(RelationKind kind) { return "inter.a_" + std::string(relation_name(kind)); }
std::string intra_name(RelationKind kind) { return "intra.a_" + std::string(relation_name(kind)); }

EdgeIndex from_pairs(std::vector<std::pair<int, int>> pairs) {
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  EdgeIndex out;
  out.src.reserve(pairs.size());
  out.dst.reserve(pairs.size());
  for (const auto& [s, d] : pairs) {
    out.src.push_back(s);
    out.dst.push_back(d);
  }
  return out;
}

struct RelationPass {
  std::vector<Var> embeddings;
  std::vector<Var> scores;
  std::vector<std::vector<bool>> mask;  // rows x relations

  explicit RelationPass(std::size_t rows) : mask(rows) {}

  void add(const AttentionResult& r, Var score) {
    embeddings.push_back(r.embedding);
    scores.push_back(score);
    for (std::size_t u = 0; u < mask.size(); ++u) mask[u].push_back(r.has_neighbors[u]);
  }

  RelationFusion fuse(Var fallback) const {
    if (embeddings.empty()) return {fallback, Var{}};
    return fuse_relations(embeddings, concat_cols(scores), mask, fallback);
  }
};

void trace_node(DualOutput& out, std::string name, const AttentionResult& r, const EdgeIndex& edges) {
  if (r.weights.valid()) out.softmaxes.push_back({std::move(name), r.weights, edges.src, {}});
}

void trace_relation(DualOutput& out, std::string name, const RelationFusion& f,
                    const std::vector<std::vector<bool>>& mask) {
  if (f.weights.valid()) out.softmaxes.push_back({std::move(name), f.weights, {}, mask});
}

struct ImplicitMessages {
  EdgeIndex edges;
  Var gate;
};

ImplicitMessages implicit_messages(const RecordedImplicitEdges& implicit, bool gated) {
  ImplicitMessages out;
  for (const auto& e : implicit.edges) {
    out.edges.src.push_back(static_cast<int>(e.src));
    out.edges.dst.push_back(static_cast<int>(e.dst));
  }
  if (gated && !out.edges.empty()) out.gate = implicit.gate;
  return out;
}

DualOutput flat_forward(const MarketGraph& graph, Var sequential, const RecordedImplicitEdges& implicit,
                        const VarMap& params, const DualConfig& config) {
  Tape& tape = *sequential.tape;
  const std::size_t n = graph.company_count();
  const bool execs = config.use_executives && graph.executive_count() > 0;
  const std::size_t m = execs ? graph.executive_count() : 0;
  const int offset = static_cast<int>(n);

  Var features = execs ? concat_rows({sequential, init_entity_features(graph, sequential)}) : sequential;
  Var projected = project(features, require_var(params, "flat.W"));

  std::set<std::pair<int, int>> pairs;
  auto both = [&pairs](int a, int b) {
    pairs.insert({a, b});
    pairs.insert({b, a});
  };
  for (RelationKind kind : company_relations(config)) {
    if (kind == RelationKind::Implicit) continue;
    for (const auto& [a, b] : graph.edges(kind)) both(static_cast<int>(a), static_cast<int>(b));
  }
  if (execs) {
    for (RelationKind kind : kExecutiveRelations) {
      for (const auto& [a, b] : graph.edges(kind)) both(offset + static_cast<int>(a), offset + static_cast<int>(b));
    }
    for (RelationKind kind : kInterClassRelations) {
      for (const auto& [c, e] : graph.edges(kind)) both(static_cast<int>(c), offset + static_cast<int>(e));
    }
  }
  EdgeIndex edges = from_pairs({pairs.begin(), pairs.end()});

  // Implicit links already present as a typed relation keep the typed (ungated) message.
  std::vector<int> kept;
  if (config.use_implicit) {
    for (std::size_t k = 0; k < implicit.edges.size(); ++k) {
      const int s = static_cast<int>(implicit.edges[k].src);
      const int d = static_cast<int>(implicit.edges[k].dst);
      if (pairs.count({s, d})) continue;
      edges.src.push_back(s);
      edges.dst.push_back(d);
      kept.push_back(static_cast<int>(k));
    }
  }
  Var gate;
  if (config.implicit_gate && !kept.empty()) {
    std::vector<Var> parts;
    if (!pairs.empty()) parts.push_back(tape.constant(Tensor({pairs.size(), 1}, 1.0)));
    parts.push_back(gather_rows(implicit.gate, kept));
    gate = concat_rows(parts);
  }

  AttentionResult r = attend(projected, projected, edges, require_var(params, "flat.a"), gate, config.slope);
  DualOutput out;
  trace_node(out, "flat", r, edges);

  Tensor isolated({n + m, 1});
  bool any_isolated = false;
  for (std::size_t u = 0; u < n + m; ++u) {
    if (!r.has_neighbors[u]) {
      isolated[u] = 1.0;
      any_isolated = true;
    }
  }
  Var fused = r.embedding;
  if (any_isolated) fused = fused + scale_rows(projected, tape.constant(std::move(isolated)));
  out.companies = execs ? slice_rows(fused, 0, n) : fused;
  if (execs) out.executives = slice_rows(fused, n, m);
  return out;
}

}  // namespace

AttentionResult attend(Var targets, Var sources, const EdgeIndex& edges, Var a, Var gate, double slope) {
  Tape& tape = *targets.tape;
  const Tensor& t = targets.value();
  const Tensor& s = sources.value();
  if (t.cols() != s.cols()) {
    throw DimensionError("attend: target and source widths differ, " + shape_string(t.shape()) + " vs " +
                         shape_string(s.shape()));
  }
  const std::size_t width = t.cols();
  if (a.value().size() != 2 * width) {
    throw DimensionError("attend: attention vector must have " + std::to_string(2 * width) + " entries, got " +
                         shape_string(a.value().shape()));
  }
  if (edges.src.size() != edges.dst.size()) throw ContractError("attend: ragged edge index");

  AttentionResult out;
  out.has_neighbors.assign(t.rows(), false);
  if (edges.empty()) {
    out.embedding = zeros(tape, t.rows(), width);
    return out;
  }
  for (std::size_t k = 0; k < edges.size(); ++k) {
    if (edges.src[k] < 0 || static_cast<std::size_t>(edges.src[k]) >= t.rows() || edges.dst[k] < 0 ||
        static_cast<std::size_t>(edges.dst[k]) >= s.rows()) {
      throw ContractError("attend: edge endpoint out of range");
    }
    out.has_neighbors[static_cast<std::size_t>(edges.src[k])] = true;
  }
  if (gate.valid() && gate.value().size() != edges.size()) {
    throw DimensionError("attend: gate has " + std::to_string(gate.value().size()) + " entries for " +
                         std::to_string(edges.size()) + " edges");
  }

  // a^T [t_i || s_j] splits into a per-target and a per-source term.
  Var halves = reshape(a, {2, width});
  Var target_part = column(matmul_nt(targets, halves), 0);
  Var source_part = column(matmul_nt(sources, halves), 1);
  Var other = gather_rows(sources, edges.dst);
  Var score = leaky_relu(gather_rows(target_part, edges.src) + gather_rows(source_part, edges.dst), slope);
  out.weights = segment_softmax(score, edges.src, t.rows());
  Var message = scale_rows(other, out.weights);
  if (gate.valid()) message = scale_rows(message, reshape(gate, {edges.size(), 1}));
  out.embedding = tanh(segment_sum(message, edges.src, t.rows()));
  return out;
}

RelationFusion fuse_relations(const std::vector<Var>& embeddings, Var scores,
                              const std::vector<std::vector<bool>>& mask, Var fallback) {
  const std::size_t rows = fallback.value().rows();
  const std::size_t relations = embeddings.size();
  if (relations == 0) return {fallback, Var{}};
  if (scores.value().size() != relations) {
    throw DimensionError("fuse_relations: " + std::to_string(scores.value().size()) + " scores for " +
                         std::to_string(relations) + " relations");
  }
  if (mask.size() != rows) throw DimensionError("fuse_relations: mask rows differ from fallback rows");
  for (const auto& e : embeddings) {
    if (e.value().shape() != fallback.value().shape()) {
      throw DimensionError("fuse_relations: embedding shape " + shape_string(e.value().shape()) +
                           " differs from fallback " + shape_string(fallback.value().shape()));
    }
  }

  RelationFusion out;
  out.weights = row_masked_softmax(broadcast_rows(reshape(scores, {1, relations}), rows), mask);
  Var fused;
  for (std::size_t r = 0; r < relations; ++r) {
    Var term = scale_rows(embeddings[r], column(out.weights, r));
    fused = fused.valid() ? fused + term : term;
  }
  Tensor excluded({rows, 1});
  bool any = false;
  for (std::size_t u = 0; u < rows; ++u) {
    if (mask[u].size() != relations) throw DimensionError("fuse_relations: ragged mask");
    if (std::none_of(mask[u].begin(), mask[u].end(), [](bool b) { return b; })) {
      excluded[u] = 1.0;
      any = true;
    }
  }
  if (any) fused = fused + scale_rows(fallback, fallback.tape->constant(std::move(excluded)));
  out.fused = fused;
  return out;
}

Var population_score(Var embeddings, Var q) {
  const std::size_t width = embeddings.value().cols();
  if (q.value().size() != width) {
    throw DimensionError("population_score: q has " + std::to_string(q.value().size()) +
                         " entries for width " + std::to_string(width));
  }
  return matmul_nt(mean_rows(embeddings), reshape(q, {1, width}));
}

Var init_entity_features(const MarketGraph& graph, Var companies) {
  const std::size_t n = graph.company_count();
  const std::size_t m = graph.executive_count();
  if (companies.value().rows() != n) {
    throw DimensionError("init_entity_features: " + std::to_string(companies.value().rows()) +
                         " company rows for " + std::to_string(n) + " companies");
  }
  if (m == 0) throw ContractError("init_entity_features: graph has no executives");
  Tensor average({m, n});
  for (std::size_t e = 0; e < m; ++e) {
    std::set<std::size_t> linked;
    for (RelationKind kind : kInterClassRelations) {
      for (std::size_t c : graph.neighbors({EntityKind::Executive, e}, kind)) linked.insert(c);
    }
    if (linked.empty()) {
      throw ValidationError("executive " + std::to_string(e) + " has no company link");
    }
    const double w = 1.0 / static_cast<double>(linked.size());
    for (std::size_t c : linked) average(e, c) = w;
  }
  return matmul(companies.tape->constant(std::move(average)), companies);
}

Var project(Var features, Var weights) {
  if (weights.value().cols() != features.value().cols()) {
    throw DimensionError("project: weights " + shape_string(weights.value().shape()) + " do not accept width " +
                         std::to_string(features.value().cols()));
  }
  return matmul_nt(features, weights);
}

EdgeIndex symmetric_edges(const MarketGraph& graph, RelationKind kind) {
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(2 * graph.edges(kind).size());
  for (const auto& [a, b] : graph.edges(kind)) {
    pairs.emplace_back(static_cast<int>(a), static_cast<int>(b));
    pairs.emplace_back(static_cast<int>(b), static_cast<int>(a));
  }
  return from_pairs(pairs);
}

EdgeIndex inter_edges(const MarketGraph& graph, RelationKind kind, bool to_companies) {
  if (!is_inter_class(kind)) throw ContractError("inter_edges: not an inter-class relation");
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(graph.edges(kind).size());
  for (const auto& [c, e] : graph.edges(kind)) {
    if (to_companies) {
      pairs.emplace_back(static_cast<int>(c), static_cast<int>(e));
    } else {
      pairs.emplace_back(static_cast<int>(e), static_cast<int>(c));
    }
  }
  return from_pairs(pairs);
}

std::vector<RelationKind> company_relations(const DualConfig& config) {
  std::vector<RelationKind> out;
  if (config.use_explicit) out.insert(out.end(), kExplicitRelations.begin(), kExplicitRelations.end());
  if (config.use_executives) {
    out.push_back(RelationKind::CEC);
    out.push_back(RelationKind::CEEC);
  }
  if (config.use_implicit) out.push_back(RelationKind::Implicit);
  return out;
}

std::string layer_prefix(std::size_t layer) {
  return layer == 0 ? std::string() : "layer" + std::to_string(layer) + ".";
}

DualOutput dual_forward(const MarketGraph& graph, Var sequential, const RecordedImplicitEdges& implicit,
                        const VarMap& params, const DualConfig& config) {
  if (!sequential.valid()) throw ContractError("dual_forward: missing sequential embeddings");
  if (sequential.value().rows() != graph.company_count()) {
    throw DimensionError("dual_forward: " + std::to_string(sequential.value().rows()) +
                         " embeddings for " + std::to_string(graph.company_count()) + " companies");
  }
  if (!config.use_dual) return flat_forward(graph, sequential, implicit, params, config);
  if (config.layers == 0) throw ConfigError("dual_layers must be at least 1");

  const std::size_t n = graph.company_count();
  const bool execs = config.use_executives && graph.executive_count() > 0;
  const std::size_t m = execs ? graph.executive_count() : 0;
  const std::vector<RelationKind> relations = company_relations(config);
  const ImplicitMessages implicit_msgs = implicit_messages(implicit, config.implicit_gate);

  DualOutput out;
  Var companies = sequential;
  Var executives = execs ? init_entity_features(graph, sequential) : Var{};

  for (std::size_t layer = 0; layer < config.layers; ++layer) {
    const std::string p = layer_prefix(layer);
    Var projected_c = project(companies, require_var(params, p + "project.company"));
    Var zc = projected_c;
    Var ze;

    if (execs) {
      Var projected_e = project(executives, require_var(params, p + "project.executive"));
      Var q_company = require_var(params, p + "inter.q_company");
      Var q_executive = require_var(params, p + "inter.q_executive");
      RelationPass to_c(n), to_e(m);
      for (RelationKind kind : kInterClassRelations) {
        Var a = require_var(params, p + inter_name(kind));
        const EdgeIndex ce = inter_edges(graph, kind, true);
        const EdgeIndex ec = inter_edges(graph, kind, false);
        AttentionResult rc = attend(projected_c, projected_e, ce, a, Var{}, config.slope);
        AttentionResult re = attend(projected_e, projected_c, ec, a, Var{}, config.slope);
        trace_node(out, p + "inter." + std::string(relation_name(kind)) + ".company", rc, ce);
        trace_node(out, p + "inter." + std::string(relation_name(kind)) + ".executive", re, ec);
        // Shared across both entity types.
        Var score = population_score(rc.embedding, q_company) + population_score(re.embedding, q_executive);
        to_c.add(rc, score);
        to_e.add(re, score);
      }
      RelationFusion fc = to_c.fuse(projected_c);
      RelationFusion fe = to_e.fuse(projected_e);
      trace_relation(out, p + "inter.company", fc, to_c.mask);
      trace_relation(out, p + "inter.executive", fe, to_e.mask);
      zc = fc.fused;
      ze = fe.fused;
    }

    if (!relations.empty()) {
      Var wz = project(zc, require_var(params, p + "intra.W_company"));
      Var q = require_var(params, p + "intra.q_company");
      RelationPass pass(n);
      for (RelationKind kind : relations) {
        Var a = require_var(params, p + intra_name(kind));
        AttentionResult r;
        EdgeIndex edges;
        if (kind == RelationKind::Implicit) {
          edges = implicit_msgs.edges;
          r = attend(wz, wz, edges, a, implicit_msgs.gate, config.slope);
        } else {
          edges = symmetric_edges(graph, kind);
          r = attend(wz, wz, edges, a, Var{}, config.slope);
        }
        trace_node(out, p + "intra." + std::string(relation_name(kind)), r, edges);
        pass.add(r, population_score(r.embedding, q));
      }
      RelationFusion f = pass.fuse(zc);
      trace_relation(out, p + "intra.company", f, pass.mask);
      companies = f.fused;
    } else {
      companies = zc;
    }

    if (execs) {
      Var wz = project(ze, require_var(params, p + "intra.W_executive"));
      Var q = require_var(params, p + "intra.q_executive");
      RelationPass pass(m);
      for (RelationKind kind : kExecutiveRelations) {
        const EdgeIndex edges = symmetric_edges(graph, kind);
        AttentionResult r = attend(wz, wz, edges, require_var(params, p + intra_name(kind)), Var{}, config.slope);
        trace_node(out, p + "intra." + std::string(relation_name(kind)), r, edges);
        pass.add(r, population_score(r.embedding, q));
      }
      RelationFusion f = pass.fuse(ze);
      trace_relation(out, p + "intra.executive", f, pass.mask);
      executives = f.fused;
    }
  }

  out.companies = companies;
  out.executives = executives;
  return out;
}

}  // namespace mkg
