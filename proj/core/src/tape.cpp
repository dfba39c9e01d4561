#include "mkg/numerics/tape.hpp"

#include <algorithm>
#include <cmath>

#include "mkg/errors.hpp"

namespace mkg {

namespace {

constexpr double kLogClamp = 1e-12;

Tape& tape_of(Var a) {
  if (!a.valid()) throw ContractError("operation on an unrecorded value");
  return *a.tape;
}

Tape& same_tape(Var a, Var b) {
  Tape& t = tape_of(a);
  if (&t != &tape_of(b)) throw ContractError("operands recorded on different tapes");
  return t;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void require_segments(const char* op, const std::vector<int>& segment, std::size_t rows,
                      std::size_t segments) {
  if (segment.size() != rows) {
    throw DimensionError(std::string(op) + ": " + std::to_string(segment.size()) +
                         " segment ids for " + std::to_string(rows) + " rows");
  }
  for (int s : segment) {
    if (s < 0 || static_cast<std::size_t>(s) >= segments) {
      throw ContractError(std::string(op) + ": segment id out of range");
    }
  }
}

// c += a * b
void gemm_nn(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const double* ap = a.data().data();
  const double* bp = b.data().data();
  double* cp = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = cp + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ap[i * k + p];
      const double* brow = bp + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c += a * b^T
void gemm_nt(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  const double* ap = a.data().data();
  const double* bp = b.data().data();
  double* cp = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = ap + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = bp + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      cp[i * n + j] += s;
    }
  }
}

// c += a^T * b
void gemm_tn(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  const double* ap = a.data().data();
  const double* bp = b.data().data();
  double* cp = c.data().data();
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = ap + p * m;
    const double* brow = bp + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      double* crow = cp + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void accumulate(Tensor* dst, const Tensor& g) {
  for (std::size_t i = 0; i < g.size(); ++i) (*dst)[i] += g[i];
}

}  // namespace

const Tensor& Var::value() const {
  if (!valid()) throw ContractError("value of an unrecorded Var");
  return tape->value(id);
}

std::size_t GradSink::shape_size_of(int id) const { return tape_.value(id).size(); }

Tensor* GradSink::operator()(int id) {
  if (!tape_.requires_grad(id)) return nullptr;
  Tensor& g = grads_[id];
  if (g.empty()) g = Tensor(tape_.value(id).shape());
  return &g;
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{"constant", std::move(value), {}, nullptr, false});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::parameter(const std::string& name, const Tensor& value) {
  if (parameters_.count(name)) throw ContractError("parameter registered twice: " + name);
  nodes_.push_back(Node{"parameter", value, {}, nullptr, recording_});
  const int id = static_cast<int>(nodes_.size()) - 1;
  parameters_[name] = id;
  return Var{this, id};
}

Var Tape::push(std::string tag, Tensor value, std::vector<int> inputs, BackwardRule rule) {
  bool needs = false;
  if (recording_) {
    for (int i : inputs) needs = needs || nodes_[i].requires_grad;
  }
  if (!needs) rule = nullptr;
  nodes_.push_back(Node{std::move(tag), std::move(value), std::move(inputs), std::move(rule), needs});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::inject_fault(std::string tag, double factor) { fault_ = {std::move(tag), factor}; }

void Tape::note_kink(double distance) { kink_margin_ = std::min(kink_margin_, std::abs(distance)); }

Gradients Tape::backward(Var root) {
  if (root.tape != this) throw ContractError("backward root recorded on another tape");
  if (nodes_[root.id].value.size() != 1) {
    throw ContractError("backward requires a scalar root, got shape " +
                        shape_string(nodes_[root.id].value.shape()));
  }
  std::vector<Tensor> grads(nodes_.size());
  GradSink sink(*this, grads);
  if (nodes_[root.id].requires_grad) {
    grads[root.id] = Tensor(nodes_[root.id].value.shape(), 1.0);
    for (int id = root.id; id >= 0; --id) {
      Node& node = nodes_[id];
      if (!node.rule || grads[id].empty()) continue;
      Tensor upstream = std::move(grads[id]);
      grads[id] = Tensor();
      if (fault_ && fault_->first == node.tag) {
        for (auto& g : upstream.data()) g *= fault_->second;
      }
      node.rule(upstream, node.value, sink);
    }
  }
  Gradients out;
  for (const auto& [name, id] : parameters_) {
    if (!grads[id].empty()) {
      out[name] = std::move(grads[id]);
    } else {
      out[name] = Tensor(nodes_[id].value.shape());
    }
  }
  return out;
}

// ---- operations -----------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.cols() != y.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_string(x.shape()) + " * " +
                         shape_string(y.shape()));
  }
  Tensor out({x.rows(), y.cols()});
  gemm_nn(x, y, out);
  const int ia = a.id, ib = b.id;
  return t.push("matmul", std::move(out), {ia, ib},
                [&t, ia, ib](const Tensor& g, const Tensor&, GradSink& sink) {
                  if (Tensor* ga = sink(ia)) gemm_nt(g, t.value(ib), *ga);
                  if (Tensor* gb = sink(ib)) gemm_tn(t.value(ia), g, *gb);
                });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.cols() != y.cols()) {
    throw DimensionError("matmul_nt: inner dimensions differ, " + shape_string(x.shape()) +
                         " * " + shape_string(y.shape()) + "^T");
  }
  Tensor out({x.rows(), y.rows()});
  gemm_nt(x, y, out);
  const int ia = a.id, ib = b.id;
  return t.push("matmul", std::move(out), {ia, ib},
                [&t, ia, ib](const Tensor& g, const Tensor&, GradSink& sink) {
                  if (Tensor* ga = sink(ia)) gemm_nn(g, t.value(ib), *ga);
                  if (Tensor* gb = sink(ib)) gemm_tn(g, t.value(ia), *gb);
                });
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
  const int ia = a.id, ib = b.id;
  return t.push("add", std::move(out), {ia, ib},
                [ia, ib](const Tensor& g, const Tensor&, GradSink& sink) {
                  if (Tensor* ga = sink(ia)) accumulate(ga, g);
                  if (Tensor* gb = sink(ib)) accumulate(gb, g);
                });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
  const int ia = a.id, ib = b.id;
  return t.push("sub", std::move(out), {ia, ib},
                [ia, ib](const Tensor& g, const Tensor&, GradSink& sink) {
                  if (Tensor* ga = sink(ia)) accumulate(ga, g);
                  if (Tensor* gb = sink(ib)) {
                    for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
                  }
                });
}

Var hadamard(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape("hadamard", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  const int ia = a.id, ib = b.id;
  return t.push("hadamard", std::move(out), {ia, ib},
                [&t, ia, ib](const Tensor& g, const Tensor&, GradSink& sink) {
                  if (Tensor* ga = sink(ia)) {
                    const Tensor& y = t.value(ib);
                    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * y[i];
                  }
                  if (Tensor* gb = sink(ib)) {
                    const Tensor& x = t.value(ia);
                    for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * x[i];
                  }
                });
}

Var add_row(Var a, Var row) {
  Tape& t = same_tape(a, row);
  const Tensor& x = a.value();
  const Tensor& r = row.value();
  const std::size_t n = x.rows(), c = x.cols();
  if (r.size() != c) {
    throw DimensionError("add_row: row " + shape_string(r.shape()) + " does not fit " +
                         shape_string(x.shape()));
  }
  Tensor out = x;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) out(i, j) += r[j];
  }
  const int ia = a.id, ir = row.id;
  return t.push("add_row", std::move(out), {ia, ir},
                [ia, ir, n, c](const Tensor& g, const Tensor&, GradSink& sink) {
                  if (Tensor* ga = sink(ia)) accumulate(ga, g);
                  if (Tensor* gr = sink(ir)) {
                    for (std::size_t i = 0; i < n; ++i) {
                      for (std::size_t j = 0; j < c; ++j) (*gr)[j] += g[i * c + j];
                    }
                  }
                });
}

Var scale(Var a, double factor) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (auto& v : out.data()) v *= factor;
  const int ia = a.id;
  return t.push("scale", std::move(out), {ia},
                [ia, factor](const Tensor& g, const Tensor&, GradSink& sink) {
                  if (Tensor* ga = sink(ia)) {
                    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += factor * g[i];
                  }
                });
}

Var one_minus(Var a) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (auto& v : out.data()) v = 1.0 - v;
  const int ia = a.id;
  return t.push("one_minus", std::move(out), {ia},
                [ia](const Tensor& g, const Tensor&, GradSink& sink) {
                  if (Tensor* ga = sink(ia)) {
                    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] -= g[i];
                  }
                });
}

Var tanh(Var a) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (auto& v : out.data()) v = std::tanh(v);
  const int ia = a.id;
  return t.push("tanh", std::move(out), {ia},
                [ia](const Tensor& g, const Tensor& y, GradSink& sink) {
                  if (Tensor* ga = sink(ia)) {
                    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * (1.0 - y[i] * y[i]);
                  }
                });
}

Var sigmoid(Var a) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (auto& v : out.data()) {
    // Split by sign so exp never overflows.
    if (v >= 0) {
      v = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      v = e / (1.0 + e);
    }
  }
  const int ia = a.id;
  return t.push("sigmoid", std::move(out), {ia},
                [ia](const Tensor& g, const Tensor& y, GradSink& sink) {
                  if (Tensor* ga = sink(ia)) {
                    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * y[i] * (1.0 - y[i]);
                  }
                });
}

Var leaky_relu(Var a, double slope) {
  if (!(slope > 0.0 && slope < 1.0)) throw ContractError("leaky_relu slope must lie in (0,1)");
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  Tensor out = x;
  double margin = std::numeric_limits<double>::infinity();
  for (auto& v : out.data()) {
    margin = std::min(margin, std::abs(v));
    if (v <= 0.0) v *= slope;
  }
  t.note_kink(margin);
  const int ia = a.id;
  // At exactly 0 the negative-side slope is used.
  return t.push("leaky_relu", std::move(out), {ia},
                [&t, ia, slope](const Tensor& g, const Tensor&, GradSink& sink) {
                  if (Tensor* ga = sink(ia)) {
                    const Tensor& x = t.value(ia);
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      (*ga)[i] += g[i] * (x[i] > 0.0 ? 1.0 : slope);
                    }
                  }
                });
}

Var reshape(Var a, Shape shape) {
  Tape& t = tape_of(a);
  Tensor out = a.value().reshaped(std::move(shape));
  const int ia = a.id;
  return t.push("reshape", std::move(out), {ia},
                [ia](const Tensor& g, const Tensor&, GradSink& sink) {
                  if (Tensor* ga = sink(ia)) accumulate(ga, g);
                });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_cols of nothing");
  Tape& t = tape_of(parts.front());
  const std::size_t n = parts.front().value().rows();
  std::vector<std::size_t> widths;
  std::vector<int> ids;
  std::size_t total = 0;
  for (Var p : parts) {
    if (&tape_of(p) != &t) throw ContractError("operands recorded on different tapes");
    const Tensor& v = p.value();
    if (v.rows() != n) {
      throw DimensionError("concat_cols: row counts differ, " + shape_string(parts.front().value().shape()) +
                           " vs " + shape_string(v.shape()));
    }
    widths.push_back(v.cols());
    ids.push_back(p.id);
    total += v.cols();
  }
  Tensor out({n, total});
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < widths[k]; ++j) out(i, offset + j) = v(i, j);
    }
    offset += widths[k];
  }
  return t.push("concat_cols", std::move(out), ids,
                [ids, widths, n, total](const Tensor& g, const Tensor&, GradSink& sink) {
                  std::size_t offset = 0;
                  for (std::size_t k = 0; k < ids.size(); ++k) {
                    if (Tensor* gk = sink(ids[k])) {
                      for (std::size_t i = 0; i < n; ++i) {
                        for (std::size_t j = 0; j < widths[k]; ++j) {
                          (*gk)(i, j) += g[i * total + offset + j];
                        }
                      }
                    }
                    offset += widths[k];
                  }
                });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_rows of nothing");
  Tape& t = tape_of(parts.front());
  const std::size_t c = parts.front().value().cols();
  std::vector<int> ids;
  std::vector<double> data;
  std::size_t rows = 0;
  for (Var p : parts) {
    if (&tape_of(p) != &t) throw ContractError("operands recorded on different tapes");
    const Tensor& v = p.value();
    if (v.cols() != c) {
      throw DimensionError("concat_rows: column counts differ, " +
                           shape_string(parts.front().value().shape()) + " vs " + shape_string(v.shape()));
    }
    ids.push_back(p.id);
    rows += v.rows();
    data.insert(data.end(), v.data().begin(), v.data().end());
  }
  return t.push("concat_rows", Tensor({rows, c}, std::move(data)), ids,
                [ids](const Tensor& g, const Tensor&, GradSink& sink) {
                  std::size_t offset = 0;
                  for (int id : ids) {
                    Tensor* gk = sink(id);
                    const std::size_t count = sink.shape_size_of(id);
                    if (gk) {
                      for (std::size_t i = 0; i < count; ++i) (*gk)[i] += g[offset + i];
                    }
                    offset += count;
                  }
                });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  const std::size_t c = x.cols();
  if (count == 0 || begin + count > x.rows()) {
    throw DimensionError("slice_rows out of range for " + shape_string(x.shape()));
  }
  std::vector<double> data(x.data().begin() + begin * c, x.data().begin() + (begin + count) * c);
  const int ia = a.id;
  return t.push("slice_rows", Tensor({count, c}, std::move(data)), {ia},
                [ia, begin, c](const Tensor& g, const Tensor&, GradSink& sink) {
                  if (Tensor* ga = sink(ia)) {
                    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[begin * c + i] += g[i];
                  }
                });
}

Var gather_rows(Var a, const std::vector<int>& index) {
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  const std::size_t n = x.rows(), c = x.cols();
  if (index.empty()) throw ContractError("gather_rows with empty index");
  Tensor out({index.size(), c});
  for (std::size_t r = 0; r < index.size(); ++r) {
    const int src = index[r];
    if (src < 0 || static_cast<std::size_t>(src) >= n) throw ContractError("gather_rows index out of range");
    std::copy_n(x.data().begin() + src * c, c, out.data().begin() + r * c);
  }
  const int ia = a.id;
  return t.push("gather_rows", std::move(out), {ia},
                [ia, index, c](const Tensor& g, const Tensor&, GradSink& sink) {
                  if (Tensor* ga = sink(ia)) {
                    for (std::size_t r = 0; r < index.size(); ++r) {
                      for (std::size_t j = 0; j < c; ++j) (*ga)[index[r] * c + j] += g[r * c + j];
                    }
                  }
                });
}

Var column(Var a, std::size_t col) {
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  const std::size_t n = x.rows(), c = x.cols();
  if (col >= c) throw DimensionError("column index out of range for " + shape_string(x.shape()));
  Tensor out({n, 1});
  for (std::size_t i = 0; i < n; ++i) out[i] = x(i, col);
  const int ia = a.id;
  return t.push("column", std::move(out), {ia},
                [ia, n, c, col](const Tensor& g, const Tensor&, GradSink& sink) {
                  if (Tensor* ga = sink(ia)) {
                    for (std::size_t i = 0; i < n; ++i) (*ga)[i * c + col] += g[i];
                  }
                });
}

Var scale_rows(Var a, Var factors) {
  Tape& t = same_tape(a, factors);
  const Tensor& x = a.value();
  const Tensor& f = factors.value();
  const std::size_t n = x.rows(), c = x.cols();
  if (f.size() != n) {
    throw DimensionError("scale_rows: factors " + shape_string(f.shape()) + " for " +
                         shape_string(x.shape()));
  }
  Tensor out = x;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) out(i, j) *= f[i];
  }
  const int ia = a.id, ifac = factors.id;
  return t.push("scale_rows", std::move(out), {ia, ifac},
                [&t, ia, ifac, n, c](const Tensor& g, const Tensor&, GradSink& sink) {
                  if (Tensor* ga = sink(ia)) {
                    const Tensor& f = t.value(ifac);
                    for (std::size_t i = 0; i < n; ++i) {
                      for (std::size_t j = 0; j < c; ++j) (*ga)[i * c + j] += g[i * c + j] * f[i];
                    }
                  }
                  if (Tensor* gf = sink(ifac)) {
                    const Tensor& x = t.value(ia);
                    for (std::size_t i = 0; i < n; ++i) {
                      double s = 0.0;
                      for (std::size_t j = 0; j < c; ++j) s += g[i * c + j] * x[i * c + j];
                      (*gf)[i] += s;
                    }
                  }
                });
}

Var segment_sum(Var a, const std::vector<int>& segment, std::size_t segments) {
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  const std::size_t rows = x.rows(), c = x.cols();
  require_segments("segment_sum", segment, rows, segments);
  Tensor out({segments, c});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < c; ++j) out[segment[r] * c + j] += x[r * c + j];
  }
  const int ia = a.id;
  return t.push("segment_sum", std::move(out), {ia},
                [ia, segment, c](const Tensor& g, const Tensor&, GradSink& sink) {
                  if (Tensor* ga = sink(ia)) {
                    for (std::size_t r = 0; r < segment.size(); ++r) {
                      for (std::size_t j = 0; j < c; ++j) (*ga)[r * c + j] += g[segment[r] * c + j];
                    }
                  }
                });
}

Var segment_softmax(Var e, const std::vector<int>& segment, std::size_t segments) {
  Tape& t = tape_of(e);
  const Tensor& x = e.value();
  require_segments("segment_softmax", segment, x.size(), segments);
  std::vector<double> max(segments, -std::numeric_limits<double>::infinity());
  for (std::size_t r = 0; r < x.size(); ++r) max[segment[r]] = std::max(max[segment[r]], x[r]);
  Tensor out(x.shape());
  std::vector<double> total(segments, 0.0);
  for (std::size_t r = 0; r < x.size(); ++r) {
    out[r] = std::exp(x[r] - max[segment[r]]);
    total[segment[r]] += out[r];
  }
  for (std::size_t r = 0; r < x.size(); ++r) out[r] /= total[segment[r]];
  const int ie = e.id;
  return t.push("segment_softmax", std::move(out), {ie},
                [ie, segment, segments](const Tensor& g, const Tensor& y, GradSink& sink) {
                  if (Tensor* ge = sink(ie)) {
                    std::vector<double> dot(segments, 0.0);
                    for (std::size_t r = 0; r < y.size(); ++r) dot[segment[r]] += g[r] * y[r];
                    for (std::size_t r = 0; r < y.size(); ++r) {
                      (*ge)[r] += y[r] * (g[r] - dot[segment[r]]);
                    }
                  }
                });
}

Var row_outer(Var p, Var q) {
  Tape& t = same_tape(p, q);
  const Tensor& a = p.value();
  const Tensor& b = q.value();
  const std::size_t n = a.rows(), da = a.cols(), db = b.cols();
  if (b.rows() != n) {
    throw DimensionError("row_outer: row counts differ, " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  Tensor out({n, da * db});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < da; ++i) {
      for (std::size_t j = 0; j < db; ++j) out(r, i * db + j) = a(r, i) * b(r, j);
    }
  }
  const int ip = p.id, iq = q.id;
  return t.push("row_outer", std::move(out), {ip, iq},
                [&t, ip, iq, n, da, db](const Tensor& g, const Tensor&, GradSink& sink) {
                  const Tensor& a = t.value(ip);
                  const Tensor& b = t.value(iq);
                  Tensor* ga = sink(ip);
                  Tensor* gb = sink(iq);
                  for (std::size_t r = 0; r < n; ++r) {
                    for (std::size_t i = 0; i < da; ++i) {
                      for (std::size_t j = 0; j < db; ++j) {
                        const double gv = g[r * da * db + i * db + j];
                        if (ga) (*ga)(r, i) += gv * b(r, j);
                        if (gb) (*gb)(r, j) += gv * a(r, i);
                      }
                    }
                  }
                });
}

Var broadcast_rows(Var row, std::size_t rows) {
  Tape& t = tape_of(row);
  const Tensor& r = row.value();
  const std::size_t c = r.size();
  Tensor out({rows, c});
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < c; ++j) out(i, j) = r[j];
  }
  const int ir = row.id;
  return t.push("broadcast_rows", std::move(out), {ir},
                [ir, rows, c](const Tensor& g, const Tensor&, GradSink& sink) {
                  if (Tensor* gr = sink(ir)) {
                    for (std::size_t i = 0; i < rows; ++i) {
                      for (std::size_t j = 0; j < c; ++j) (*gr)[j] += g[i * c + j];
                    }
                  }
                });
}

namespace {

void softmax_rows_inplace(Tensor& out, const Tensor& x, const std::vector<std::vector<bool>>* mask) {
  const std::size_t n = x.rows(), c = x.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) {
      if (!mask || (*mask)[i][j]) mx = std::max(mx, x(i, j));
    }
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (!mask || (*mask)[i][j]) {
        out(i, j) = std::exp(x(i, j) - mx);
        total += out(i, j);
      } else {
        out(i, j) = 0.0;
      }
    }
    if (total > 0.0) {
      for (std::size_t j = 0; j < c; ++j) out(i, j) /= total;
    }
  }
}

void softmax_rows_backward(const Tensor& g, const Tensor& y, Tensor& gx) {
  const std::size_t n = y.rows(), c = y.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < c; ++j) dot += g(i, j) * y(i, j);
    for (std::size_t j = 0; j < c; ++j) gx(i, j) += y(i, j) * (g(i, j) - dot);
  }
}

}  // namespace

Var row_masked_softmax(Var scores, const std::vector<std::vector<bool>>& mask) {
  Tape& t = tape_of(scores);
  const Tensor& x = scores.value();
  if (mask.size() != x.rows()) throw DimensionError("row_masked_softmax: mask rows differ");
  for (const auto& row : mask) {
    if (row.size() != x.cols()) throw DimensionError("row_masked_softmax: mask columns differ");
  }
  Tensor out(x.shape());
  softmax_rows_inplace(out, x, &mask);
  const int is = scores.id;
  // Masked-out entries have y == 0, so the generic softmax rule gives them zero gradient.
  return t.push("row_masked_softmax", std::move(out), {is},
                [is](const Tensor& g, const Tensor& y, GradSink& sink) {
                  if (Tensor* gs = sink(is)) softmax_rows_backward(g, y, *gs);
                });
}

Var row_softmax(Var a) {
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  Tensor out(x.shape());
  softmax_rows_inplace(out, x, nullptr);
  const int ia = a.id;
  return t.push("row_softmax", std::move(out), {ia},
                [ia](const Tensor& g, const Tensor& y, GradSink& sink) {
                  if (Tensor* ga = sink(ia)) softmax_rows_backward(g, y, *ga);
                });
}

MaskedSoftmax masked_softmax(Var scores, const std::vector<bool>& mask) {
  const Tensor& x = scores.value();
  if (mask.size() != x.size()) {
    throw DimensionError("masked_softmax: " + std::to_string(mask.size()) + " mask entries for " +
                         shape_string(x.shape()));
  }
  const bool any = std::find(mask.begin(), mask.end(), true) != mask.end();
  Var row = reshape(scores, {1, x.size()});
  Var probs = row_masked_softmax(row, {mask});
  return MaskedSoftmax{reshape(probs, x.shape()), !any};
}

Var mean_rows(Var a) {
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  const std::size_t n = x.rows(), c = x.cols();
  Tensor out({1, c});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j] += x(i, j);
  }
  for (auto& v : out.data()) v /= static_cast<double>(n);
  const int ia = a.id;
  return t.push("mean_rows", std::move(out), {ia},
                [ia, n, c](const Tensor& g, const Tensor&, GradSink& sink) {
                  if (Tensor* ga = sink(ia)) {
                    for (std::size_t i = 0; i < n; ++i) {
                      for (std::size_t j = 0; j < c; ++j) (*ga)[i * c + j] += g[j] / static_cast<double>(n);
                    }
                  }
                });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const int ia = a.id;
  return t.push("sum", Tensor::scalar(s), {ia},
                [ia](const Tensor& g, const Tensor&, GradSink& sink) {
                  if (Tensor* ga = sink(ia)) {
                    for (auto& v : ga->data()) v += g[0];
                  }
                });
}

Var nll_clamped(Var probs, const std::vector<int>& labels) {
  Tape& t = tape_of(probs);
  const Tensor& p = probs.value();
  const std::size_t n = p.rows(), c = p.cols();
  if (labels.size() != n) {
    throw DimensionError("nll: " + std::to_string(labels.size()) + " labels for " + shape_string(p.shape()));
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) throw ContractError("nll: label out of range");
    loss -= std::log(std::max(p(i, labels[i]), kLogClamp));
  }
  const int ip = probs.id;
  return t.push("nll", Tensor::scalar(loss), {ip},
                [&t, ip, labels, c](const Tensor& g, const Tensor&, GradSink& sink) {
                  if (Tensor* gp = sink(ip)) {
                    const Tensor& p = t.value(ip);
                    for (std::size_t i = 0; i < labels.size(); ++i) {
                      const double v = p(i, labels[i]);
                      if (v > kLogClamp) (*gp)[i * c + labels[i]] -= g[0] / v;
                    }
                  }
                });
}

}  // namespace mkg
