#pragma once

#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mkg/numerics/tensor.hpp"

namespace mkg {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor& value() const;
};

using Gradients = std::map<std::string, Tensor>;

/// Lazily allocated gradient accumulators handed to backward rules.
class GradSink {
 public:
  explicit GradSink(const Tape& tape, std::vector<Tensor>& grads) : tape_(tape), grads_(grads) {}
  /// Accumulator for node `id`, or nullptr when that node needs no gradient.
  Tensor* operator()(int id);
  std::size_t shape_size_of(int id) const;

 private:
  const Tape& tape_;
  std::vector<Tensor>& grads_;
};

/// Receives the gradient flowing into a node and that node's own output value.
using BackwardRule =
    std::function<void(const Tensor& upstream, const Tensor& output, GradSink& sink)>;

/// Append-only computation record for reverse-mode differentiation.
///
/// Every node's inputs precede it, so a reverse sweep over node ids visits
/// each node once after all of its consumers.
class Tape {
 public:
  explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  Var constant(Tensor value);
  Var parameter(const std::string& name, const Tensor& value);

  /// Gradient of a scalar root with respect to every registered parameter.
  /// Parameters that do not influence the root get zero tensors.
  Gradients backward(Var root);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  const Tensor& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  const std::string& tag(int id) const { return nodes_[id].tag; }
  const std::vector<int>& inputs(int id) const { return nodes_[id].inputs; }

  /// Records an operation result. `rule` is dropped when no input needs a gradient.
  Var push(std::string tag, Tensor value, std::vector<int> inputs, BackwardRule rule);

  /// Test hook: multiplies the upstream gradient of every `tag` node by `factor`
  /// before its backward rule runs.
  void inject_fault(std::string tag, double factor);

  /// Smallest distance of any recorded argument to a non-differentiable point
  /// (LeakyReLU kink, implicit-edge threshold).
  void note_kink(double distance);
  double kink_margin() const { return kink_margin_; }

 private:
  struct Node {
    std::string tag;
    Tensor value;
    std::vector<int> inputs;
    BackwardRule rule;
    bool requires_grad = false;
  };

  bool recording_;
  std::deque<Node> nodes_;  // stable references across push
  std::map<std::string, int> parameters_;
  std::optional<std::pair<std::string, double>> fault_;
  double kink_margin_ = std::numeric_limits<double>::infinity();
};

// ---- operations -----------------------------------------------------------
// All operate on rank-2 tensors unless noted.

Var matmul(Var a, Var b);      // a[m x k] * b[k x n]
Var matmul_nt(Var a, Var b);   // a[m x k] * b[n x k]^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var add_row(Var a, Var row);   // row broadcast over a's rows; row may be any shape of size cols
Var scale(Var a, double factor);
Var one_minus(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var leaky_relu(Var a, double slope);
Var reshape(Var a, Shape shape);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var gather_rows(Var a, const std::vector<int>& index);
Var column(Var a, std::size_t c);
Var scale_rows(Var a, Var factors);  // factors[n x 1]
Var segment_sum(Var a, const std::vector<int>& segment, std::size_t segments);
/// Softmax of e[E x 1] within groups sharing a segment id, max-subtracted.
Var segment_softmax(Var e, const std::vector<int>& segment, std::size_t segments);
/// Row `r` of an element-wise row outer product: p[r] (x) q[r], flattened row-major.
Var row_outer(Var p, Var q);
Var broadcast_rows(Var row, std::size_t rows);
/// Row-wise softmax restricted to mask entries; fully masked rows give zeros.
Var row_masked_softmax(Var scores, const std::vector<std::vector<bool>>& mask);
Var row_softmax(Var a);
Var mean_rows(Var a);
Var sum(Var a);
/// -sum_i ln(max(probs[i, label_i], 1e-12))
Var nll_clamped(Var probs, const std::vector<int>& labels);

struct MaskedSoftmax {
  Var probs;
  bool empty_support = false;
};

/// Softmax over masked-in entries of a score vector (any shape with n entries).
MaskedSoftmax masked_softmax(Var scores, const std::vector<bool>& mask);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }

}  // namespace mkg
