#include "mkg/encoder.hpp"

#include "mkg/errors.hpp"
#include "mkg/signals.hpp"

namespace mkg {

Var require_var(const VarMap& vars, const std::string& name) {
  auto it = vars.find(name);
  if (it == vars.end()) throw ContractError("parameter not registered: " + name);
  return it->second;
}

FusionVars FusionVars::from(const VarMap& vars) {
  return {require_var(vars, "fusion.W_T"), require_var(vars, "fusion.V"), require_var(vars, "fusion.b")};
}

Var fuse(Var indicators, Var sentiment, const FusionVars& params) {
  const Tensor& p = indicators.value();
  const Tensor& q = sentiment.value();
  const Tensor& w = params.tensor.value();
  if (p.cols() != kIndicatorWidth || q.cols() != kSentimentWidth || p.rows() != q.rows()) {
    throw DimensionError("fuse: expected N x 5 and N x 3 inputs, got " + shape_string(p.shape()) +
                         " and " + shape_string(q.shape()));
  }
  if (w.rank() != 3 || w.shape()[0] != kIndicatorWidth || w.shape()[1] != kSentimentWidth) {
    throw DimensionError("fuse: tensor must be 5 x 3 x M, got " + shape_string(w.shape()));
  }
  const std::size_t slices = w.shape()[2];
  const Tensor& v = params.linear.value();
  if (v.rank() != 2 || v.rows() != slices || v.cols() != kIndicatorWidth + kSentimentWidth) {
    throw DimensionError("fuse: linear map must be M x 8, got " + shape_string(v.shape()));
  }
  if (params.bias.value().size() != slices) {
    throw DimensionError("fuse: bias must have M entries, got " + shape_string(params.bias.value().shape()));
  }
  Var bilinear = matmul(row_outer(indicators, sentiment),
                        reshape(params.tensor, {kIndicatorWidth * kSentimentWidth, slices}));
  Var linear = matmul_nt(concat_cols({indicators, sentiment}), params.linear);
  return tanh(add_row(bilinear + linear, params.bias));
}

GruVars GruVars::from(const VarMap& vars) {
  return {require_var(vars, "gru.W_z"), require_var(vars, "gru.U_z"), require_var(vars, "gru.b_z"),
          require_var(vars, "gru.W_r"), require_var(vars, "gru.U_r"), require_var(vars, "gru.b_r"),
          require_var(vars, "gru.W_h"), require_var(vars, "gru.U_h"), require_var(vars, "gru.b_h")};
}

std::size_t GruVars::hidden() const { return input_update.value().rows(); }

Var encode_sequence(const std::vector<Var>& steps, const GruVars& gru) {
  if (steps.empty()) throw ContractError("encode_sequence: empty input sequence");
  auto gate = [](Var x, Var w, Var h, Var u, Var b) {
    Var pre = matmul_nt(x, w);
    if (h.valid()) pre = pre + matmul_nt(h, u);
    return add_row(pre, b);
  };

  Var state;  // invalid = zero state
  for (Var x : steps) {
    Var update = sigmoid(gate(x, gru.input_update, state, gru.recurrent_update, gru.bias_update));
    Var candidate;
    if (state.valid()) {
      Var reset = sigmoid(gate(x, gru.input_reset, state, gru.recurrent_reset, gru.bias_reset));
      candidate = tanh(gate(x, gru.input_candidate, hadamard(reset, state), gru.recurrent_candidate,
                            gru.bias_candidate));
      state = hadamard(one_minus(update), state) + hadamard(update, candidate);
    } else {
      // From the zero state the reset gate has nothing to act on.
      candidate = tanh(gate(x, gru.input_candidate, Var{}, gru.recurrent_candidate, gru.bias_candidate));
      state = hadamard(update, candidate);
    }
  }
  return state;
}

}  // namespace mkg
