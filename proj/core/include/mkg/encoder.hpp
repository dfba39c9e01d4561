#pragma once

#include <map>
#include <string>
#include <vector>

#include "mkg/numerics/tape.hpp"

namespace mkg {

/// Parameters recorded on a tape, by registry name.
using VarMap = std::map<std::string, Var>;

/// Looks up `name`, throwing ContractError when it is not registered.
Var require_var(const VarMap& vars, const std::string& name);

/// Neural tensor fusion of technical indicators and sentiment, shared by all stocks.
struct FusionVars {
  Var tensor;  // [5 x 3 x M]
  Var linear;  // [M x 8]
  Var bias;    // [M]

  static FusionVars from(const VarMap& vars);
};

/// x_k = tanh(p^T W[k] q + (V [p || q] + b)_k), one row per stock.
Var fuse(Var indicators, Var sentiment, const FusionVars& params);

struct GruVars {
  Var input_update, recurrent_update, bias_update;  // W_z [F x M], U_z [F x F], b_z [F]
  Var input_reset, recurrent_reset, bias_reset;
  Var input_candidate, recurrent_candidate, bias_candidate;

  static GruVars from(const VarMap& vars);
  std::size_t hidden() const;
};

/// Runs a GRU from a zero state over `steps` (each N x M, oldest first) and
/// returns the final hidden state (N x F).
Var encode_sequence(const std::vector<Var>& steps, const GruVars& params);

}  // namespace mkg
