#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "mkg/numerics/tape.hpp"
#include "mkg/numerics/tensor.hpp"

namespace mkg {

/// Named learnable tensors, ordered by name.
using ParamStore = std::map<std::string, Tensor>;

struct AdamState {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::map<std::string, Tensor> first_moment;
  std::map<std::string, Tensor> second_moment;
};

/// One bias-corrected Adam update, in place.
/// Parameter and gradient name sets must match exactly.
void adam_step(ParamStore& params, const Gradients& grads, AdamState& state);

}  // namespace mkg
