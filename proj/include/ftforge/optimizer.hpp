#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ftforge/params.hpp"
#include "ftforge/tensor.hpp"

namespace ftforge {

enum class OptKind { sgd, adam };

std::string opt_kind_name(OptKind k);
OptKind opt_kind_from_name(std::string_view s);

struct OptimizerState {
  OptKind kind = OptKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // global L2 cap; <= 0 disables clipping
  std::int64_t step_count = 0;
  std::vector<Tensor> m, v;  // adam moments, sized on first update

  void validate() const;
};

// Scales grads in place so their global L2 norm is at most `clip`; returns
// the pre-clip norm. clip <= 0 leaves the gradients untouched.
double clip_gradients(std::vector<Tensor>& grads, double clip);

// One optimizer step on the trainable tensors (delta under tuneout, live
// otherwise). Any non-finite gradient raises NumericError before any
// parameter or moment is mutated.
void apply_update(ParamBundle& params, const std::vector<Tensor>& grads,
                  OptimizerState& state);

}  // namespace ftforge
