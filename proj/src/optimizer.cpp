#include "ftforge/optimizer.hpp"

#include <cmath>

#include "ftforge/common.hpp"

namespace ftforge {

std::string opt_kind_name(OptKind k) {
  switch (k) {
    case OptKind::sgd: return "sgd";
    case OptKind::adam: return "adam";
  }
  throw ConfigError("bad OptKind value");
}

OptKind opt_kind_from_name(std::string_view s) {
  if (s == "sgd") return OptKind::sgd;
  if (s == "adam") return OptKind::adam;
  throw ConfigError("unknown optimizer kind: " + std::string(s));
}

void OptimizerState::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr))
    throw ConfigError("learning rate must be finite and positive, got " + dtoa17(lr));
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must be in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("adam eps must be positive");
  if (step_count < 0) throw ConfigError("step_count must be non-negative");
}

double clip_gradients(std::vector<Tensor>& grads, double clip) {
  double sq = 0.0;
  for (const Tensor& g : grads) sq += g.squared_norm();
  const double norm = std::sqrt(sq);
  if (clip <= 0.0 || norm <= clip) return norm;
  const double scale = clip / norm;
  for (Tensor& g : grads) {
    for (double& v : g.flat()) v *= scale;
  }
  return norm;
}

void apply_update(ParamBundle& params, const std::vector<Tensor>& grads,
                  OptimizerState& state) {
  state.validate();
  if (static_cast<int>(grads.size()) != params.count())
    throw DimensionError("gradient list has " + std::to_string(grads.size()) +
                         " tensors, parameters have " + std::to_string(params.count()));
  for (int i = 0; i < params.count(); ++i) {
    if (!grads[i].same_shape(params.trainable(i)))
      throw DimensionError("gradient shape " + grads[i].shape_str() + " mismatches " +
                           params.name(i) + " " + params.trainable(i).shape_str());
    if (!grads[i].all_finite())
      throw NumericError("non-finite gradient for " + params.name(i));
  }

  if (state.kind == OptKind::sgd) {
    state.step_count += 1;
    for (int i = 0; i < params.count(); ++i)
      params.trainable(i).add_scaled(grads[i], -state.lr);
    return;
  }

  if (state.m.empty()) {
    state.m = params.zero_like_trainable();
    state.v = params.zero_like_trainable();
  }
  if (state.m.size() != grads.size() || state.v.size() != grads.size())
    throw DimensionError("adam moment buffers mismatch gradient list");

  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (int i = 0; i < params.count(); ++i) {
    auto gm = grads[i].flat();
    auto mm = state.m[i].flat();
    auto vv = state.v[i].flat();
    auto w = params.trainable(i).flat();
    for (std::size_t j = 0; j < gm.size(); ++j) {
      const double g = gm[j];
      mm[j] = state.beta1 * mm[j] + (1.0 - state.beta1) * g;
      vv[j] = state.beta2 * vv[j] + (1.0 - state.beta2) * g * g;
      const double mhat = mm[j] / bc1;
      const double vhat = vv[j] / bc2;
      w[j] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

}  // namespace ftforge
