#include "ftforge/regularization.hpp"

#include <cmath>

#include "ftforge/common.hpp"

namespace ftforge {

void RegConfig::validate() const {
  auto check_p = [](double p, const char* what) {
    if (!(p > 0.0 && p <= 1.0))
      throw ConfigError(std::string(what) + " must be in (0, 1], got " + dtoa17(p));
  };
  check_p(retain_word, "retain_word");
  check_p(retain_other, "retain_other");
  if (!(lambda_map_l2 >= 0.0) || !std::isfinite(lambda_map_l2))
    throw ConfigError("lambda_map_l2 must be finite and >= 0, got " + dtoa17(lambda_map_l2));
}

Tensor sample_mask(std::uint64_t seed, const MaskKey& key, int dim, double p) {
  if (!(p > 0.0 && p <= 1.0))
    throw ConfigError("mask keep probability must be in (0, 1], got " + dtoa17(p));
  if (dim < 1) throw ConfigError("mask dim must be positive");
  Rng rng(mix_seed({seed, hash_str("mask"), hash_str(key.matrix_name),
                    static_cast<std::uint64_t>(key.example_id),
                    static_cast<std::uint64_t>(key.epoch)}));
  Tensor m(dim, 1);
  const double scale = 1.0 / p;
  for (double& v : m.flat()) v = rng.uniform() < p ? scale : 0.0;
  return m;
}

MaskTable MaskTable::build(const ParamBundle& params, const RegConfig& reg,
                           std::int64_t example_id, std::int64_t epoch) {
  MaskTable t;
  if (reg.mode == RegMode::off) return t;
  reg.validate();
  t.masks_.resize(params.count());
  for (int i = 0; i < params.count(); ++i) {
    const int dim = params.mask_dim(i);
    if (dim == 0) continue;
    const double p = reg.retention_for(params.is_embedding(i));
    t.masks_[i] = sample_mask(reg.seed, {params.name(i), example_id, epoch}, dim, p);
  }
  return t;
}

const Tensor* MaskTable::mask(int param_idx) const {
  if (param_idx < 0 || static_cast<std::size_t>(param_idx) >= masks_.size()) return nullptr;
  const Tensor& m = masks_[param_idx];
  return m.size() == 0 ? nullptr : &m;
}

namespace {

Tensor masked(const Tensor* mask, const Tensor& h) {
  return mask ? hadamard(*mask, h) : h;
}

}  // namespace

Tensor apply_weight_forward(const ParamBundle& params, int idx, RegMode mode,
                            const Tensor* mask, const Tensor& h) {
  switch (mode) {
    case RegMode::off:
      return matmul(params.live(idx), h);
    case RegMode::dropout:
      return matmul(params.live(idx), masked(mask, h));
    case RegMode::tuneout: {
      if (!params.has_prior() || !params.has_delta())
        throw ConfigError("tuneout application requires prior and delta tensors");
      Tensor v = matmul(params.prior(idx), h);
      v.add_scaled(matmul(params.delta(idx), masked(mask, h)), 1.0);
      return v;
    }
  }
  throw ConfigError("bad RegMode value");
}

void apply_weight_backward(const ParamBundle& params, int idx, RegMode mode,
                           const Tensor* mask, const Tensor& h, const Tensor& d_out,
                           std::vector<Tensor>& grads, Tensor* dh) {
  switch (mode) {
    case RegMode::off:
      matmul_backward(params.live(idx), h, d_out, &grads[idx], dh);
      return;
    case RegMode::dropout: {
      const Tensor hm = masked(mask, h);
      if (!mask) {
        matmul_backward(params.live(idx), hm, d_out, &grads[idx], dh);
        return;
      }
      Tensor dhm(h.rows(), h.cols());
      matmul_backward(params.live(idx), hm, d_out, &grads[idx], &dhm);
      if (dh) dh->add_scaled(hadamard(*mask, dhm), 1.0);
      return;
    }
    case RegMode::tuneout: {
      const Tensor hm = masked(mask, h);
      // prior branch: no parameter gradient, input gradient flows unmasked
      matmul_backward(params.prior(idx), h, d_out, nullptr, dh);
      if (!mask) {
        matmul_backward(params.delta(idx), hm, d_out, &grads[idx], dh);
        return;
      }
      Tensor dhm(h.rows(), h.cols());
      matmul_backward(params.delta(idx), hm, d_out, &grads[idx], &dhm);
      if (dh) dh->add_scaled(hadamard(*mask, dhm), 1.0);
      return;
    }
  }
  throw ConfigError("bad RegMode value");
}

Tensor apply_weight(const ParamBundle& params, std::string_view name, const Tensor& h,
                    const RegConfig& reg, std::int64_t example_id, std::int64_t epoch) {
  const int idx = params.index(name);
  if (reg.mode == RegMode::off)
    return apply_weight_forward(params, idx, RegMode::off, nullptr, h);
  reg.validate();
  const double p = reg.retention_for(params.is_embedding(idx));
  const int dim = params.mask_dim(idx);
  if (dim == 0)  // bias: never masked
    return apply_weight_forward(params, idx, reg.mode, nullptr, h);
  const Tensor m =
      sample_mask(reg.seed, {std::string(name), example_id, epoch}, dim, p);
  return apply_weight_forward(params, idx, reg.mode, &m, h);
}

double map_l2_penalty(const ParamBundle& params, double lambda,
                      std::vector<Tensor>* grads) {
  if (lambda == 0.0) return 0.0;
  if (!(lambda > 0.0) || !std::isfinite(lambda))
    throw ConfigError("map_l2 lambda must be finite and >= 0, got " + dtoa17(lambda));
  if (!params.has_prior())
    throw ConfigError("map_l2 penalty requires a prior snapshot");
  double penalty = 0.0;
  for (int i = 0; i < params.count(); ++i) {
    const Tensor diff = sub(params.live(i), params.prior(i));
    penalty += diff.squared_norm();
    if (grads) (*grads)[i].add_scaled(diff, 2.0 * lambda);
  }
  return lambda * penalty;
}

ParamBundle effective_params(const ParamBundle& params, RegMode mode) {
  ParamBundle out = ParamBundle::create(params.config());
  if (mode == RegMode::tuneout) {
    if (!params.has_prior() || !params.has_delta())
      throw ConfigError("materializing tuneout params requires prior and delta");
    for (int i = 0; i < params.count(); ++i) {
      out.live(i) = params.prior(i);
      out.live(i).add_scaled(params.delta(i), 1.0);
    }
  } else {
    for (int i = 0; i < params.count(); ++i) out.live(i) = params.live(i);
  }
  return out;
}

}  // namespace ftforge
