#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ftforge/params.hpp"
#include "ftforge/tensor.hpp"

namespace ftforge {

// Identifies one dropout mask: the same key always yields the same mask, so a
// mask is shared across all time steps of one example within one epoch and
// redrawn when either the example or the epoch changes.
struct MaskKey {
  std::string matrix_name;
  std::int64_t example_id = 0;
  std::int64_t epoch = 0;
};

struct RegConfig {
  RegMode mode = RegMode::off;
  double retain_word = 0.9;   // keep probability for embedding rows
  double retain_other = 0.8;  // keep probability for all other weight inputs
  double lambda_map_l2 = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  double retention_for(bool word_level) const {
    return word_level ? retain_word : retain_other;
  }
};

// dim x 1 vector with entries in {0, 1/p}: inverted scaling, so the masked
// product is unbiased and inference needs no rescaling.
Tensor sample_mask(std::uint64_t seed, const MaskKey& key, int dim, double p);

// All masks of one (example, epoch) pair. Empty table = identity masks.
class MaskTable {
 public:
  MaskTable() = default;

  static MaskTable build(const ParamBundle& params, const RegConfig& reg,
                         std::int64_t example_id, std::int64_t epoch);

  // nullptr means identity (bias tensors, or an empty table).
  const Tensor* mask(int param_idx) const;

 private:
  std::vector<Tensor> masks_;
};

// v = W h with the mode's mask placement:
//   off:     W h
//   dropout: W (m . h)
//   tuneout: prior h + delta (m . h)
// `mask` may be null for identity. Tuneout requires prior and delta.
Tensor apply_weight_forward(const ParamBundle& params, int idx, RegMode mode,
                            const Tensor* mask, const Tensor& h);

// Accumulates d(trainable[idx]) into grads[idx] and, when dh is non-null,
// d(h) into *dh. Must be called with the same h/mask as the forward pass.
void apply_weight_backward(const ParamBundle& params, int idx, RegMode mode,
                           const Tensor* mask, const Tensor& h, const Tensor& d_out,
                           std::vector<Tensor>& grads, Tensor* dh);

// One-shot convenience: samples the mask for (name, example_id, epoch) and
// applies it. RegMode off ignores the key entirely.
Tensor apply_weight(const ParamBundle& params, std::string_view name, const Tensor& h,
                    const RegConfig& reg, std::int64_t example_id, std::int64_t epoch);

// lambda * sum over all tensors (biases included) of |live - prior|_F^2.
// When grads is non-null, adds 2 * lambda * (live - prior) to each entry.
// lambda == 0 is a no-op even without a prior.
double map_l2_penalty(const ParamBundle& params, double lambda,
                      std::vector<Tensor>* grads);

// Parameters as used at inference: tuneout materializes live := prior + delta,
// the other modes copy live unchanged. The result carries no prior or delta.
ParamBundle effective_params(const ParamBundle& params, RegMode mode);

}  // namespace ftforge
