#pragma once

#include <vector>

#include "ftforge/params.hpp"
#include "ftforge/regularization.hpp"
#include "ftforge/tensor.hpp"

namespace ftforge {

// Saved activations of one GRU transition, enough to run the backward pass.
struct GruStepCache {
  Tensor x, h_prev;
  Tensor z, r, c;
  Tensor rh;  // r . h_prev
  Tensor h;
};

// h_new = (1 - z) . h_prev + z . c, gates per the update/reset GRU. Masks are
// looked up from `masks` per weight matrix; biases are never masked.
Tensor gru_step(const ParamBundle& params, const GruParams& g, RegMode mode,
                const MaskTable& masks, const Tensor& x, const Tensor& h_prev,
                GruStepCache* cache);

// Accumulates parameter gradients into `grads` and input gradients into
// *dx / *dh_prev (both optional, both accumulated onto).
void gru_step_backward(const ParamBundle& params, const GruParams& g, RegMode mode,
                       const MaskTable& masks, const GruStepCache& cache,
                       const Tensor& dh, std::vector<Tensor>& grads,
                       Tensor* dx, Tensor* dh_prev);

// Embedding row for one token, with word-level dropout: the vocab-sized mask
// entry of the token scales (or zeroes) the row. Under tuneout a dropped
// token falls back to the prior's row.
Tensor embed_lookup(const ParamBundle& params, int embed_idx, int token,
                    RegMode mode, const MaskTable& masks);
void embed_lookup_backward(const ParamBundle& params, int embed_idx, int token,
                           RegMode mode, const MaskTable& masks, const Tensor& dv,
                           std::vector<Tensor>& grads);

Tensor output_logits(const ParamBundle& params, const ParamLayout& l, RegMode mode,
                     const MaskTable& masks, const Tensor& h);

struct EncodeCache {
  std::vector<GruStepCache> steps;
};

// Runs the encoder over the raw source tokens (no sentinels) from a zero
// initial state. An empty source yields the zero vector.
Tensor encode(const ParamBundle& params, const ParamLayout& l, RegMode mode,
              const MaskTable& masks, const std::vector<int>& src,
              EncodeCache* cache);

// Teacher-forced decoding loss: the decoder starts from the encoder's final
// hidden state, consumes <s>, tgt[0..m-1] and is scored on predicting
// tgt[0..m-1] followed by </s> (m + 1 cross-entropy terms, summed). When
// `grads` is non-null the full backward pass accumulates into it.
double decode_train(const ParamBundle& params, const ParamLayout& l, RegMode mode,
                    const MaskTable& masks, const std::vector<int>& src,
                    const std::vector<int>& tgt, std::vector<Tensor>* grads);

// Greedy argmax decoding with all regularization off; stops at </s> or after
// max_decode_len emitted tokens. Callers holding tuneout parameters must pass
// materialized effective parameters.
std::vector<int> greedy_decode(const ParamBundle& params, const std::vector<int>& src);

}  // namespace ftforge
