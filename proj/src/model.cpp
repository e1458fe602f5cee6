#include "ftforge/model.hpp"

#include <utility>

#include "ftforge/common.hpp"

namespace ftforge {

namespace {

// Effective bias vector. Tuneout reparametrizes biases as prior + delta but
// never masks them; the gradient lands on the trainable tensor either way.
Tensor bias_of(const ParamBundle& p, int idx, RegMode mode) {
  if (mode == RegMode::tuneout) {
    Tensor b = p.prior(idx);
    b.add_scaled(p.delta(idx), 1.0);
    return b;
  }
  return p.live(idx);
}

void check_token(const ParamBundle& p, int token) {
  if (token < 0 || token >= p.config().vocab_size)
    throw VocabError("token id " + std::to_string(token) + " outside vocabulary of size " +
                     std::to_string(p.config().vocab_size));
}

double embed_scale(const MaskTable& masks, int embed_idx, int token) {
  const Tensor* m = masks.mask(embed_idx);
  return m ? m->flat()[static_cast<std::size_t>(token)] : 1.0;
}

}  // namespace

Tensor gru_step(const ParamBundle& params, const GruParams& g, RegMode mode,
                const MaskTable& masks, const Tensor& x, const Tensor& h_prev,
                GruStepCache* cache) {
  auto apply = [&](int idx, const Tensor& in) {
    return apply_weight_forward(params, idx, mode, masks.mask(idx), in);
  };
  Tensor az = apply(g.w_z, x);
  az.add_scaled(apply(g.u_z, h_prev), 1.0);
  az.add_scaled(bias_of(params, g.b_z, mode), 1.0);
  Tensor z = sigmoid(az);

  Tensor ar = apply(g.w_r, x);
  ar.add_scaled(apply(g.u_r, h_prev), 1.0);
  ar.add_scaled(bias_of(params, g.b_r, mode), 1.0);
  Tensor r = sigmoid(ar);

  Tensor rh = hadamard(r, h_prev);
  Tensor ah = apply(g.w_h, x);
  ah.add_scaled(apply(g.u_h, rh), 1.0);
  ah.add_scaled(bias_of(params, g.b_h, mode), 1.0);
  Tensor c = tanh_op(ah);

  Tensor h(h_prev.rows(), 1);
  for (std::size_t i = 0; i < h.size(); ++i) {
    h.flat()[i] = (1.0 - z.flat()[i]) * h_prev.flat()[i] + z.flat()[i] * c.flat()[i];
  }

  if (cache) {
    cache->x = x;
    cache->h_prev = h_prev;
    cache->z = std::move(z);
    cache->r = std::move(r);
    cache->c = std::move(c);
    cache->rh = std::move(rh);
    cache->h = h;
  }
  return h;
}

void gru_step_backward(const ParamBundle& params, const GruParams& g, RegMode mode,
                       const MaskTable& masks, const GruStepCache& cache,
                       const Tensor& dh, std::vector<Tensor>& grads,
                       Tensor* dx, Tensor* dh_prev) {
  auto apply_bwd = [&](int idx, const Tensor& in, const Tensor& d_out, Tensor* din) {
    apply_weight_backward(params, idx, mode, masks.mask(idx), in, d_out, grads, din);
  };
  const int n = cache.h_prev.rows();

  Tensor dz(n, 1), dc(n, 1);
  for (int i = 0; i < n; ++i) {
    const double d = dh.flat()[i];
    dz.flat()[i] = d * (cache.c.flat()[i] - cache.h_prev.flat()[i]);
    dc.flat()[i] = d * cache.z.flat()[i];
    if (dh_prev) dh_prev->flat()[i] += d * (1.0 - cache.z.flat()[i]);
  }

  Tensor dah = tanh_backward(cache.c, dc);
  Tensor drh(n, 1);
  apply_bwd(g.w_h, cache.x, dah, dx);
  apply_bwd(g.u_h, cache.rh, dah, &drh);
  grads[g.b_h].add_scaled(dah, 1.0);

  Tensor dr(n, 1);
  hadamard_backward(cache.r, cache.h_prev, drh, &dr, dh_prev);

  Tensor dar = sigmoid_backward(cache.r, dr);
  apply_bwd(g.w_r, cache.x, dar, dx);
  apply_bwd(g.u_r, cache.h_prev, dar, dh_prev);
  grads[g.b_r].add_scaled(dar, 1.0);

  Tensor daz = sigmoid_backward(cache.z, dz);
  apply_bwd(g.w_z, cache.x, daz, dx);
  apply_bwd(g.u_z, cache.h_prev, daz, dh_prev);
  grads[g.b_z].add_scaled(daz, 1.0);
}

Tensor embed_lookup(const ParamBundle& params, int embed_idx, int token,
                    RegMode mode, const MaskTable& masks) {
  check_token(params, token);
  const int e = params.config().embed_dim;
  Tensor v(e, 1);
  switch (mode) {
    case RegMode::off:
      for (int j = 0; j < e; ++j) v.flat()[j] = params.live(embed_idx).at(token, j);
      break;
    case RegMode::dropout: {
      const double s = embed_scale(masks, embed_idx, token);
      for (int j = 0; j < e; ++j) v.flat()[j] = s * params.live(embed_idx).at(token, j);
      break;
    }
    case RegMode::tuneout: {
      const double s = embed_scale(masks, embed_idx, token);
      for (int j = 0; j < e; ++j) {
        v.flat()[j] = params.prior(embed_idx).at(token, j) +
                      s * params.delta(embed_idx).at(token, j);
      }
      break;
    }
  }
  return v;
}

void embed_lookup_backward(const ParamBundle& params, int embed_idx, int token,
                           RegMode mode, const MaskTable& masks, const Tensor& dv,
                           std::vector<Tensor>& grads) {
  check_token(params, token);
  const int e = params.config().embed_dim;
  const double s = mode == RegMode::off ? 1.0 : embed_scale(masks, embed_idx, token);
  Tensor& ge = grads[embed_idx];
  for (int j = 0; j < e; ++j) ge.at(token, j) += s * dv.flat()[j];
}

Tensor output_logits(const ParamBundle& params, const ParamLayout& l, RegMode mode,
                     const MaskTable& masks, const Tensor& h) {
  Tensor logits = apply_weight_forward(params, l.w_out, mode, masks.mask(l.w_out), h);
  logits.add_scaled(bias_of(params, l.b_out, mode), 1.0);
  return logits;
}

Tensor encode(const ParamBundle& params, const ParamLayout& l, RegMode mode,
              const MaskTable& masks, const std::vector<int>& src,
              EncodeCache* cache) {
  Tensor h(params.config().hidden_dim, 1);
  if (cache) cache->steps.resize(src.size());
  for (std::size_t t = 0; t < src.size(); ++t) {
    Tensor x = embed_lookup(params, l.e_src, src[t], mode, masks);
    h = gru_step(params, l.enc, mode, masks, x, h,
                 cache ? &cache->steps[t] : nullptr);
  }
  return h;
}

double decode_train(const ParamBundle& params, const ParamLayout& l, RegMode mode,
                    const MaskTable& masks, const std::vector<int>& src,
                    const std::vector<int>& tgt, std::vector<Tensor>* grads) {
  EncodeCache enc_cache;
  Tensor h = encode(params, l, mode, masks, src, grads ? &enc_cache : nullptr);

  const std::size_t steps = tgt.size() + 1;
  auto input_at = [&](std::size_t t) { return t == 0 ? kBosId : tgt[t - 1]; };
  auto target_at = [&](std::size_t t) { return t < tgt.size() ? tgt[t] : kEosId; };

  double loss = 0.0;
  std::vector<GruStepCache> dec_steps(grads ? steps : 0);
  std::vector<Tensor> dlogits(grads ? steps : 0);

  for (std::size_t t = 0; t < steps; ++t) {
    Tensor x = embed_lookup(params, l.e_tgt, input_at(t), mode, masks);
    h = gru_step(params, l.dec, mode, masks, x, h, grads ? &dec_steps[t] : nullptr);
    Tensor logits = output_logits(params, l, mode, masks, h);
    check_token(params, target_at(t));
    CrossEntropyResult ce = softmax_cross_entropy(logits, target_at(t));
    loss += ce.loss;
    if (grads) dlogits[t] = std::move(ce.dlogits);
  }
  if (!grads) return loss;

  const int hidden = params.config().hidden_dim;
  const int embed = params.config().embed_dim;
  Tensor dh_next(hidden, 1);
  for (std::size_t ti = steps; ti-- > 0;) {
    Tensor dh = dh_next;
    apply_weight_backward(params, l.w_out, mode, masks.mask(l.w_out),
                          dec_steps[ti].h, dlogits[ti], *grads, &dh);
    (*grads)[l.b_out].add_scaled(dlogits[ti], 1.0);

    Tensor dx(embed, 1);
    Tensor dh_prev(hidden, 1);
    gru_step_backward(params, l.dec, mode, masks, dec_steps[ti], dh, *grads,
                      &dx, &dh_prev);
    embed_lookup_backward(params, l.e_tgt, input_at(ti), mode, masks, dx, *grads);
    dh_next = std::move(dh_prev);
  }

  for (std::size_t ti = src.size(); ti-- > 0;) {
    Tensor dx(embed, 1);
    Tensor dh_prev(hidden, 1);
    gru_step_backward(params, l.enc, mode, masks, enc_cache.steps[ti], dh_next,
                      *grads, &dx, &dh_prev);
    embed_lookup_backward(params, l.e_src, src[ti], mode, masks, dx, *grads);
    dh_next = std::move(dh_prev);
  }
  return loss;
}

std::vector<int> greedy_decode(const ParamBundle& params, const std::vector<int>& src) {
  const ParamLayout l = param_layout(params);
  const MaskTable no_masks;
  Tensor h = encode(params, l, RegMode::off, no_masks, src, nullptr);

  std::vector<int> out;
  int input = kBosId;
  while (static_cast<int>(out.size()) < params.config().max_decode_len) {
    Tensor x = embed_lookup(params, l.e_tgt, input, RegMode::off, no_masks);
    h = gru_step(params, l.dec, RegMode::off, no_masks, x, h, nullptr);
    Tensor logits = output_logits(params, l, RegMode::off, no_masks, h);
    const int next = argmax(logits);
    if (next == kEosId) break;
    out.push_back(next);
    input = next;
  }
  return out;
}

}  // namespace ftforge
