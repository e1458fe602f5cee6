#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ftforge/tensor.hpp"

namespace ftforge {

struct ModelConfig {
  int vocab_size = 0;
  int embed_dim = 32;
  int hidden_dim = 64;
  int max_decode_len = 32;

  void validate() const;
};

// How the fine-tuning interceptor treats every weight application.
enum class RegMode { off, dropout, tuneout };

std::string reg_mode_name(RegMode m);
RegMode reg_mode_from_name(std::string_view s);

// All named parameter tensors of the encoder-decoder, in a fixed canonical
// order (the order used by checkpoints and mask keying). Optionally carries a
// frozen prior snapshot and, for tuneout, per-tensor difference matrices.
class ParamBundle {
 public:
  ParamBundle() = default;

  static ParamBundle create(const ModelConfig& cfg);                 // zero-filled
  static ParamBundle init_random(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  int count() const { return static_cast<int>(live_.size()); }
  const std::string& name(int i) const;
  int index(std::string_view name) const;  // throws ConfigError when absent

  Tensor& live(int i) { return live_[i]; }
  const Tensor& live(int i) const { return live_[i]; }

  bool has_prior() const { return !prior_.empty(); }
  bool has_delta() const { return !delta_.empty(); }
  Tensor& prior(int i) { return prior_[i]; }
  const Tensor& prior(int i) const { return prior_[i]; }
  Tensor& delta(int i) { return delta_[i]; }
  const Tensor& delta(int i) const { return delta_[i]; }

  void snapshot_prior();      // prior := deep copy of live
  void init_delta_zero();     // delta := zeros; requires a prior
  void drop_prior_and_delta();

  // The tensor that receives gradient updates: delta when present, else live.
  Tensor& trainable(int i) { return has_delta() ? delta_[i] : live_[i]; }
  const Tensor& trainable(int i) const { return has_delta() ? delta_[i] : live_[i]; }

  bool is_bias(int i) const;
  bool is_embedding(int i) const;  // word-dropout sites: E_src, E_tgt
  // Input dimension of the weight application (mask length): vocab for
  // embeddings, cols for other matrices. Biases have no mask.
  int mask_dim(int i) const;

  std::vector<Tensor> zero_like_trainable() const;
  void check_finite(const char* where) const;

 private:
  ModelConfig cfg_;
  std::vector<std::string> names_;
  std::vector<Tensor> live_, prior_, delta_;
};

// Indices of one GRU cell's parameters inside a ParamBundle.
struct GruParams {
  int w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h;
};

struct ParamLayout {
  int e_src, e_tgt;
  GruParams enc, dec;
  int w_out, b_out;
};

// Fixed for all bundles with the same tensor count; cheap to call.
ParamLayout param_layout(const ParamBundle& params);

}  // namespace ftforge
