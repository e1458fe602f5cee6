#include "ftforge/params.hpp"

#include <cmath>

#include "ftforge/common.hpp"

namespace ftforge {

void ModelConfig::validate() const {
  if (vocab_size < 5)
    throw ConfigError("vocab_size must be >= 5 (4 reserved tokens + content), got " +
                      std::to_string(vocab_size));
  if (embed_dim < 1) throw ConfigError("embed_dim must be positive");
  if (hidden_dim < 1) throw ConfigError("hidden_dim must be positive");
  if (max_decode_len < 1) throw ConfigError("max_decode_len must be positive");
}

std::string reg_mode_name(RegMode m) {
  switch (m) {
    case RegMode::off: return "off";
    case RegMode::dropout: return "dropout";
    case RegMode::tuneout: return "tuneout";
  }
  throw ConfigError("bad RegMode value");
}

RegMode reg_mode_from_name(std::string_view s) {
  if (s == "off") return RegMode::off;
  if (s == "dropout") return RegMode::dropout;
  if (s == "tuneout") return RegMode::tuneout;
  throw ConfigError("unknown reg mode: " + std::string(s));
}

namespace {

struct TensorSpec {
  std::string name;
  int rows, cols;
};

std::vector<TensorSpec> tensor_specs(const ModelConfig& c) {
  const int v = c.vocab_size, e = c.embed_dim, h = c.hidden_dim;
  std::vector<TensorSpec> s;
  s.push_back({"E_src", v, e});
  s.push_back({"E_tgt", v, e});
  for (std::string p : {"enc", "dec"}) {
    for (std::string g : {"z", "r", "h"}) {
      s.push_back({p + "_W_" + g, h, e});
      s.push_back({p + "_U_" + g, h, h});
      s.push_back({p + "_b_" + g, h, 1});
    }
  }
  s.push_back({"W_out", v, h});
  s.push_back({"b_out", v, 1});
  return s;
}

}  // namespace

ParamBundle ParamBundle::create(const ModelConfig& cfg) {
  cfg.validate();
  ParamBundle p;
  p.cfg_ = cfg;
  for (const auto& spec : tensor_specs(cfg)) {
    p.names_.emplace_back(spec.name);
    p.live_.emplace_back(spec.rows, spec.cols);
  }
  return p;
}

ParamBundle ParamBundle::init_random(const ModelConfig& cfg, std::uint64_t seed) {
  ParamBundle p = create(cfg);
  for (int i = 0; i < p.count(); ++i) {
    Tensor& t = p.live_[i];
    if (p.is_bias(i)) continue;  // biases stay zero
    Rng rng(mix_seed({seed, hash_str("init"), hash_str(p.names_[i])}));
    double bound;
    if (p.is_embedding(i)) {
      bound = 0.08;
    } else {
      bound = std::sqrt(6.0 / (t.rows() + t.cols()));
    }
    for (double& v : t.flat()) v = rng.uniform(-bound, bound);
  }
  return p;
}

const std::string& ParamBundle::name(int i) const { return names_.at(i); }

int ParamBundle::index(std::string_view name) const {
  for (int i = 0; i < count(); ++i)
    if (names_[i] == name) return i;
  throw ConfigError("no parameter tensor named " + std::string(name));
}

void ParamBundle::snapshot_prior() { prior_ = live_; }

void ParamBundle::init_delta_zero() {
  if (!has_prior()) throw ConfigError("init_delta_zero requires a prior snapshot");
  delta_.clear();
  for (const Tensor& t : live_) delta_.emplace_back(t.rows(), t.cols());
}

void ParamBundle::drop_prior_and_delta() {
  prior_.clear();
  delta_.clear();
}

bool ParamBundle::is_bias(int i) const {
  const std::string& n = names_.at(i);
  return n.find("b_") != std::string::npos;
}

bool ParamBundle::is_embedding(int i) const {
  const std::string& n = names_.at(i);
  return n == "E_src" || n == "E_tgt";
}

int ParamBundle::mask_dim(int i) const {
  if (is_bias(i)) return 0;
  if (is_embedding(i)) return live_[i].rows();  // one mask entry per token type
  return live_[i].cols();
}

std::vector<Tensor> ParamBundle::zero_like_trainable() const {
  std::vector<Tensor> g;
  g.reserve(live_.size());
  for (const Tensor& t : live_) g.emplace_back(t.rows(), t.cols());
  return g;
}

void ParamBundle::check_finite(const char* where) const {
  for (int i = 0; i < count(); ++i) {
    if (!live_[i].all_finite())
      throw NumericError(std::string(where) + ": non-finite values in " + names_[i]);
    if (has_prior() && !prior_[i].all_finite())
      throw NumericError(std::string(where) + ": non-finite values in prior of " + names_[i]);
    if (has_delta() && !delta_[i].all_finite())
      throw NumericError(std::string(where) + ": non-finite values in delta of " + names_[i]);
  }
}

ParamLayout param_layout(const ParamBundle& params) {
  auto gru = [&](const std::string& p) {
    GruParams g;
    g.w_z = params.index(p + "_W_z");
    g.u_z = params.index(p + "_U_z");
    g.b_z = params.index(p + "_b_z");
    g.w_r = params.index(p + "_W_r");
    g.u_r = params.index(p + "_U_r");
    g.b_r = params.index(p + "_b_r");
    g.w_h = params.index(p + "_W_h");
    g.u_h = params.index(p + "_U_h");
    g.b_h = params.index(p + "_b_h");
    return g;
  };
  ParamLayout l;
  l.e_src = params.index("E_src");
  l.e_tgt = params.index("E_tgt");
  l.enc = gru("enc");
  l.dec = gru("dec");
  l.w_out = params.index("W_out");
  l.b_out = params.index("b_out");
  return l;
}

}  // namespace ftforge
