#include "ftforge/training.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace ftforge {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (validation_frequency < 1)
    throw ConfigError("validation_frequency must be positive");
  if (patience < 1) throw ConfigError("patience must be positive");
  if (max_epochs < 0) throw ConfigError("max_epochs must be non-negative");
}

std::vector<EncodedPair> encode_corpus(const Vocab& v, const Corpus& c) {
  std::vector<EncodedPair> out;
  out.reserve(c.size());
  for (const SentencePair& p : c)
    out.push_back({encode_tokens(v, p.src), encode_tokens(v, p.tgt), p.line_index});
  return out;
}

std::vector<std::vector<std::string>> greedy_decode_corpus(const ParamBundle& params,
                                                           const Vocab& vocab,
                                                           const Corpus& data) {
  std::vector<std::vector<std::string>> hyps;
  hyps.reserve(data.size());
  for (const SentencePair& p : data) {
    const std::vector<int> ids = greedy_decode(params, encode_tokens(vocab, p.src));
    hyps.push_back(decode_tokens(vocab, ids));
  }
  return hyps;
}

BleuReport greedy_corpus_bleu(const ParamBundle& params, const Vocab& vocab,
                              const Corpus& data) {
  std::vector<std::vector<std::string>> refs;
  refs.reserve(data.size());
  for (const SentencePair& p : data) refs.push_back(p.tgt);
  return corpus_bleu(greedy_decode_corpus(params, vocab, data), refs);
}

namespace {

// Length-bucketed batches: stable order (src length, then line index), so the
// batch contents are fixed and only their order is reshuffled per epoch.
std::vector<std::vector<int>> make_batches(const std::vector<EncodedPair>& data,
                                           int batch_size) {
  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (data[a].src.size() != data[b].src.size())
      return data[a].src.size() < data[b].src.size();
    return data[a].example_id < data[b].example_id;
  });
  std::vector<std::vector<int>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const std::size_t end = std::min(order.size(), i + batch_size);
    batches.emplace_back(order.begin() + i, order.begin() + end);
  }
  return batches;
}

TrainResult run_training(ParamBundle params, OptimizerState opt, RegConfig reg,
                         const TrainConfig& tc, const ModelConfig& mc,
                         const Vocab& vocab, const Corpus& train_data,
                         const Corpus& valid_data) {
  tc.validate();
  reg.validate();
  opt.validate();
  if (train_data.empty()) throw DataError("training corpus is empty");
  if (tc.early_stop && valid_data.empty())
    throw ConfigError("early stopping needs a validation corpus");

  reg.seed = mix_seed({tc.seed, hash_str("masks")});
  const std::vector<EncodedPair> train_enc = encode_corpus(vocab, train_data);
  const ParamLayout layout = param_layout(params);
  const std::vector<std::vector<int>> batches = make_batches(train_enc, tc.batch_size);

  std::vector<Tensor> grads = params.zero_like_trainable();

  TrainResult res;
  std::int64_t updates = 0;
  double best_bleu = -1.0;
  ParamBundle best_params = params;
  std::int64_t best_updates = 0;
  int since_best = 0;
  bool stop = false;
  double last_bleu = -1.0;
  std::int64_t last_validated_at = -1;

  auto validate_now = [&] {
    if (valid_data.empty()) return;
    const ParamBundle eff = effective_params(params, reg.mode);
    const BleuReport rep = greedy_corpus_bleu(eff, vocab, valid_data);
    last_bleu = rep.bleu;
    last_validated_at = updates;
    res.history.push_back({updates, rep.bleu});
    if (tc.on_validation) tc.on_validation(updates, rep.bleu);
    if (rep.bleu > best_bleu) {
      best_bleu = rep.bleu;
      best_params = params;
      best_updates = updates;
      since_best = 0;
    } else {
      ++since_best;
      if (tc.early_stop && since_best >= tc.patience) stop = true;
    }
  };

  // Without early stopping max_epochs is the exact run length (0 = no-op);
  // with it, 0 means no cap.
  const std::int64_t epoch_cap =
      tc.early_stop && tc.max_epochs == 0
          ? std::numeric_limits<std::int64_t>::max()
          : tc.max_epochs;
  for (std::int64_t epoch = 0; !stop && epoch < epoch_cap; ++epoch) {
    std::vector<int> batch_order(batches.size());
    std::iota(batch_order.begin(), batch_order.end(), 0);
    Rng order_rng(mix_seed({tc.seed, hash_str("batch_order"),
                            static_cast<std::uint64_t>(epoch)}));
    order_rng.shuffle(batch_order);

    for (int bi : batch_order) {
      const std::vector<int>& batch = batches[bi];
      for (Tensor& g : grads) g.fill(0.0);
      for (int ei : batch) {
        const EncodedPair& ex = train_enc[ei];
        const MaskTable table =
            reg.mode == RegMode::off
                ? MaskTable{}
                : MaskTable::build(params, reg, ex.example_id, epoch);
        decode_train(params, layout, reg.mode, table, ex.src, ex.tgt, &grads);
      }
      const double inv_b = 1.0 / static_cast<double>(batch.size());
      for (Tensor& g : grads)
        for (double& v : g.flat()) v *= inv_b;
      if (reg.lambda_map_l2 > 0.0) map_l2_penalty(params, reg.lambda_map_l2, &grads);
      clip_gradients(grads, opt.clip_norm);
      apply_update(params, grads, opt);
      ++updates;
      if (updates % tc.validation_frequency == 0) {
        validate_now();
        if (stop) break;
      }
    }
    params.check_finite("epoch end");
  }

  if (last_validated_at != updates) validate_now();

  Checkpoint ck;
  ck.model = mc;
  ck.vocab = vocab;
  ck.reg = reg;
  ck.opt_kind = opt.kind;
  ck.opt_lr = opt.lr;
  ck.clip_norm = opt.clip_norm;
  if (tc.early_stop) {
    ck.params = std::move(best_params);
    ck.updates = best_updates;
  } else {
    ck.params = std::move(params);
    ck.updates = updates;
  }
  ck.best_valid_bleu = best_bleu;
  res.ckpt = std::move(ck);
  res.peak_valid_bleu = best_bleu;
  res.final_valid_bleu = last_bleu;
  return res;
}

}  // namespace

TrainResult train(const ModelConfig& mc, const Vocab& vocab, const Corpus& train_data,
                  const Corpus& valid_data, const RegConfig& reg, const TrainConfig& tc,
                  const OptimizerState& opt) {
  mc.validate();
  if (vocab.size() != mc.vocab_size)
    throw ConfigError("vocabulary has " + std::to_string(vocab.size()) +
                      " tokens but the model expects " + std::to_string(mc.vocab_size));
  if (reg.mode == RegMode::tuneout)
    throw ConfigError("tuneout needs a base model to difference against; "
                      "train from scratch without it");
  if (reg.lambda_map_l2 > 0.0)
    throw ConfigError("the MAP penalty needs a base model; "
                      "train from scratch without it");
  ParamBundle params =
      ParamBundle::init_random(mc, mix_seed({tc.seed, hash_str("params")}));
  return run_training(std::move(params), opt, reg, tc, mc, vocab, train_data,
                      valid_data);
}

TrainResult finetune(const Checkpoint& base, const Corpus& train_data,
                     const Corpus& valid_data, const RegConfig& reg,
                     const TrainConfig& tc) {
  auto check_covered = [&](const Corpus& c, const char* which) {
    for (const SentencePair& p : c) {
      for (const auto* side : {&p.src, &p.tgt}) {
        for (const std::string& tok : *side) {
          if (!base.vocab.contains(tok))
            throw ConfigError(std::string(which) + " corpus token '" + tok +
                              "' is not covered by the base vocabulary");
        }
      }
    }
  };
  check_covered(train_data, "fine-tuning");
  check_covered(valid_data, "fine-tuning validation");

  ParamBundle params = effective_params(
      base.params, base.params.has_delta() ? RegMode::tuneout : RegMode::off);
  params.snapshot_prior();
  if (reg.mode == RegMode::tuneout) params.init_delta_zero();

  OptimizerState opt;
  opt.kind = base.opt_kind;
  opt.lr = base.opt_lr / 4.0;
  opt.clip_norm = base.clip_norm;
  return run_training(std::move(params), opt, reg, tc, base.model, base.vocab,
                      train_data, valid_data);
}

namespace {

std::string escape_token(const std::string& t) {
  std::string out;
  for (char ch : t) {
    if (ch == '%')
      out += "%25";
    else if (ch == ',')
      out += "%2C";
    else
      out += ch;
  }
  return out;
}

std::string unescape_token(const std::string& t) {
  std::string out;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] != '%') {
      out += t[i];
      continue;
    }
    if (i + 2 >= t.size())
      throw CheckpointHeaderError("truncated escape in vocab field: " + t);
    const std::string hex = t.substr(i + 1, 2);
    if (hex == "25")
      out += '%';
    else if (hex == "2C")
      out += ',';
    else
      throw CheckpointHeaderError("bad escape %" + hex + " in vocab field");
    i += 2;
  }
  return out;
}

std::vector<std::string> split_char(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string::npos) {
      parts.push_back(s.substr(start));
      return parts;
    }
    parts.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

void strip_cr(std::string& s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
}

template <class Err>
std::int64_t parse_ll(const std::string& s, const std::string& what) {
  errno = 0;
  char* end = nullptr;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE)
    throw Err("bad integer for " + what + ": '" + s + "'");
  return v;
}

template <class Err>
double parse_double(const std::string& s, const std::string& what) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size())
    throw Err("bad number for " + what + ": '" + s + "'");
  return v;
}

const char* const kMagic = "FTFORGE-CKPT v";

}  // namespace

namespace {

// Tensors in payload order: live set, then prior.*, then delta.* when present.
std::vector<std::pair<std::string, const Tensor*>> checkpoint_tensors(
    const ParamBundle& p) {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (int i = 0; i < p.count(); ++i) out.emplace_back(p.name(i), &p.live(i));
  if (p.has_prior())
    for (int i = 0; i < p.count(); ++i)
      out.emplace_back("prior." + p.name(i), &p.prior(i));
  if (p.has_delta())
    for (int i = 0; i < p.count(); ++i)
      out.emplace_back("delta." + p.name(i), &p.delta(i));
  return out;
}

}  // namespace

void save_checkpoint(const Checkpoint& c, const std::string& path) {
  c.model.validate();
  if (c.vocab.size() != c.model.vocab_size)
    throw ConfigError("checkpoint vocabulary size " + std::to_string(c.vocab.size()) +
                      " mismatches model vocab_size " +
                      std::to_string(c.model.vocab_size));
  if (c.params.has_delta() && !c.params.has_prior())
    throw ConfigError("checkpoint has delta tensors but no prior");
  c.params.check_finite("checkpoint save");
  const auto tensors = checkpoint_tensors(c.params);

  std::ostringstream head;
  head << "vocab_size=" << c.model.vocab_size << " embed_dim=" << c.model.embed_dim
       << " hidden_dim=" << c.model.hidden_dim
       << " max_decode_len=" << c.model.max_decode_len
       << " reg_mode=" << reg_mode_name(c.reg.mode)
       << " retain_word=" << dtoa17(c.reg.retain_word)
       << " retain_other=" << dtoa17(c.reg.retain_other)
       << " lambda_map_l2=" << dtoa17(c.reg.lambda_map_l2)
       << " opt_kind=" << opt_kind_name(c.opt_kind) << " lr=" << dtoa17(c.opt_lr)
       << " clip_norm=" << dtoa17(c.clip_norm) << " updates=" << c.updates
       << " best_valid_bleu=" << dtoa17(c.best_valid_bleu) << " vocab=";
  for (int i = 0; i < c.vocab.size(); ++i) {
    if (i) head << ',';
    head << escape_token(c.vocab.token(i));
  }
  head << " tensors=";
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (i) head << ',';
    head << tensors[i].first << ':' << tensors[i].second->rows() << ':'
         << tensors[i].second->cols();
  }

  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << kMagic << "1\n" << head.str() << "\n\n";
  for (const auto& [name, t] : tensors) {
    (void)name;
    for (int r = 0; r < t->rows(); ++r) {
      for (int cc = 0; cc < t->cols(); ++cc) {
        if (cc) out << ' ';
        out << dtoa17(t->at(r, cc));
      }
      out << '\n';
    }
  }
  out << "END\n";
  out.flush();
  if (!out) throw DataError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path);
  std::string line;

  if (!std::getline(in, line)) throw CheckpointHeaderError("empty checkpoint: " + path);
  strip_cr(line);
  if (line.rfind(kMagic, 0) != 0)
    throw CheckpointHeaderError("bad magic line: '" + line + "'");
  const std::string ver = line.substr(std::string(kMagic).size());
  if (ver != "1") {
    const bool numeric =
        !ver.empty() && std::all_of(ver.begin(), ver.end(),
                                    [](unsigned char ch) { return std::isdigit(ch); });
    if (numeric) throw CheckpointVersionError("unsupported checkpoint version " + ver);
    throw CheckpointHeaderError("bad version field: '" + ver + "'");
  }

  if (!std::getline(in, line)) throw CheckpointHeaderError("missing header line");
  strip_cr(line);
  std::map<std::string, std::string> kv;
  for (const std::string& part : split_char(line, ' ')) {
    const std::size_t eq = part.find('=');
    if (eq == std::string::npos || eq == 0)
      throw CheckpointHeaderError("bad header field: '" + part + "'");
    const std::string key = part.substr(0, eq);
    if (kv.count(key)) throw CheckpointHeaderError("duplicate header key: " + key);
    kv[key] = part.substr(eq + 1);
  }
  const std::vector<std::string> required = {
      "vocab_size", "embed_dim",  "hidden_dim", "max_decode_len",  "reg_mode",
      "retain_word", "retain_other", "lambda_map_l2", "opt_kind", "lr",
      "clip_norm",  "updates",    "best_valid_bleu", "vocab",     "tensors"};
  for (const std::string& key : required)
    if (!kv.count(key)) throw CheckpointHeaderError("missing header key: " + key);
  if (kv.size() != required.size()) {
    for (const auto& [key, value] : kv) {
      (void)value;
      if (std::find(required.begin(), required.end(), key) == required.end())
        throw CheckpointHeaderError("unknown header key: " + key);
    }
  }

  Checkpoint c;
  c.model.vocab_size =
      static_cast<int>(parse_ll<CheckpointHeaderError>(kv["vocab_size"], "vocab_size"));
  c.model.embed_dim =
      static_cast<int>(parse_ll<CheckpointHeaderError>(kv["embed_dim"], "embed_dim"));
  c.model.hidden_dim =
      static_cast<int>(parse_ll<CheckpointHeaderError>(kv["hidden_dim"], "hidden_dim"));
  c.model.max_decode_len = static_cast<int>(
      parse_ll<CheckpointHeaderError>(kv["max_decode_len"], "max_decode_len"));
  try {
    c.model.validate();
    c.reg.mode = reg_mode_from_name(kv["reg_mode"]);
  } catch (const ConfigError& e) {
    throw CheckpointHeaderError(e.what());
  }
  c.reg.retain_word =
      parse_double<CheckpointHeaderError>(kv["retain_word"], "retain_word");
  c.reg.retain_other =
      parse_double<CheckpointHeaderError>(kv["retain_other"], "retain_other");
  c.reg.lambda_map_l2 =
      parse_double<CheckpointHeaderError>(kv["lambda_map_l2"], "lambda_map_l2");
  try {
    c.opt_kind = opt_kind_from_name(kv["opt_kind"]);
  } catch (const ConfigError& e) {
    throw CheckpointHeaderError(e.what());
  }
  c.opt_lr = parse_double<CheckpointHeaderError>(kv["lr"], "lr");
  c.clip_norm = parse_double<CheckpointHeaderError>(kv["clip_norm"], "clip_norm");
  c.updates = parse_ll<CheckpointHeaderError>(kv["updates"], "updates");
  c.best_valid_bleu =
      parse_double<CheckpointHeaderError>(kv["best_valid_bleu"], "best_valid_bleu");

  std::vector<std::string> vocab_tokens;
  for (const std::string& raw : split_char(kv["vocab"], ','))
    vocab_tokens.push_back(unescape_token(raw));
  if (static_cast<int>(vocab_tokens.size()) != c.model.vocab_size)
    throw CheckpointHeaderError("vocab field has " + std::to_string(vocab_tokens.size()) +
                                " tokens, header says " +
                                std::to_string(c.model.vocab_size));
  const Vocab empty_vocab;
  for (int i = 0; i < kReservedTokens; ++i) {
    if (vocab_tokens[static_cast<std::size_t>(i)] != empty_vocab.token(i))
      throw CheckpointHeaderError("vocab slot " + std::to_string(i) + " must be " +
                                  empty_vocab.token(i));
  }
  try {
    c.vocab = Vocab::from_tokens(
        {vocab_tokens.begin() + kReservedTokens, vocab_tokens.end()});
  } catch (const VocabError& e) {
    throw CheckpointHeaderError(e.what());
  }

  c.params = ParamBundle::create(c.model);
  const std::vector<std::string> manifest = split_char(kv["tensors"], ',');
  const int base_count = c.params.count();
  const std::size_t n_manifest = manifest.size();
  bool with_prior = false, with_delta = false;
  if (n_manifest == static_cast<std::size_t>(2 * base_count)) {
    with_prior = true;
  } else if (n_manifest == static_cast<std::size_t>(3 * base_count)) {
    with_prior = with_delta = true;
  } else if (n_manifest != static_cast<std::size_t>(base_count)) {
    throw CheckpointHeaderError("tensor manifest has " + std::to_string(n_manifest) +
                                " entries, expected " + std::to_string(base_count) +
                                " optionally followed by prior and delta sets");
  }
  if (with_prior) c.params.snapshot_prior();
  if (with_delta) c.params.init_delta_zero();
  auto slots = [&] {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (int i = 0; i < base_count; ++i)
      out.emplace_back(c.params.name(i), &c.params.live(i));
    if (with_prior)
      for (int i = 0; i < base_count; ++i)
        out.emplace_back("prior." + c.params.name(i), &c.params.prior(i));
    if (with_delta)
      for (int i = 0; i < base_count; ++i)
        out.emplace_back("delta." + c.params.name(i), &c.params.delta(i));
    return out;
  }();
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const std::vector<std::string> f = split_char(manifest[i], ':');
    if (f.size() != 3)
      throw CheckpointHeaderError("bad tensor manifest entry: '" + manifest[i] + "'");
    const std::int64_t rows = parse_ll<CheckpointHeaderError>(f[1], "tensor rows");
    const std::int64_t cols = parse_ll<CheckpointHeaderError>(f[2], "tensor cols");
    if (f[0] != slots[i].first || rows != slots[i].second->rows() ||
        cols != slots[i].second->cols())
      throw CheckpointHeaderError("tensor manifest entry " + std::to_string(i) +
                                  " is '" + manifest[i] + "', expected " +
                                  slots[i].first + ":" + slots[i].second->shape_str());
  }

  if (!std::getline(in, line)) throw CheckpointHeaderError("missing blank separator line");
  strip_cr(line);
  if (!line.empty())
    throw CheckpointHeaderError("expected blank line after header, got '" + line + "'");

  for (auto& [name, t] : slots) {
    for (int r = 0; r < t->rows(); ++r) {
      if (!std::getline(in, line))
        throw CheckpointPayloadError("unexpected end of file in tensor " + name);
      strip_cr(line);
      const std::vector<std::string> vals = split_char(line, ' ');
      if (static_cast<int>(vals.size()) != t->cols())
        throw CheckpointPayloadError("tensor " + name + " row " + std::to_string(r) +
                                     " has " + std::to_string(vals.size()) +
                                     " values, expected " + std::to_string(t->cols()));
      for (int cc = 0; cc < t->cols(); ++cc) {
        const double v = parse_double<CheckpointPayloadError>(
            vals[static_cast<std::size_t>(cc)], "tensor " + name);
        if (!std::isfinite(v))
          throw CheckpointPayloadError("non-finite value in tensor " + name);
        t->at(r, cc) = v;
      }
    }
  }

  if (!std::getline(in, line)) throw CheckpointPayloadError("missing END line");
  strip_cr(line);
  if (line != "END")
    throw CheckpointPayloadError("expected END line, got '" + line + "'");
  if (std::getline(in, line))
    throw CheckpointPayloadError("trailing content after END");
  return c;
}

}  // namespace ftforge
