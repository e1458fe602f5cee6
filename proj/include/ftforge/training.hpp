#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ftforge/data.hpp"
#include "ftforge/evaluation.hpp"
#include "ftforge/model.hpp"
#include "ftforge/optimizer.hpp"
#include "ftforge/params.hpp"
#include "ftforge/regularization.hpp"

namespace ftforge {

struct TrainConfig {
  int batch_size = 16;
  int validation_frequency = 500;  // updates between greedy-decode validations
  int patience = 10;               // validations without improvement before stopping
  bool early_stop = true;
  // With early stopping: optional hard cap (0 = none). Without: the exact
  // epoch count to run, 0 meaning a no-op run of zero updates.
  int max_epochs = 0;
  std::uint64_t seed = 0;
  // Called after each validation with (update count, validation BLEU).
  std::function<void(std::int64_t, double)> on_validation;

  void validate() const;
};

struct Checkpoint {
  ModelConfig model;
  Vocab vocab;
  RegConfig reg;  // regularization the run was trained with (seed not persisted)
  OptKind opt_kind = OptKind::adam;
  double opt_lr = 1e-3;
  double clip_norm = 1.0;
  std::int64_t updates = 0;
  double best_valid_bleu = -1.0;  // -1 until a validation has run
  ParamBundle params;
};

struct ValidationPoint {
  std::int64_t update = 0;
  double bleu = 0.0;
};

struct TrainResult {
  Checkpoint ckpt;
  double peak_valid_bleu = -1.0;
  double final_valid_bleu = -1.0;
  std::vector<ValidationPoint> history;
};

struct EncodedPair {
  std::vector<int> src, tgt;
  std::int64_t example_id = 0;
};

std::vector<EncodedPair> encode_corpus(const Vocab& v, const Corpus& c);

// Greedy-decodes every source sentence. `params` must already be effective
// (materialized) parameters.
std::vector<std::vector<std::string>> greedy_decode_corpus(const ParamBundle& params,
                                                           const Vocab& vocab,
                                                           const Corpus& data);

BleuReport greedy_corpus_bleu(const ParamBundle& params, const Vocab& vocab,
                              const Corpus& data);

// Mini-batch training. Examples are bucketed by source length (stable over
// line index), the batch order is reshuffled every epoch, the loss is the
// mean over the batch of per-example sums, and the MAP penalty (when
// configured) is added once per batch. Validation decodes the validation set
// every validation_frequency updates and once more after the final update;
// with early stopping the best-scoring parameters are returned, ties keeping
// the earlier ones. Mask draws derive from tc.seed.
TrainResult train(const ModelConfig& mc, const Vocab& vocab, const Corpus& train_data,
                  const Corpus& valid_data, const RegConfig& reg, const TrainConfig& tc,
                  const OptimizerState& opt);

// Fine-tunes from a base checkpoint: the prior is snapshotted from the base
// parameters, tuneout deltas start at zero, the optimizer is fresh with the
// base learning rate divided by 4. Every corpus token must be covered by the
// base vocabulary.
TrainResult finetune(const Checkpoint& base, const Corpus& train_data,
                     const Corpus& valid_data, const RegConfig& reg,
                     const TrainConfig& tc);

// Plain text format, round-trip exact for every tensor, prior and delta
// included when present. Optimizer moment buffers are not persisted:
// fine-tuning always starts a fresh optimizer.
void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace ftforge
