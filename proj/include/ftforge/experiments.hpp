#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ftforge/training.hpp"

namespace ftforge {

// End-to-end harness: builds the two-domain task, trains (or loads) the
// out-of-domain base model once, then runs the strategy-comparison table,
// the data-size curve, and the overfitting probe on top of it. Every output
// is a pure function of this config, so equal configs give byte-identical
// reports.
struct ExperimentConfig {
  GenConfig gen;  // task shape; gen.seed is overridden by `seed` below

  int embed_dim = 32;
  int hidden_dim = 64;
  int max_decode_len = 32;

  int out_train_pairs = 20000;
  int in_train_pairs = 2000;
  int valid_pairs = 400;
  int test_pairs = 400;

  double base_lr = 1e-3;
  double clip_norm = 1.0;
  int base_validation_frequency = 500;
  int patience = 10;
  int batch_size = 16;

  int n_seeds = 5;
  int n_resamples = 1000;

  double dropout_retain_word = 0.9;
  double dropout_retain_other = 0.8;
  double tuneout_retain_word = 0.6;
  double tuneout_retain_other = 0.2;
  double lambda_map_l2 = 1e-3;

  std::uint64_t seed = 1;
  std::string cache_dir;  // when set, the base checkpoint is cached here

  ModelConfig model_config() const;
  void validate() const;
};

struct ExperimentContext {
  ExperimentConfig cfg;
  Vocab vocab;
  Corpus out_train, out_valid;
  Corpus in_train, in_valid, in_test;
  Checkpoint base;
};

// Generates the corpora and trains the out-of-domain base with early
// stopping. With cache_dir set, a previously trained base for this exact
// config is reused.
ExperimentContext prepare(const ExperimentConfig& cfg);

// Fine-tuning protocol: a quarter of the base validation interval, clamped
// to at least one validation per epoch on `train_pairs` examples. The
// learning-rate quarter lives in finetune() itself.
TrainConfig finetune_protocol(const ExperimentConfig& cfg, std::uint64_t run_seed,
                              std::size_t train_pairs);

RegConfig reg_none(const ExperimentConfig& cfg);
RegConfig reg_dropout(const ExperimentConfig& cfg);
RegConfig reg_map_l2(const ExperimentConfig& cfg);
RegConfig reg_tuneout(const ExperimentConfig& cfg);
RegConfig reg_dropout_map_l2(const ExperimentConfig& cfg);

// Copies a checkpoint's parameters into plain inference form (tuneout deltas
// folded into the prior).
ParamBundle inference_params(const Checkpoint& ckpt);

struct TableRow {
  std::string system;  // machine token, e.g. "finetune+dropout"
  std::string label;   // human-readable name
  std::vector<double> seed_bleu;
  double mean_bleu = 0.0;
  // Paired bootstrap against the plain fine-tuning row, both tails.
  double p_row_over_base = 1.0;  // small when the row beats the baseline
  double p_base_over_row = 1.0;  // small when the baseline beats the row
  bool significant = false;      // either tail below 0.05
};

struct TableReport {
  std::vector<TableRow> rows;
  std::string text;     // aligned table with significance daggers
  std::string machine;  // key=value lines, byte-stable per config
};

// Seven systems on the held-out in-domain test set: out-domain only,
// in-domain only, plain fine-tuning, and fine-tuning with each regularizer.
TableReport run_table(const ExperimentContext& ctx);

struct CurvePoint {
  int size = 0;
  std::string strategy;
  int seed = 0;  // 0-based run index
  double test_bleu = 0.0;
  double peak_valid_bleu = 0.0;
  double final_valid_bleu = 0.0;
};

struct CurveReport {
  std::vector<CurvePoint> points;  // size-major, then strategy, then seed
  std::string csv;
};

// The five fine-tuning strategies swept over in-domain data sizes.
const std::vector<std::string>& curve_strategies();
std::vector<int> default_curve_sizes();

// Mean test BLEU per (size) for one strategy, in size order.
std::vector<double> strategy_means(const CurveReport& report, const std::string& strategy,
                                   const std::vector<int>& sizes);

CurveReport run_curve(const ExperimentContext& ctx, const std::vector<int>& sizes,
                      const std::vector<std::string>& strategies, int n_seeds);

struct StrategySpec {
  bool early_stop = true;
  int epochs = 0;           // fixed epoch count when early_stop is false
  bool regularized = false;  // dropout + MAP-L2
};

// Accepts "early_stop", "1epoch", "<k>epochs", "epochs:<k>", each with an
// optional "+dropout+map_l2" suffix.
StrategySpec parse_strategy(const std::string& name);

struct OverfitRun {
  double peak = 0.0;
  double final = 0.0;
  double gap() const { return peak - final; }
};

struct OverfitProbe {
  std::vector<OverfitRun> unregularized, regularized;
  double unreg_mean_gap = 0.0;
  double reg_mean_gap = 0.0;
};

// Fixed-epoch fine-tuning on a small subset, tracking how far validation
// BLEU falls from its peak by the end. Compares no regularization against
// dropout + MAP-L2 over n_seeds disjoint-seeded runs.
OverfitProbe run_overfit_probe(const ExperimentContext& ctx, int subset_pairs, int epochs,
                               int n_seeds, int validation_frequency);

}  // namespace ftforge
