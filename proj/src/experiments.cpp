#include "ftforge/experiments.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <utility>

namespace ftforge {
namespace {

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

std::vector<std::vector<std::string>> references(const Corpus& c) {
  std::vector<std::vector<std::string>> refs;
  refs.reserve(c.size());
  for (const auto& p : c) refs.push_back(p.tgt);
  return refs;
}

double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

// Everything the cached base depends on, folded into one value so a stale
// file can never be mistaken for the requested configuration.
std::uint64_t base_fingerprint(const ExperimentConfig& cfg) {
  std::string knobs;
  knobs += std::to_string(cfg.gen.content_vocab) + "," + std::to_string(cfg.gen.min_len) +
           "," + std::to_string(cfg.gen.max_len) + "," + dtoa17(cfg.gen.shared_fraction) +
           "," + std::to_string(cfg.gen.reverse) + "," + std::to_string(cfg.gen.identity_map) +
           "," + std::to_string(cfg.gen.zipf);
  knobs += ";" + std::to_string(cfg.embed_dim) + "," + std::to_string(cfg.hidden_dim) + "," +
           std::to_string(cfg.max_decode_len);
  knobs += ";" + std::to_string(cfg.out_train_pairs) + "," + std::to_string(cfg.valid_pairs);
  knobs += ";" + dtoa17(cfg.base_lr) + "," + dtoa17(cfg.clip_norm) + "," +
           std::to_string(cfg.base_validation_frequency) + "," + std::to_string(cfg.patience) +
           "," + std::to_string(cfg.batch_size);
  return mix_seed({cfg.seed, hash_str("base_fingerprint"), hash_str(knobs)});
}

Checkpoint train_base(const ExperimentConfig& cfg, const Vocab& vocab, const Corpus& train_data,
                      const Corpus& valid_data) {
  TrainConfig tc;
  tc.batch_size = cfg.batch_size;
  tc.validation_frequency = cfg.base_validation_frequency;
  tc.patience = cfg.patience;
  tc.early_stop = true;
  tc.max_epochs = 0;
  tc.seed = mix_seed({cfg.seed, hash_str("base")});
  OptimizerState opt;
  opt.kind = OptKind::adam;
  opt.lr = cfg.base_lr;
  opt.clip_norm = cfg.clip_norm;
  TrainResult r = train(cfg.model_config(), vocab, train_data, valid_data, reg_none(cfg), tc, opt);
  return std::move(r.ckpt);
}

struct FinetuneRun {
  TrainResult result;
  std::vector<std::vector<std::string>> test_hyps;
  double test_bleu = 0.0;
};

FinetuneRun score_on_test(TrainResult r, const ExperimentContext& ctx,
                          const std::vector<std::vector<std::string>>& refs) {
  FinetuneRun out;
  const ParamBundle eff = inference_params(r.ckpt);
  out.test_hyps = greedy_decode_corpus(eff, ctx.base.vocab, ctx.in_test);
  out.test_bleu = corpus_bleu(out.test_hyps, refs).bleu;
  out.result = std::move(r);
  return out;
}

}  // namespace

ModelConfig ExperimentConfig::model_config() const {
  ModelConfig mc;
  mc.vocab_size = gen.content_vocab + kReservedTokens;
  mc.embed_dim = embed_dim;
  mc.hidden_dim = hidden_dim;
  mc.max_decode_len = max_decode_len;
  return mc;
}

void ExperimentConfig::validate() const {
  gen.validate();
  model_config().validate();
  if (out_train_pairs < 1 || in_train_pairs < 1 || valid_pairs < 1 || test_pairs < 1)
    throw ConfigError("experiment corpus sizes must be at least 1");
  if (!(base_lr > 0.0) || !std::isfinite(base_lr))
    throw ConfigError("base_lr must be positive and finite");
  if (base_validation_frequency < 1)
    throw ConfigError("base_validation_frequency must be at least 1");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (n_seeds < 1) throw ConfigError("n_seeds must be at least 1");
  if (n_resamples < 1) throw ConfigError("n_resamples must be at least 1");
  reg_dropout(*this).validate();
  reg_tuneout(*this).validate();
  reg_map_l2(*this).validate();
}

TrainConfig finetune_protocol(const ExperimentConfig& cfg, std::uint64_t run_seed,
                              std::size_t train_pairs) {
  TrainConfig tc;
  tc.batch_size = cfg.batch_size;
  const std::int64_t updates_per_epoch =
      (static_cast<std::int64_t>(train_pairs) + cfg.batch_size - 1) / cfg.batch_size;
  std::int64_t vf = cfg.base_validation_frequency / 4;
  vf = std::max<std::int64_t>(1, std::min(vf, updates_per_epoch));
  tc.validation_frequency = static_cast<int>(vf);
  tc.patience = cfg.patience;
  tc.early_stop = true;
  tc.max_epochs = 0;
  tc.seed = run_seed;
  return tc;
}

RegConfig reg_none(const ExperimentConfig&) {
  RegConfig r;
  r.mode = RegMode::off;
  r.lambda_map_l2 = 0.0;
  return r;
}

RegConfig reg_dropout(const ExperimentConfig& cfg) {
  RegConfig r;
  r.mode = RegMode::dropout;
  r.retain_word = cfg.dropout_retain_word;
  r.retain_other = cfg.dropout_retain_other;
  return r;
}

RegConfig reg_map_l2(const ExperimentConfig& cfg) {
  RegConfig r;
  r.mode = RegMode::off;
  r.lambda_map_l2 = cfg.lambda_map_l2;
  return r;
}

RegConfig reg_tuneout(const ExperimentConfig& cfg) {
  RegConfig r;
  r.mode = RegMode::tuneout;
  r.retain_word = cfg.tuneout_retain_word;
  r.retain_other = cfg.tuneout_retain_other;
  return r;
}

RegConfig reg_dropout_map_l2(const ExperimentConfig& cfg) {
  RegConfig r = reg_dropout(cfg);
  r.lambda_map_l2 = cfg.lambda_map_l2;
  return r;
}

ParamBundle inference_params(const Checkpoint& ckpt) {
  return effective_params(ckpt.params,
                          ckpt.params.has_delta() ? RegMode::tuneout : RegMode::off);
}

ExperimentContext prepare(const ExperimentConfig& cfg_in) {
  ExperimentConfig cfg = cfg_in;
  cfg.gen.seed = cfg.seed;
  cfg.validate();

  ExperimentContext ctx;
  ctx.cfg = cfg;
  ctx.vocab = build_vocab(cfg.gen);
  ctx.out_train = generate_corpus(cfg.gen, Domain::out_domain, cfg.out_train_pairs,
                                  mix_seed({cfg.seed, hash_str("out_train")}));
  ctx.out_valid = generate_corpus(cfg.gen, Domain::out_domain, cfg.valid_pairs,
                                  mix_seed({cfg.seed, hash_str("out_valid")}));
  ctx.in_train = generate_corpus(cfg.gen, Domain::in_domain, cfg.in_train_pairs,
                                 mix_seed({cfg.seed, hash_str("in_train")}));
  ctx.in_valid = generate_corpus(cfg.gen, Domain::in_domain, cfg.valid_pairs,
                                 mix_seed({cfg.seed, hash_str("in_valid")}));
  ctx.in_test = generate_corpus(cfg.gen, Domain::in_domain, cfg.test_pairs,
                                mix_seed({cfg.seed, hash_str("in_test")}));

  if (cfg.cache_dir.empty()) {
    ctx.base = train_base(cfg, ctx.vocab, ctx.out_train, ctx.out_valid);
    return ctx;
  }

  namespace fs = std::filesystem;
  fs::create_directories(cfg.cache_dir);
  char name[64];
  std::snprintf(name, sizeof(name), "base_%016llx.ckpt",
                static_cast<unsigned long long>(base_fingerprint(cfg)));
  const fs::path path = fs::path(cfg.cache_dir) / name;
  if (fs::exists(path)) {
    ctx.base = load_checkpoint(path.string());
    if (ctx.base.vocab.tokens() != ctx.vocab.tokens())
      throw ConfigError("cached base checkpoint vocabulary does not match this config: " +
                        path.string());
    return ctx;
  }
  ctx.base = train_base(cfg, ctx.vocab, ctx.out_train, ctx.out_valid);
  const fs::path tmp = path.string() + ".tmp";
  save_checkpoint(ctx.base, tmp.string());
  fs::rename(tmp, path);
  return ctx;
}

TableReport run_table(const ExperimentContext& ctx) {
  const ExperimentConfig& cfg = ctx.cfg;
  const int n_seeds = cfg.n_seeds;
  const auto refs = references(ctx.in_test);

  struct SystemSpec {
    std::string token, label;
  };
  const std::vector<SystemSpec> systems = {
      {"out_domain_only", "Out-of-domain only"},
      {"in_domain_only", "In-domain only"},
      {"finetune", "Fine-tuning"},
      {"finetune+dropout", "Fine-tuning + dropout"},
      {"finetune+map_l2", "Fine-tuning + MAP-L2"},
      {"finetune+tuneout", "Fine-tuning + tuneout"},
      {"finetune+dropout+map_l2", "Fine-tuning + dropout + MAP-L2"},
  };
  const std::size_t baseline_index = 2;

  // Per-system concatenation of per-seed sentence stats, aligned across
  // systems so the bootstrap stays paired.
  std::vector<TableRow> rows(systems.size());
  std::vector<std::vector<SentenceBleuStats>> row_stats(systems.size());

  const ParamBundle base_eff = inference_params(ctx.base);
  const auto base_hyps = greedy_decode_corpus(base_eff, ctx.base.vocab, ctx.in_test);
  const double base_bleu = corpus_bleu(base_hyps, refs).bleu;
  const auto base_stats = corpus_stats(base_hyps, refs);

  for (std::size_t i = 0; i < systems.size(); ++i) {
    TableRow& row = rows[i];
    row.system = systems[i].token;
    row.label = systems[i].label;
    for (int s = 0; s < n_seeds; ++s) {
      const std::uint64_t run_seed =
          mix_seed({cfg.seed, hash_str("table"), hash_str(row.system),
                    static_cast<std::uint64_t>(s)});
      std::vector<std::vector<std::string>> hyps;
      double bleu = 0.0;
      if (row.system == "out_domain_only") {
        // One deterministic decode; repeated per seed so the concatenated
        // stats stay aligned with the trained rows.
        hyps = base_hyps;
        bleu = base_bleu;
      } else if (row.system == "in_domain_only") {
        // Trained like the base model (full LR, base validation cadence):
        // this row is a from-scratch system, not a fine-tuned one.
        TrainConfig tc;
        tc.batch_size = cfg.batch_size;
        tc.validation_frequency = cfg.base_validation_frequency;
        tc.patience = cfg.patience;
        tc.early_stop = true;
        tc.max_epochs = 0;
        tc.seed = run_seed;
        OptimizerState opt;
        opt.kind = OptKind::adam;
        opt.lr = cfg.base_lr;
        opt.clip_norm = cfg.clip_norm;
        TrainResult r = train(cfg.model_config(), ctx.vocab, ctx.in_train, ctx.in_valid,
                              reg_none(cfg), tc, opt);
        FinetuneRun fr = score_on_test(std::move(r), ctx, refs);
        hyps = std::move(fr.test_hyps);
        bleu = fr.test_bleu;
      } else {
        RegConfig reg;
        if (row.system == "finetune")
          reg = reg_none(cfg);
        else if (row.system == "finetune+dropout")
          reg = reg_dropout(cfg);
        else if (row.system == "finetune+map_l2")
          reg = reg_map_l2(cfg);
        else if (row.system == "finetune+tuneout")
          reg = reg_tuneout(cfg);
        else
          reg = reg_dropout_map_l2(cfg);
        TrainConfig tc = finetune_protocol(cfg, run_seed, ctx.in_train.size());
        TrainResult r = finetune(ctx.base, ctx.in_train, ctx.in_valid, reg, tc);
        FinetuneRun fr = score_on_test(std::move(r), ctx, refs);
        hyps = std::move(fr.test_hyps);
        bleu = fr.test_bleu;
      }
      row.seed_bleu.push_back(bleu);
      const auto stats = row.system == "out_domain_only" ? base_stats : corpus_stats(hyps, refs);
      row_stats[i].insert(row_stats[i].end(), stats.begin(), stats.end());
    }
    row.mean_bleu = mean_of(row.seed_bleu);
  }

  for (std::size_t i = 0; i < systems.size(); ++i) {
    TableRow& row = rows[i];
    const auto& base = row_stats[baseline_index];
    const std::uint64_t sig_seed =
        mix_seed({cfg.seed, hash_str("table_signif"), static_cast<std::uint64_t>(i)});
    row.p_row_over_base =
        bootstrap_significance(row_stats[i], base, cfg.n_resamples, sig_seed).p_value;
    row.p_base_over_row =
        bootstrap_significance(base, row_stats[i], cfg.n_resamples, sig_seed).p_value;
    row.significant = row.p_row_over_base < 0.05 || row.p_base_over_row < 0.05;
  }

  TableReport report;
  report.rows = rows;

  std::string text;
  text += "system                                 BLEU\n";
  for (const auto& row : rows) {
    std::string line = row.label;
    line.resize(36, ' ');
    line += fmt("%7.2f", row.mean_bleu);
    if (row.significant) line += "†";
    text += line + "\n";
  }
  text += "†: different from the plain fine-tuning row at 5% significance "
          "(paired bootstrap, both tails).\n";
  report.text = text;

  std::string machine;
  for (const auto& row : rows) {
    machine += "row=" + row.system;
    machine += " mean_bleu=" + fmt("%.4f", row.mean_bleu);
    machine += " p_row_over_base=" + fmt("%.4f", row.p_row_over_base);
    machine += " p_base_over_row=" + fmt("%.4f", row.p_base_over_row);
    machine += std::string(" significant=") + (row.significant ? "1" : "0");
    machine += " seed_bleu=";
    for (std::size_t s = 0; s < row.seed_bleu.size(); ++s) {
      if (s) machine += ",";
      machine += fmt("%.4f", row.seed_bleu[s]);
    }
    machine += "\n";
  }
  report.machine = machine;
  return report;
}

const std::vector<std::string>& curve_strategies() {
  static const std::vector<std::string> kStrategies = {
      "1epoch", "5epochs", "early_stop", "early_stop+dropout+map_l2",
      "5epochs+dropout+map_l2"};
  return kStrategies;
}

std::vector<int> default_curve_sizes() { return {10, 30, 100, 300, 1000, 2000}; }

StrategySpec parse_strategy(const std::string& name) {
  StrategySpec spec;
  std::string head = name;
  const std::string reg_suffix = "+dropout+map_l2";
  if (head.size() > reg_suffix.size() &&
      head.compare(head.size() - reg_suffix.size(), reg_suffix.size(), reg_suffix) == 0) {
    spec.regularized = true;
    head.resize(head.size() - reg_suffix.size());
  }
  auto parse_count = [&](const std::string& digits) {
    if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos)
      throw ConfigError("unknown strategy: " + name);
    const long k = std::strtol(digits.c_str(), nullptr, 10);
    if (k < 1 || k > 1000000) throw ConfigError("strategy epoch count out of range: " + name);
    spec.early_stop = false;
    spec.epochs = static_cast<int>(k);
  };
  if (head == "early_stop") {
    spec.early_stop = true;
  } else if (head.rfind("epochs:", 0) == 0) {
    parse_count(head.substr(7));
  } else if (head.size() > 6 && head.compare(head.size() - 6, 6, "epochs") == 0) {
    parse_count(head.substr(0, head.size() - 6));
  } else if (head.size() > 5 && head.compare(head.size() - 5, 5, "epoch") == 0) {
    parse_count(head.substr(0, head.size() - 5));
  } else {
    throw ConfigError("unknown strategy: " + name);
  }
  return spec;
}

std::vector<double> strategy_means(const CurveReport& report, const std::string& strategy,
                                   const std::vector<int>& sizes) {
  std::vector<double> means;
  for (int size : sizes) {
    double sum = 0.0;
    int n = 0;
    for (const auto& p : report.points)
      if (p.size == size && p.strategy == strategy) {
        sum += p.test_bleu;
        ++n;
      }
    if (n == 0) throw DataError("no curve points for strategy " + strategy + " at size " +
                                std::to_string(size));
    means.push_back(sum / n);
  }
  return means;
}

CurveReport run_curve(const ExperimentContext& ctx, const std::vector<int>& sizes,
                      const std::vector<std::string>& strategies, int n_seeds) {
  const ExperimentConfig& cfg = ctx.cfg;
  if (sizes.empty()) throw ConfigError("curve needs at least one size");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] < 1) throw ConfigError("curve sizes must be positive");
    if (static_cast<std::size_t>(sizes[i]) > ctx.in_train.size())
      throw ConfigError("curve size " + std::to_string(sizes[i]) +
                        " exceeds the in-domain corpus (" +
                        std::to_string(ctx.in_train.size()) + " pairs)");
    if (i > 0 && sizes[i] <= sizes[i - 1])
      throw ConfigError("curve sizes must be strictly ascending");
  }
  if (strategies.empty()) throw ConfigError("curve needs at least one strategy");
  if (n_seeds < 1) throw ConfigError("curve needs at least one seed");

  const auto refs = references(ctx.in_test);
  CurveReport report;
  report.csv = "size,strategy,seed,test_bleu,peak_valid_bleu,final_valid_bleu\n";

  for (int size : sizes) {
    for (const auto& strategy : strategies) {
      const StrategySpec spec = parse_strategy(strategy);
      for (int s = 0; s < n_seeds; ++s) {
        // The subset depends on (seed, size) only, so strategies at the same
        // cell fine-tune on identical data.
        const Corpus sub =
            subsample(ctx.in_train, static_cast<std::size_t>(size),
                      mix_seed({cfg.seed, hash_str("curve_subsample"),
                                static_cast<std::uint64_t>(size), static_cast<std::uint64_t>(s)}));
        const std::uint64_t run_seed =
            mix_seed({cfg.seed, hash_str("curve"), hash_str(strategy),
                      static_cast<std::uint64_t>(size), static_cast<std::uint64_t>(s)});
        TrainConfig tc = finetune_protocol(cfg, run_seed, sub.size());
        if (!spec.early_stop) {
          tc.early_stop = false;
          tc.max_epochs = spec.epochs;
        }
        const RegConfig reg = spec.regularized ? reg_dropout_map_l2(cfg) : reg_none(cfg);
        FinetuneRun fr =
            score_on_test(finetune(ctx.base, sub, ctx.in_valid, reg, tc), ctx, refs);

        CurvePoint point;
        point.size = size;
        point.strategy = strategy;
        point.seed = s;
        point.test_bleu = fr.test_bleu;
        point.peak_valid_bleu = fr.result.peak_valid_bleu;
        point.final_valid_bleu = fr.result.final_valid_bleu;
        report.points.push_back(point);

        char line[160];
        std::snprintf(line, sizeof(line), "%d,%s,%d,%.4f,%.4f,%.4f\n", size, strategy.c_str(),
                      s, point.test_bleu, point.peak_valid_bleu, point.final_valid_bleu);
        report.csv += line;
      }
    }
  }
  return report;
}

OverfitProbe run_overfit_probe(const ExperimentContext& ctx, int subset_pairs, int epochs,
                               int n_seeds, int validation_frequency) {
  const ExperimentConfig& cfg = ctx.cfg;
  if (subset_pairs < 1 || static_cast<std::size_t>(subset_pairs) > ctx.in_train.size())
    throw ConfigError("overfit probe subset size out of range");
  if (epochs < 1) throw ConfigError("overfit probe needs at least one epoch");
  if (n_seeds < 1) throw ConfigError("overfit probe needs at least one seed");
  if (validation_frequency < 1) throw ConfigError("validation_frequency must be at least 1");

  OverfitProbe probe;
  for (int arm = 0; arm < 2; ++arm) {
    const bool regularized = arm == 1;
    auto& runs = regularized ? probe.regularized : probe.unregularized;
    for (int s = 0; s < n_seeds; ++s) {
      const Corpus sub = subsample(ctx.in_train, static_cast<std::size_t>(subset_pairs),
                                   mix_seed({cfg.seed, hash_str("overfit_subsample"),
                                             static_cast<std::uint64_t>(s)}));
      TrainConfig tc;
      tc.batch_size = cfg.batch_size;
      tc.validation_frequency = validation_frequency;
      tc.patience = cfg.patience;
      tc.early_stop = false;
      tc.max_epochs = epochs;
      tc.seed = mix_seed({cfg.seed, hash_str("overfit"), hash_str(regularized ? "reg" : "unreg"),
                          static_cast<std::uint64_t>(s)});
      const RegConfig reg = regularized ? reg_dropout_map_l2(cfg) : reg_none(cfg);
      TrainResult r = finetune(ctx.base, sub, ctx.in_valid, reg, tc);
      runs.push_back({r.peak_valid_bleu, r.final_valid_bleu});
    }
  }
  double unreg = 0.0, regd = 0.0;
  for (const auto& r : probe.unregularized) unreg += r.gap();
  for (const auto& r : probe.regularized) regd += r.gap();
  probe.unreg_mean_gap = unreg / n_seeds;
  probe.reg_mean_gap = regd / n_seeds;
  return probe;
}

}  // namespace ftforge
