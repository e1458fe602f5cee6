// Command-line front end: data generation, training, fine-tuning, decoding,
// BLEU scoring, significance testing, and the two experiment harnesses.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ftforge/experiments.hpp"

namespace {

using namespace ftforge;

namespace fs = std::filesystem;

// Flat key=value config file; '#' starts a comment, blank lines are skipped.
class ConfigFile {
 public:
  static ConfigFile load(const std::string& path) {
    ConfigFile cf;
    if (path.empty()) return cf;
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos) continue;
      const auto last = line.find_last_not_of(" \t\r");
      line = line.substr(first, last - first + 1);
      const auto eq = line.find('=');
      if (eq == std::string::npos || eq == 0)
        throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key=value");
      std::string key = line.substr(0, eq);
      while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
      std::string value = line.substr(eq + 1);
      const auto vfirst = value.find_first_not_of(" \t");
      value = vfirst == std::string::npos ? std::string() : value.substr(vfirst);
      if (!cf.values_.emplace(key, value).second)
        throw ConfigError(path + ":" + std::to_string(line_no) + ": duplicate key " + key);
    }
    return cf;
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string str(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  long long integer(const std::string& key, long long fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::size_t pos = 0;
    long long v = 0;
    try {
      v = std::stoll(it->second, &pos);
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + " is not an integer: " + it->second);
    }
    if (pos != it->second.size())
      throw ConfigError("config key " + key + " is not an integer: " + it->second);
    return v;
  }

  double real(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(it->second, &pos);
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + " is not a number: " + it->second);
    }
    if (pos != it->second.size())
      throw ConfigError("config key " + key + " is not a number: " + it->second);
    return v;
  }

  bool boolean(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    throw ConfigError("config key " + key + " is not a boolean: " + v);
  }

  void reject_unknown(const std::vector<std::string>& known) const {
    for (const auto& [key, value] : values_) {
      (void)value;
      bool ok = false;
      for (const auto& k : known)
        if (k == key) ok = true;
      if (!ok) throw ConfigError("unknown config key: " + key);
    }
  }

 private:
  std::map<std::string, std::string> values_;
};

const std::vector<std::string>& known_config_keys() {
  static const std::vector<std::string> kKeys = {
      // task shape
      "content_vocab", "min_len", "max_len", "shared_fraction", "reverse", "identity_map",
      "zipf",
      // model
      "embed_dim", "hidden_dim", "max_decode_len",
      // training
      "batch_size", "validation_frequency", "patience", "early_stop", "max_epochs",
      // optimizer
      "opt_kind", "lr", "clip_norm",
      // regularization
      "retain_word", "retain_other", "lambda_map_l2",
      // experiment harness
      "out_train_pairs", "in_train_pairs", "valid_pairs", "test_pairs", "base_lr",
      "base_validation_frequency", "n_seeds", "n_resamples", "dropout_retain_word",
      "dropout_retain_other", "tuneout_retain_word", "tuneout_retain_other", "cache_dir",
  };
  return kKeys;
}

GenConfig gen_config_from(const ConfigFile& cf, std::uint64_t seed) {
  GenConfig g;
  g.content_vocab = static_cast<int>(cf.integer("content_vocab", g.content_vocab));
  g.min_len = static_cast<int>(cf.integer("min_len", g.min_len));
  g.max_len = static_cast<int>(cf.integer("max_len", g.max_len));
  g.shared_fraction = cf.real("shared_fraction", g.shared_fraction);
  g.reverse = cf.boolean("reverse", g.reverse);
  g.identity_map = cf.boolean("identity_map", g.identity_map);
  g.zipf = cf.boolean("zipf", g.zipf);
  g.seed = seed;
  return g;
}

TrainConfig train_config_from(const ConfigFile& cf, std::uint64_t seed) {
  TrainConfig tc;
  tc.batch_size = static_cast<int>(cf.integer("batch_size", tc.batch_size));
  tc.validation_frequency =
      static_cast<int>(cf.integer("validation_frequency", tc.validation_frequency));
  tc.patience = static_cast<int>(cf.integer("patience", tc.patience));
  tc.early_stop = cf.boolean("early_stop", tc.early_stop);
  tc.max_epochs = static_cast<int>(cf.integer("max_epochs", tc.max_epochs));
  tc.seed = seed;
  return tc;
}

OptimizerState optimizer_from(const ConfigFile& cf) {
  OptimizerState opt;
  opt.kind = opt_kind_from_name(cf.str("opt_kind", "adam"));
  opt.lr = cf.real("lr", opt.lr);
  opt.clip_norm = cf.real("clip_norm", opt.clip_norm);
  return opt;
}

ExperimentConfig experiment_config_from(const ConfigFile& cf, std::uint64_t seed,
                                        const std::string& cache_dir_flag) {
  ExperimentConfig ec;
  ec.gen = gen_config_from(cf, seed);
  ec.embed_dim = static_cast<int>(cf.integer("embed_dim", ec.embed_dim));
  ec.hidden_dim = static_cast<int>(cf.integer("hidden_dim", ec.hidden_dim));
  ec.max_decode_len = static_cast<int>(cf.integer("max_decode_len", ec.max_decode_len));
  ec.out_train_pairs = static_cast<int>(cf.integer("out_train_pairs", ec.out_train_pairs));
  ec.in_train_pairs = static_cast<int>(cf.integer("in_train_pairs", ec.in_train_pairs));
  ec.valid_pairs = static_cast<int>(cf.integer("valid_pairs", ec.valid_pairs));
  ec.test_pairs = static_cast<int>(cf.integer("test_pairs", ec.test_pairs));
  ec.base_lr = cf.real("base_lr", ec.base_lr);
  ec.clip_norm = cf.real("clip_norm", ec.clip_norm);
  ec.base_validation_frequency = static_cast<int>(
      cf.integer("base_validation_frequency", ec.base_validation_frequency));
  ec.patience = static_cast<int>(cf.integer("patience", ec.patience));
  ec.batch_size = static_cast<int>(cf.integer("batch_size", ec.batch_size));
  ec.n_seeds = static_cast<int>(cf.integer("n_seeds", ec.n_seeds));
  ec.n_resamples = static_cast<int>(cf.integer("n_resamples", ec.n_resamples));
  ec.dropout_retain_word = cf.real("dropout_retain_word", ec.dropout_retain_word);
  ec.dropout_retain_other = cf.real("dropout_retain_other", ec.dropout_retain_other);
  ec.tuneout_retain_word = cf.real("tuneout_retain_word", ec.tuneout_retain_word);
  ec.tuneout_retain_other = cf.real("tuneout_retain_other", ec.tuneout_retain_other);
  ec.lambda_map_l2 = cf.real("lambda_map_l2", ec.lambda_map_l2);
  ec.seed = seed;
  ec.cache_dir = cache_dir_flag.empty() ? cf.str("cache_dir", "") : cache_dir_flag;
  return ec;
}

std::vector<std::vector<std::string>> read_token_lines(const std::string& path,
                                                       bool allow_empty) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path);
  std::vector<std::vector<std::string>> lines;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> tokens;
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) tokens.push_back(tok);
    if (tokens.empty() && !allow_empty)
      throw DataError(path + ":" + std::to_string(line_no) + ": empty line");
    lines.push_back(std::move(tokens));
  }
  return lines;
}

void write_token_lines(const std::vector<std::vector<std::string>>& lines,
                       const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open file for writing: " + path);
  for (const auto& tokens : lines) {
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (i) out << ' ';
      out << tokens[i];
    }
    out << '\n';
  }
  if (!out) throw DataError("write failed: " + path);
}

void write_text(const std::string& text, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open file for writing: " + path);
  out << text;
  if (!out) throw DataError("write failed: " + path);
}

fs::path out_dir_ready(const std::string& out_dir) {
  fs::path dir(out_dir);
  fs::create_directories(dir);
  return dir;
}

Corpus corpus_from_prefix(const std::string& prefix) {
  return read_corpus(prefix + ".src", prefix + ".tgt");
}

RegConfig reg_from_cli(const std::string& reg_name, const ConfigFile& cf, bool retain_word_set,
                       double retain_word, bool retain_other_set, double retain_other,
                       bool lambda_set, double lambda) {
  RegConfig reg;
  double default_word = 0.9, default_other = 0.8, default_lambda = 0.0;
  if (reg_name == "none") {
    reg.mode = RegMode::off;
  } else if (reg_name == "dropout") {
    reg.mode = RegMode::dropout;
  } else if (reg_name == "map_l2") {
    reg.mode = RegMode::off;
    default_lambda = 1e-3;
  } else if (reg_name == "tuneout") {
    reg.mode = RegMode::tuneout;
    default_word = 0.6;
    default_other = 0.2;
  } else if (reg_name == "dropout+map_l2") {
    reg.mode = RegMode::dropout;
    default_lambda = 1e-3;
  } else {
    throw ConfigError("unknown --reg value: " + reg_name);
  }
  reg.retain_word = retain_word_set ? retain_word : cf.real("retain_word", default_word);
  reg.retain_other = retain_other_set ? retain_other : cf.real("retain_other", default_other);
  reg.lambda_map_l2 = lambda_set ? lambda : cf.real("lambda_map_l2", default_lambda);
  return reg;
}

int run(int argc, char** argv) {
  CLI::App app{"GRU transduction workbench: fine-tuning regularizers and their evaluation"};
  app.require_subcommand(1);

  std::string config_path, out_dir, cache_dir;
  std::uint64_t seed = 1;
  app.add_option("--seed", seed, "master random seed")->capture_default_str();
  app.add_option("--config", config_path, "key=value config file");
  app.add_option("--out", out_dir, "output directory");

  auto* gen_cmd = app.add_subcommand("gen-data", "generate the two-domain corpora");

  auto* train_cmd = app.add_subcommand("train", "train a model from scratch");
  std::string train_prefix, valid_prefix, vocab_path, base_path, model_path;
  train_cmd->add_option("--train", train_prefix, "training corpus prefix (.src/.tgt)")
      ->required();
  train_cmd->add_option("--valid", valid_prefix, "validation corpus prefix (.src/.tgt)");
  train_cmd->add_option("--vocab", vocab_path, "vocabulary file")->required();

  auto* ft_cmd = app.add_subcommand("finetune", "fine-tune from a base checkpoint");
  std::string reg_name = "none", strategy = "early_stop";
  double retain_word = 0.9, retain_other = 0.8, lambda = 0.0;
  ft_cmd->add_option("--base", base_path, "base checkpoint")->required();
  ft_cmd->add_option("--train", train_prefix, "training corpus prefix (.src/.tgt)")->required();
  ft_cmd->add_option("--valid", valid_prefix, "validation corpus prefix (.src/.tgt)");
  ft_cmd->add_option("--reg", reg_name, "dropout|map_l2|tuneout|dropout+map_l2|none")
      ->capture_default_str();
  auto* lambda_opt = ft_cmd->add_option("--lambda", lambda, "MAP-L2 penalty weight");
  auto* rw_opt = ft_cmd->add_option("--retain-word", retain_word, "word keep probability");
  auto* ro_opt = ft_cmd->add_option("--retain-other", retain_other, "other keep probability");
  ft_cmd->add_option("--strategy", strategy, "early_stop or epochs:<k>")->capture_default_str();

  auto* decode_cmd = app.add_subcommand("decode", "greedy-decode a source file");
  std::string input_path;
  decode_cmd->add_option("--model", model_path, "checkpoint to decode with")->required();
  decode_cmd->add_option("--input", input_path, "source sentences, one per line")->required();

  auto* bleu_cmd = app.add_subcommand("bleu", "corpus BLEU of a hypothesis file");
  std::string hyp_path, ref_path, hyp_a_path, hyp_b_path;
  bleu_cmd->add_option("--hyp", hyp_path, "hypothesis file")->required();
  bleu_cmd->add_option("--ref", ref_path, "reference file")->required();

  auto* sig_cmd = app.add_subcommand("significance", "paired bootstrap between two systems");
  sig_cmd->add_option("--hyp-a", hyp_a_path, "system A hypotheses")->required();
  sig_cmd->add_option("--hyp-b", hyp_b_path, "system B hypotheses")->required();
  sig_cmd->add_option("--ref", ref_path, "reference file")->required();

  auto* table_cmd = app.add_subcommand("table", "strategy comparison on the synthetic task");
  table_cmd->add_option("--cache-dir", cache_dir, "base checkpoint cache directory");

  auto* curve_cmd = app.add_subcommand("curve", "data-size sweep on the synthetic task");
  curve_cmd->add_option("--cache-dir", cache_dir, "base checkpoint cache directory");
  std::string sizes_arg;
  curve_cmd->add_option("--sizes", sizes_arg, "comma-separated in-domain sizes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const ConfigFile cf = ConfigFile::load(config_path);
  cf.reject_unknown(known_config_keys());

  if (gen_cmd->parsed()) {
    if (out_dir.empty()) throw ConfigError("gen-data requires --out");
    const fs::path dir = out_dir_ready(out_dir);
    ExperimentConfig ec = experiment_config_from(cf, seed, "");
    ec.gen.seed = seed;
    ec.gen.validate();
    const Vocab vocab = build_vocab(ec.gen);
    vocab.save((dir / "vocab.txt").string());
    struct Piece {
      const char* name;
      Domain domain;
      int pairs;
    };
    const Piece pieces[] = {
        {"out_train", Domain::out_domain, ec.out_train_pairs},
        {"out_valid", Domain::out_domain, ec.valid_pairs},
        {"in_train", Domain::in_domain, ec.in_train_pairs},
        {"in_valid", Domain::in_domain, ec.valid_pairs},
        {"in_test", Domain::in_domain, ec.test_pairs},
    };
    for (const auto& piece : pieces) {
      const Corpus c = generate_corpus(ec.gen, piece.domain, piece.pairs,
                                       mix_seed({seed, hash_str(piece.name)}));
      write_corpus(c, (dir / (std::string(piece.name) + ".src")).string(),
                   (dir / (std::string(piece.name) + ".tgt")).string());
      std::cout << piece.name << " pairs=" << c.size() << "\n";
    }
    std::cout << "vocab size=" << vocab.size() << " dir=" << dir.string() << "\n";
    return 0;
  }

  if (train_cmd->parsed()) {
    if (out_dir.empty()) throw ConfigError("train requires --out");
    const fs::path dir = out_dir_ready(out_dir);
    const Vocab vocab = Vocab::load(vocab_path);
    const Corpus train_data = corpus_from_prefix(train_prefix);
    const Corpus valid_data = valid_prefix.empty() ? Corpus{} : corpus_from_prefix(valid_prefix);
    ModelConfig mc;
    mc.vocab_size = vocab.size();
    mc.embed_dim = static_cast<int>(cf.integer("embed_dim", mc.embed_dim));
    mc.hidden_dim = static_cast<int>(cf.integer("hidden_dim", mc.hidden_dim));
    mc.max_decode_len = static_cast<int>(cf.integer("max_decode_len", mc.max_decode_len));
    const TrainConfig tc = train_config_from(cf, seed);
    const OptimizerState opt = optimizer_from(cf);
    RegConfig reg;
    reg.lambda_map_l2 = 0.0;
    const TrainResult r = train(mc, vocab, train_data, valid_data, reg, tc, opt);
    const std::string ckpt = (dir / "model.ckpt").string();
    save_checkpoint(r.ckpt, ckpt);
    std::cout << "checkpoint=" << ckpt << " updates=" << r.ckpt.updates
              << " peak_valid_bleu=" << fmt_double(r.peak_valid_bleu, 4)
              << " final_valid_bleu=" << fmt_double(r.final_valid_bleu, 4) << "\n";
    return 0;
  }

  if (ft_cmd->parsed()) {
    if (out_dir.empty()) throw ConfigError("finetune requires --out");
    const fs::path dir = out_dir_ready(out_dir);
    const Checkpoint base = load_checkpoint(base_path);
    const Corpus train_data = corpus_from_prefix(train_prefix);
    const Corpus valid_data = valid_prefix.empty() ? Corpus{} : corpus_from_prefix(valid_prefix);
    const RegConfig reg =
        reg_from_cli(reg_name, cf, rw_opt->count() > 0, retain_word, ro_opt->count() > 0,
                     retain_other, lambda_opt->count() > 0, lambda);
    TrainConfig tc = train_config_from(cf, seed);
    const StrategySpec spec = parse_strategy(strategy);
    if (spec.regularized)
      throw ConfigError("pick the regularizer with --reg, not in --strategy");
    tc.early_stop = spec.early_stop;
    if (!spec.early_stop) tc.max_epochs = spec.epochs;
    const TrainResult r = finetune(base, train_data, valid_data, reg, tc);
    const std::string ckpt = (dir / "model.ckpt").string();
    save_checkpoint(r.ckpt, ckpt);
    std::cout << "checkpoint=" << ckpt << " updates=" << r.ckpt.updates
              << " peak_valid_bleu=" << fmt_double(r.peak_valid_bleu, 4)
              << " final_valid_bleu=" << fmt_double(r.final_valid_bleu, 4) << "\n";
    return 0;
  }

  if (decode_cmd->parsed()) {
    const Checkpoint ckpt = load_checkpoint(model_path);
    const ParamBundle eff = inference_params(ckpt);
    const auto sources = read_token_lines(input_path, false);
    std::vector<std::vector<std::string>> hyps;
    hyps.reserve(sources.size());
    for (const auto& src : sources) {
      const std::vector<int> ids = encode_tokens(ckpt.vocab, src);
      hyps.push_back(decode_tokens(ckpt.vocab, greedy_decode(eff, ids)));
    }
    if (out_dir.empty()) {
      for (const auto& hyp : hyps) {
        for (std::size_t i = 0; i < hyp.size(); ++i) {
          if (i) std::cout << ' ';
          std::cout << hyp[i];
        }
        std::cout << '\n';
      }
    } else {
      const fs::path dir = out_dir_ready(out_dir);
      write_token_lines(hyps, (dir / "hyp.txt").string());
      std::cout << "hyp=" << (dir / "hyp.txt").string() << " sentences=" << hyps.size() << "\n";
    }
    return 0;
  }

  if (bleu_cmd->parsed()) {
    const auto hyps = read_token_lines(hyp_path, true);
    const auto refs = read_token_lines(ref_path, false);
    const BleuReport r = corpus_bleu(hyps, refs);
    std::cout << format_bleu_report(r);
    return 0;
  }

  if (sig_cmd->parsed()) {
    const auto hyp_a = read_token_lines(hyp_a_path, true);
    const auto hyp_b = read_token_lines(hyp_b_path, true);
    const auto refs = read_token_lines(ref_path, false);
    const int n_resamples = static_cast<int>(cf.integer("n_resamples", 1000));
    const SignificanceResult r = bootstrap_significance(hyp_a, hyp_b, refs, n_resamples, seed);
    std::cout << "p_value=" << fmt_double(r.p_value, 4) << " n_resamples=" << r.n_resamples
              << " wins_a=" << r.wins_a << " wins_b=" << r.wins_b << " ties=" << r.ties
              << " significant_at_5pct=" << (r.significant_at_5pct ? 1 : 0) << "\n";
    return 0;
  }

  if (table_cmd->parsed()) {
    const ExperimentConfig ec = experiment_config_from(cf, seed, cache_dir);
    const ExperimentContext ctx = prepare(ec);
    const TableReport report = run_table(ctx);
    std::cout << report.text;
    if (!out_dir.empty()) {
      const fs::path dir = out_dir_ready(out_dir);
      write_text(report.text, (dir / "table.txt").string());
      write_text(report.machine, (dir / "table.kv").string());
      std::cout << "table=" << (dir / "table.txt").string() << "\n";
    }
    return 0;
  }

  if (curve_cmd->parsed()) {
    const ExperimentConfig ec = experiment_config_from(cf, seed, cache_dir);
    std::vector<int> sizes = default_curve_sizes();
    if (!sizes_arg.empty()) {
      sizes.clear();
      std::istringstream ss(sizes_arg);
      std::string item;
      while (std::getline(ss, item, ',')) {
        try {
          std::size_t pos = 0;
          const int v = std::stoi(item, &pos);
          if (pos != item.size()) throw std::invalid_argument(item);
          sizes.push_back(v);
        } catch (const std::exception&) {
          throw ConfigError("bad --sizes entry: " + item);
        }
      }
    }
    const ExperimentContext ctx = prepare(ec);
    const CurveReport report = run_curve(ctx, sizes, curve_strategies(), ec.n_seeds);
    std::cout << report.csv;
    if (!out_dir.empty()) {
      const fs::path dir = out_dir_ready(out_dir);
      write_text(report.csv, (dir / "curve.csv").string());
      std::cout << "curve=" << (dir / "curve.csv").string() << "\n";
    }
    return 0;
  }

  throw ConfigError("no subcommand selected");
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
