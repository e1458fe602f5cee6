#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "ftforge/training.hpp"

using namespace ftforge;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("ftforge_train_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const char* name) const { return (path / name).string(); }
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

bool tensors_equal(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return std::memcmp(a.flat().data(), b.flat().data(),
                     a.flat().size() * sizeof(double)) == 0;
}

bool live_equal(const ParamBundle& a, const ParamBundle& b) {
  if (a.count() != b.count()) return false;
  for (int i = 0; i < a.count(); ++i)
    if (!tensors_equal(a.live(i), b.live(i))) return false;
  return true;
}

GenConfig copy_task(int vocab, int min_len, int max_len, std::uint64_t seed) {
  GenConfig gen;
  gen.content_vocab = vocab;
  gen.min_len = min_len;
  gen.max_len = max_len;
  gen.identity_map = true;
  gen.reverse = false;
  gen.seed = seed;
  return gen;
}

ModelConfig small_model(const Vocab& v, int embed, int hidden, int decode_len) {
  ModelConfig mc;
  mc.vocab_size = v.size();
  mc.embed_dim = embed;
  mc.hidden_dim = hidden;
  mc.max_decode_len = decode_len;
  return mc;
}

OptimizerState adam(double lr, double clip) {
  OptimizerState o;
  o.kind = OptKind::adam;
  o.lr = lr;
  o.clip_norm = clip;
  return o;
}

double mean_corpus_loss(const ParamBundle& p, const Vocab& v, const Corpus& c) {
  const auto enc = encode_corpus(v, c);
  const ParamLayout layout = param_layout(p);
  double total = 0.0;
  for (const auto& ex : enc)
    total += decode_train(p, layout, RegMode::off, MaskTable{}, ex.src, ex.tgt, nullptr);
  return total / static_cast<double>(enc.size());
}

}  // namespace

TEST_CASE("a ten-pair copy task is memorized within thirty epochs") {
  const GenConfig gen = copy_task(8, 2, 4, 3);
  const Vocab vocab = build_vocab(gen);
  const Corpus train_data = generate_corpus(gen, Domain::out_domain, 10, 21);
  const ModelConfig mc = small_model(vocab, 16, 24, 8);

  TrainConfig tc;
  tc.batch_size = 2;
  tc.validation_frequency = 1000;
  tc.early_stop = false;
  tc.max_epochs = 30;
  tc.seed = 5;
  const TrainResult res = train(mc, vocab, train_data, {}, RegConfig{}, tc,
                                adam(0.02, 1.0));
  const double loss = mean_corpus_loss(res.ckpt.params, vocab, train_data);
  CHECK(loss < 0.1);
}

TEST_CASE("greedy decoding solves the copy task after training") {
  const GenConfig gen = copy_task(6, 1, 4, 9);
  const Vocab vocab = build_vocab(gen);
  const Corpus train_data = generate_corpus(gen, Domain::out_domain, 600, 1);
  const Corpus valid_data = generate_corpus(gen, Domain::out_domain, 40, 2);
  const ModelConfig mc = small_model(vocab, 16, 32, 8);

  TrainConfig tc;
  tc.validation_frequency = 26;
  tc.patience = 10;
  tc.seed = 7;
  const TrainResult res =
      train(mc, vocab, train_data, valid_data, RegConfig{}, tc, adam(0.005, 1.0));

  const auto hyps = greedy_decode_corpus(res.ckpt.params, vocab, valid_data);
  int exact = 0;
  for (std::size_t i = 0; i < valid_data.size(); ++i)
    if (hyps[i] == valid_data[i].tgt) ++exact;
  CHECK(exact >= static_cast<int>(0.95 * valid_data.size()));
}

TEST_CASE("validation history tracks the best checkpoint") {
  const GenConfig gen = copy_task(6, 1, 3, 11);
  const Vocab vocab = build_vocab(gen);
  const Corpus train_data = generate_corpus(gen, Domain::out_domain, 24, 4);
  const ModelConfig mc = small_model(vocab, 12, 16, 6);

  TrainConfig tc;
  tc.batch_size = 8;
  tc.validation_frequency = 3;
  tc.patience = 4;
  tc.seed = 13;
  const TrainResult res =
      train(mc, vocab, train_data, train_data, RegConfig{}, tc, adam(0.02, 1.0));

  REQUIRE(!res.history.empty());
  double best = -1.0;
  for (const auto& point : res.history) best = std::max(best, point.bleu);
  CHECK(res.peak_valid_bleu == best);
  CHECK(res.final_valid_bleu == res.history.back().bleu);
  CHECK(res.ckpt.best_valid_bleu == best);

  // the returned parameters reproduce the peak score
  const double rescored =
      greedy_corpus_bleu(res.ckpt.params, vocab, train_data).bleu;
  CHECK(rescored == res.peak_valid_bleu);
}

TEST_CASE("patience of one stops at the second flat validation") {
  const GenConfig gen = copy_task(6, 2, 3, 17);
  const Vocab vocab = build_vocab(gen);
  const Corpus train_data = generate_corpus(gen, Domain::out_domain, 8, 6);
  const ModelConfig mc = small_model(vocab, 8, 10, 6);

  TrainConfig tc;
  tc.batch_size = 4;
  tc.validation_frequency = 2;  // once per epoch
  tc.patience = 1;
  tc.seed = 19;
  OptimizerState opt;
  opt.kind = OptKind::sgd;
  opt.lr = 1e-300;  // updates are numerically invisible, so the metric is flat
  opt.clip_norm = 0.0;
  const TrainResult res =
      train(mc, vocab, train_data, train_data, RegConfig{}, tc, opt);

  CHECK(res.history.size() == 2);
  CHECK(res.history[0].update == 2);
  CHECK(res.history[1].update == 4);
  CHECK(res.ckpt.updates == 2);  // ties keep the earlier checkpoint
  CHECK(res.final_valid_bleu == res.peak_valid_bleu);
}

TEST_CASE("fixed-epoch mode runs an exact update budget") {
  const GenConfig gen = copy_task(6, 2, 3, 23);
  const Vocab vocab = build_vocab(gen);
  const Corpus train_data = generate_corpus(gen, Domain::out_domain, 37, 8);
  const Corpus valid_data = generate_corpus(gen, Domain::out_domain, 6, 9);
  const ModelConfig mc = small_model(vocab, 8, 10, 6);

  TrainConfig tc;
  tc.validation_frequency = 500;
  tc.early_stop = false;
  tc.max_epochs = 1;
  tc.seed = 29;
  TrainResult res =
      train(mc, vocab, train_data, valid_data, RegConfig{}, tc, adam(1e-3, 1.0));
  CHECK(res.ckpt.updates == 3);  // ceil(37 / 16)
  CHECK(res.history.size() == 1);  // only the final validation

  tc.max_epochs = 2;
  res = train(mc, vocab, train_data, valid_data, RegConfig{}, tc, adam(1e-3, 1.0));
  CHECK(res.ckpt.updates == 6);
}

TEST_CASE("a zero-epoch fine-tune is a decode no-op") {
  const GenConfig gen = copy_task(8, 2, 4, 31);
  const Vocab vocab = build_vocab(gen);
  const Corpus out_data = generate_corpus(gen, Domain::out_domain, 32, 10);
  const Corpus in_data = generate_corpus(gen, Domain::in_domain, 16, 11);
  const ModelConfig mc = small_model(vocab, 12, 16, 8);

  TrainConfig tc;
  tc.early_stop = false;
  tc.max_epochs = 2;
  tc.seed = 37;
  const TrainResult base =
      train(mc, vocab, out_data, {}, RegConfig{}, tc, adam(1e-3, 1.0));

  TrainConfig noop;
  noop.early_stop = false;
  noop.max_epochs = 0;
  noop.seed = 41;
  const TrainResult ft = finetune(base.ckpt, in_data, {}, RegConfig{}, noop);

  CHECK(ft.ckpt.updates == 0);
  CHECK(live_equal(ft.ckpt.params, base.ckpt.params));
  CHECK(ft.ckpt.params.has_prior());
  const auto before = greedy_decode_corpus(base.ckpt.params, vocab, in_data);
  const auto after = greedy_decode_corpus(ft.ckpt.params, vocab, in_data);
  CHECK(before == after);
}

TEST_CASE("an overwhelming MAP penalty pins fine-tuning to the base") {
  const GenConfig gen = copy_task(10, 2, 5, 43);
  const Vocab vocab = build_vocab(gen);
  const Corpus out_data = generate_corpus(gen, Domain::out_domain, 60, 12);
  const Corpus in_data = generate_corpus(gen, Domain::in_domain, 60, 13);
  const Corpus in_valid = generate_corpus(gen, Domain::in_domain, 30, 14);
  const ModelConfig mc = small_model(vocab, 12, 16, 8);

  TrainConfig tc;
  tc.early_stop = false;
  tc.max_epochs = 3;
  tc.seed = 47;
  const TrainResult base =
      train(mc, vocab, out_data, {}, RegConfig{}, tc, adam(1e-3, 1.0));

  RegConfig reg;
  reg.lambda_map_l2 = 1e6;
  TrainConfig ft_tc;
  ft_tc.early_stop = false;
  ft_tc.max_epochs = 5;
  ft_tc.seed = 53;
  const TrainResult ft = finetune(base.ckpt, in_data, {}, reg, ft_tc);

  double max_drift = 0.0;
  for (int i = 0; i < ft.ckpt.params.count(); ++i) {
    const auto& live = ft.ckpt.params.live(i).flat();
    const auto& prior = ft.ckpt.params.prior(i).flat();
    for (std::size_t k = 0; k < live.size(); ++k)
      max_drift = std::max(max_drift, std::abs(live[k] - prior[k]));
  }
  CHECK(max_drift < 1e-2);

  const double base_bleu = greedy_corpus_bleu(base.ckpt.params, vocab, in_valid).bleu;
  const double ft_bleu = greedy_corpus_bleu(ft.ckpt.params, vocab, in_valid).bleu;
  CHECK(std::abs(base_bleu - ft_bleu) <= 1.0);
}

TEST_CASE("the prior is never touched while fine-tuning") {
  const GenConfig gen = copy_task(8, 2, 4, 59);
  const Vocab vocab = build_vocab(gen);
  const Corpus out_data = generate_corpus(gen, Domain::out_domain, 32, 15);
  const Corpus in_data = generate_corpus(gen, Domain::in_domain, 24, 16);
  const ModelConfig mc = small_model(vocab, 10, 12, 8);

  TrainConfig tc;
  tc.early_stop = false;
  tc.max_epochs = 2;
  tc.seed = 61;
  const TrainResult base =
      train(mc, vocab, out_data, {}, RegConfig{}, tc, adam(1e-3, 1.0));

  RegConfig reg;
  reg.mode = RegMode::dropout;
  reg.lambda_map_l2 = 1e-3;
  TrainConfig ft_tc;
  ft_tc.early_stop = false;
  ft_tc.max_epochs = 2;
  ft_tc.seed = 67;
  const TrainResult ft = finetune(base.ckpt, in_data, {}, reg, ft_tc);

  REQUIRE(ft.ckpt.params.has_prior());
  bool moved = false;
  for (int i = 0; i < ft.ckpt.params.count(); ++i) {
    CHECK(tensors_equal(ft.ckpt.params.prior(i), base.ckpt.params.live(i)));
    if (!tensors_equal(ft.ckpt.params.live(i), base.ckpt.params.live(i))) moved = true;
  }
  CHECK(moved);  // the live weights did train
}

TEST_CASE("training is bitwise deterministic") {
  const GenConfig gen = copy_task(8, 2, 4, 71);
  const Vocab vocab = build_vocab(gen);
  const Corpus train_data = generate_corpus(gen, Domain::out_domain, 12, 17);
  const ModelConfig mc = small_model(vocab, 10, 12, 8);

  RegConfig reg;
  reg.mode = RegMode::dropout;
  TrainConfig tc;
  tc.batch_size = 4;
  tc.early_stop = false;
  tc.max_epochs = 2;
  tc.validation_frequency = 100;
  tc.seed = 73;
  const TrainResult a = train(mc, vocab, train_data, {}, reg, tc, adam(1e-3, 1.0));
  const TrainResult b = train(mc, vocab, train_data, {}, reg, tc, adam(1e-3, 1.0));
  CHECK(live_equal(a.ckpt.params, b.ckpt.params));
  CHECK(a.ckpt.updates == b.ckpt.updates);
}

TEST_CASE("training argument errors") {
  const GenConfig gen = copy_task(8, 2, 4, 79);
  const Vocab vocab = build_vocab(gen);
  const Corpus data = generate_corpus(gen, Domain::out_domain, 8, 18);
  const ModelConfig mc = small_model(vocab, 8, 10, 8);
  TrainConfig tc;
  tc.seed = 83;

  SUBCASE("empty training corpus") {
    CHECK_THROWS_AS(train(mc, vocab, {}, data, RegConfig{}, tc, adam(1e-3, 1.0)),
                    DataError);
  }
  SUBCASE("early stopping needs validation data") {
    CHECK_THROWS_AS(train(mc, vocab, data, {}, RegConfig{}, tc, adam(1e-3, 1.0)),
                    ConfigError);
  }
  SUBCASE("regularizers that difference against a base need one") {
    RegConfig tuneout;
    tuneout.mode = RegMode::tuneout;
    CHECK_THROWS_AS(train(mc, vocab, data, data, tuneout, tc, adam(1e-3, 1.0)),
                    ConfigError);
    RegConfig map;
    map.lambda_map_l2 = 1e-3;
    CHECK_THROWS_AS(train(mc, vocab, data, data, map, tc, adam(1e-3, 1.0)),
                    ConfigError);
  }
  SUBCASE("vocabulary size must match the model") {
    ModelConfig wrong = mc;
    wrong.vocab_size = mc.vocab_size + 1;
    CHECK_THROWS_AS(train(wrong, vocab, data, data, RegConfig{}, tc, adam(1e-3, 1.0)),
                    ConfigError);
  }
  SUBCASE("config field validation") {
    TrainConfig bad = tc;
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = tc;
    bad.validation_frequency = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = tc;
    bad.patience = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = tc;
    bad.max_epochs = -1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }
}

TEST_CASE("fine-tuning rejects corpora outside the base vocabulary") {
  const GenConfig gen = copy_task(8, 2, 4, 89);
  const Vocab vocab = build_vocab(gen);
  const Corpus out_data = generate_corpus(gen, Domain::out_domain, 16, 19);
  const ModelConfig mc = small_model(vocab, 8, 10, 8);

  TrainConfig tc;
  tc.early_stop = false;
  tc.max_epochs = 1;
  tc.seed = 97;
  const TrainResult base =
      train(mc, vocab, out_data, {}, RegConfig{}, tc, adam(1e-3, 1.0));

  GenConfig wide = copy_task(12, 2, 4, 89);  // tokens w008..w011 are unknown
  const Corpus alien = generate_corpus(wide, Domain::out_domain, 16, 20);
  CHECK_THROWS_AS(finetune(base.ckpt, alien, {}, RegConfig{}, tc), ConfigError);
}

TEST_CASE("checkpoint files") {
  TempDir tmp;
  const GenConfig gen = copy_task(8, 2, 4, 101);
  const Vocab vocab = build_vocab(gen);
  ModelConfig mc = small_model(vocab, 6, 8, 8);

  Checkpoint ck;
  ck.model = mc;
  ck.vocab = vocab;
  ck.reg.mode = RegMode::dropout;
  ck.reg.retain_word = 0.9;
  ck.reg.retain_other = 0.8;
  ck.updates = 7;
  ck.best_valid_bleu = 12.5;
  ck.params = ParamBundle::init_random(mc, 103);

  SUBCASE("save, load, save is byte identical") {
    save_checkpoint(ck, tmp.file("a.ckpt"));
    const Checkpoint loaded = load_checkpoint(tmp.file("a.ckpt"));
    save_checkpoint(loaded, tmp.file("b.ckpt"));
    CHECK(read_file(tmp.file("a.ckpt")) == read_file(tmp.file("b.ckpt")));
    CHECK(live_equal(loaded.params, ck.params));
    CHECK(loaded.updates == 7);
    CHECK(loaded.best_valid_bleu == 12.5);
    CHECK(loaded.reg.mode == RegMode::dropout);
    CHECK(loaded.vocab.tokens() == vocab.tokens());
  }

  SUBCASE("prior and delta round trip to the same effective weights") {
    ck.params.snapshot_prior();
    ck.params.init_delta_zero();
    ck.params.delta(2).at(1, 3) = 0.25;  // a real adaptation direction
    ck.params.delta(5).at(0, 0) = -0.5;
    save_checkpoint(ck, tmp.file("t.ckpt"));
    const Checkpoint loaded = load_checkpoint(tmp.file("t.ckpt"));
    REQUIRE(loaded.params.has_prior());
    REQUIRE(loaded.params.has_delta());
    const ParamBundle eff_saved = effective_params(ck.params, RegMode::tuneout);
    const ParamBundle eff_loaded = effective_params(loaded.params, RegMode::tuneout);
    CHECK(live_equal(eff_saved, eff_loaded));
    save_checkpoint(loaded, tmp.file("t2.ckpt"));
    CHECK(read_file(tmp.file("t.ckpt")) == read_file(tmp.file("t2.ckpt")));
  }

  SUBCASE("corruption is reported by failure mode") {
    save_checkpoint(ck, tmp.file("c.ckpt"));
    const std::string good = read_file(tmp.file("c.ckpt"));

    write_file(tmp.file("trunc.ckpt"), good.substr(0, good.size() - 30));
    CHECK_THROWS_AS(load_checkpoint(tmp.file("trunc.ckpt")), CheckpointPayloadError);

    std::string bad_magic = good;
    bad_magic[0] = 'X';
    write_file(tmp.file("magic.ckpt"), bad_magic);
    CHECK_THROWS_AS(load_checkpoint(tmp.file("magic.ckpt")), CheckpointHeaderError);

    std::string bad_version = good;
    bad_version.replace(bad_version.find("v1"), 2, "v2");
    write_file(tmp.file("ver.ckpt"), bad_version);
    CHECK_THROWS_AS(load_checkpoint(tmp.file("ver.ckpt")), CheckpointVersionError);

    std::string bad_header = good;
    bad_header.insert(bad_header.find('\n', bad_header.find('\n') + 1), " bogus=1");
    write_file(tmp.file("hdr.ckpt"), bad_header);
    CHECK_THROWS_AS(load_checkpoint(tmp.file("hdr.ckpt")), CheckpointHeaderError);

    std::string bad_payload = good;
    const std::size_t payload = bad_payload.find("\n\n") + 2;
    bad_payload[payload] = 'x';
    write_file(tmp.file("pay.ckpt"), bad_payload);
    CHECK_THROWS_AS(load_checkpoint(tmp.file("pay.ckpt")), CheckpointPayloadError);

    write_file(tmp.file("tail.ckpt"), good + "extra\n");
    CHECK_THROWS_AS(load_checkpoint(tmp.file("tail.ckpt")), CheckpointPayloadError);
  }

  SUBCASE("unreadable path") {
    CHECK_THROWS_AS(load_checkpoint(tmp.file("missing.ckpt")), DataError);
  }
}
