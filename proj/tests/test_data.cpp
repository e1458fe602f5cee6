#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <unistd.h>
#include <vector>

#include "ftforge/data.hpp"

using namespace ftforge;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("ftforge_data_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const char* name) const { return (path / name).string(); }
};

Corpus toy_corpus() {
  Corpus c;
  c.push_back({{"a", "b"}, {"b", "a"}, 0});
  c.push_back({{"c"}, {"c"}, 1});
  c.push_back({{"d", "e", "f"}, {"f", "e", "d"}, 2});
  return c;
}

}  // namespace

TEST_CASE("vocab reserves the control tokens") {
  const Vocab v = Vocab::from_tokens({"alpha", "beta"});
  CHECK(v.size() == 6);
  CHECK(v.token(kPadId) == "<pad>");
  CHECK(v.token(kBosId) == "<s>");
  CHECK(v.token(kEosId) == "</s>");
  CHECK(v.token(kUnkId) == "<unk>");
  CHECK(v.id("alpha") == 4);
  CHECK(v.id("beta") == 5);
  CHECK(v.id("missing") == kUnkId);
  CHECK(v.contains("alpha"));
  CHECK(!v.contains("missing"));
}

TEST_CASE("vocab rejects invalid and duplicate tokens") {
  CHECK_THROWS_AS(Vocab::from_tokens({"ok", "ok"}), VocabError);
  CHECK_THROWS_AS(Vocab::from_tokens({"has space"}), VocabError);
  CHECK_THROWS_AS(Vocab::from_tokens({""}), VocabError);
  CHECK_THROWS_AS(Vocab::from_tokens({"<pad>"}), VocabError);
}

TEST_CASE("vocab file round trip") {
  TempDir tmp;
  const Vocab v = Vocab::from_tokens({"x1", "x2", "x3"});
  v.save(tmp.file("vocab.txt"));
  const Vocab loaded = Vocab::load(tmp.file("vocab.txt"));
  CHECK(loaded.tokens() == v.tokens());

  std::ofstream bad(tmp.file("bad.txt"));
  bad << "<pad>\n<s>\nwrong\n<unk>\nx\n";
  bad.close();
  CHECK_THROWS_AS(Vocab::load(tmp.file("bad.txt")), DataError);
}

TEST_CASE("token encoding maps unknown words to <unk>") {
  const Vocab v = Vocab::from_tokens({"x", "y"});
  const std::vector<int> ids = encode_tokens(v, {"x", "zzz", "y"});
  CHECK(ids == std::vector<int>{4, kUnkId, 5});
  CHECK(decode_tokens(v, ids) == std::vector<std::string>{"x", "<unk>", "y"});
}

TEST_CASE("corpus round trip and error reporting") {
  TempDir tmp;
  const Corpus c = toy_corpus();

  SUBCASE("write then read is identity") {
    write_corpus(c, tmp.file("a.src"), tmp.file("a.tgt"));
    const Corpus back = read_corpus(tmp.file("a.src"), tmp.file("a.tgt"));
    REQUIRE(back.size() == c.size());
    for (std::size_t i = 0; i < c.size(); ++i) {
      CHECK(back[i].src == c[i].src);
      CHECK(back[i].tgt == c[i].tgt);
      CHECK(back[i].line_index == c[i].line_index);
    }
  }

  SUBCASE("line-count mismatch names both counts") {
    std::ofstream src(tmp.file("m.src"));
    for (int i = 0; i < 100; ++i) src << "tok\n";
    src.close();
    std::ofstream tgt(tmp.file("m.tgt"));
    for (int i = 0; i < 99; ++i) tgt << "tok\n";
    tgt.close();
    try {
      read_corpus(tmp.file("m.src"), tmp.file("m.tgt"));
      FAIL("expected DataError");
    } catch (const DataError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("100") != std::string::npos);
      CHECK(msg.find("99") != std::string::npos);
    }
  }

  SUBCASE("empty line names the line number") {
    std::ofstream src(tmp.file("e.src"));
    src << "a\n\nb\n";
    src.close();
    std::ofstream tgt(tmp.file("e.tgt"));
    tgt << "a\nb\nc\n";
    tgt.close();
    try {
      read_corpus(tmp.file("e.src"), tmp.file("e.tgt"));
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find(":2") != std::string::npos);
    }
  }
}

TEST_CASE("subsample") {
  GenConfig gen;
  gen.seed = 11;
  const Corpus corpus = generate_corpus(gen, Domain::in_domain, 60, 5);

  SUBCASE("full size returns every pair exactly once") {
    const Corpus all = subsample(corpus, corpus.size(), 3);
    REQUIRE(all.size() == corpus.size());
    for (std::size_t i = 0; i < all.size(); ++i)
      CHECK(all[i].line_index == corpus[i].line_index);
  }

  SUBCASE("same seed gives the same subset") {
    const Corpus a = subsample(corpus, 10, 42);
    const Corpus b = subsample(corpus, 10, 42);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
      CHECK(a[i].line_index == b[i].line_index);
  }

  SUBCASE("line indices are preserved from the source corpus") {
    const Corpus s = subsample(corpus, 10, 9);
    for (const auto& pair : s) {
      REQUIRE(pair.line_index >= 0);
      REQUIRE(pair.line_index < static_cast<std::int64_t>(corpus.size()));
      CHECK(corpus[pair.line_index].src == pair.src);
    }
  }

  SUBCASE("inclusion frequency is uniform across seeds") {
    const int n_seeds = 1000;
    const std::size_t k = 10;
    std::vector<int> included(corpus.size(), 0);
    for (int seed = 0; seed < n_seeds; ++seed) {
      const Corpus s = subsample(corpus, k, seed);
      for (const auto& pair : s) ++included[pair.line_index];
    }
    const double expect = static_cast<double>(n_seeds) * k / corpus.size();
    const double sigma = std::sqrt(expect * (1.0 - static_cast<double>(k) / corpus.size()));
    for (int count : included) {
      CHECK(count >= expect - 4.0 * sigma);
      CHECK(count <= expect + 4.0 * sigma);
    }
  }

  SUBCASE("oversized requests are rejected") {
    CHECK_THROWS_AS(subsample(corpus, corpus.size() + 1, 0), DataError);
    CHECK(subsample(corpus, 0, 0).empty());
  }
}

TEST_CASE("generator rules") {
  SUBCASE("identity map without reversal copies the source") {
    GenConfig gen;
    gen.identity_map = true;
    gen.reverse = false;
    gen.seed = 2;
    const Corpus c = generate_corpus(gen, Domain::out_domain, 50, 1);
    for (const auto& pair : c) CHECK(pair.src == pair.tgt);
  }

  SUBCASE("identity map with reversal reverses the source") {
    GenConfig gen;
    gen.identity_map = true;
    gen.seed = 2;
    const Corpus c = generate_corpus(gen, Domain::in_domain, 50, 1);
    for (const auto& pair : c) {
      std::vector<std::string> rev(pair.src.rbegin(), pair.src.rend());
      CHECK(pair.tgt == rev);
    }
  }

  SUBCASE("fully shared maps agree everywhere") {
    GenConfig gen;
    gen.shared_fraction = 1.0;
    gen.seed = 6;
    const DomainMaps maps = build_domain_maps(gen);
    CHECK(maps.out_map == maps.in_map);
    for (auto flag : maps.shared) CHECK(flag == 1);
  }

  SUBCASE("shared fraction 0.7 leaves 30% of token types differing") {
    GenConfig gen;
    gen.seed = 7;
    const DomainMaps maps = build_domain_maps(gen);
    int differing = 0;
    for (std::size_t i = 0; i < maps.out_map.size(); ++i)
      if (maps.out_map[i] != maps.in_map[i]) ++differing;
    CHECK(differing == 36);  // 120 - floor(0.7 * 120)

    // sampled source tokens hit a differing type 30% of the time
    const Corpus c = generate_corpus(gen, Domain::in_domain, 1500, 9);
    std::int64_t tokens = 0, hits = 0;
    const Vocab v = build_vocab(gen);
    for (const auto& pair : c)
      for (const auto& tok : pair.src) {
        const int content = v.id(tok) - kReservedTokens;
        REQUIRE(content >= 0);
        ++tokens;
        if (maps.out_map[content] != maps.in_map[content]) ++hits;
      }
    REQUIRE(tokens >= 10000);
    const double fraction = static_cast<double>(hits) / tokens;
    CHECK(fraction >= 0.28);
    CHECK(fraction <= 0.32);
  }

  SUBCASE("both domains apply their own bijection") {
    GenConfig gen;
    gen.seed = 13;
    const DomainMaps maps = build_domain_maps(gen);
    const Vocab v = build_vocab(gen);
    for (Domain d : {Domain::out_domain, Domain::in_domain}) {
      const auto& map = d == Domain::out_domain ? maps.out_map : maps.in_map;
      const Corpus c = generate_corpus(gen, d, 40, 3);
      for (const auto& pair : c) {
        REQUIRE(pair.src.size() == pair.tgt.size());
        const std::size_t n = pair.src.size();
        for (std::size_t i = 0; i < n; ++i) {
          const int content = v.id(pair.src[i]) - kReservedTokens;
          const std::string& mapped = v.token(map[content] + kReservedTokens);
          CHECK(pair.tgt[n - 1 - i] == mapped);  // reversal on by default
        }
      }
    }
  }

  SUBCASE("lengths respect the configured range") {
    GenConfig gen;
    gen.min_len = 3;
    gen.max_len = 12;
    gen.seed = 14;
    const Corpus c = generate_corpus(gen, Domain::out_domain, 400, 8);
    for (const auto& pair : c) {
      CHECK(pair.src.size() >= 3);
      CHECK(pair.src.size() <= 12);
    }
  }

  SUBCASE("uniform draws cover the vocabulary evenly") {
    GenConfig gen;
    gen.seed = 15;
    const Corpus c = generate_corpus(gen, Domain::out_domain, 3000, 2);
    std::map<std::string, int> counts;
    std::int64_t total = 0;
    for (const auto& pair : c)
      for (const auto& tok : pair.src) {
        ++counts[tok];
        ++total;
      }
    const double expect = static_cast<double>(total) / gen.content_vocab;
    for (const auto& [tok, count] : counts) {
      CHECK(count > expect / 2.0);
      CHECK(count < expect * 2.0);
    }
  }

  SUBCASE("zipf draws skew token frequencies") {
    GenConfig gen;
    gen.zipf = true;
    gen.seed = 15;
    const Corpus c = generate_corpus(gen, Domain::out_domain, 3000, 2);
    std::map<std::string, int> counts;
    for (const auto& pair : c)
      for (const auto& tok : pair.src) ++counts[tok];
    int max_count = 0, min_count = 1 << 30;
    for (const auto& [tok, count] : counts) {
      max_count = std::max(max_count, count);
      min_count = std::min(min_count, count);
    }
    CHECK(max_count > 5 * std::max(1, min_count));
  }

  SUBCASE("deterministic in all seeds") {
    GenConfig gen;
    gen.seed = 16;
    const Corpus a = generate_corpus(gen, Domain::in_domain, 30, 4);
    const Corpus b = generate_corpus(gen, Domain::in_domain, 30, 4);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].src == b[i].src);
      CHECK(a[i].tgt == b[i].tgt);
    }
  }

  SUBCASE("degenerate map requests are rejected") {
    GenConfig gen;
    gen.content_vocab = 10;
    gen.shared_fraction = 0.9;  // a single differing token cannot derange
    CHECK_THROWS_AS(build_domain_maps(gen), ConfigError);
  }

  SUBCASE("pair counts must be positive") {
    GenConfig gen;
    CHECK_THROWS_AS(generate_corpus(gen, Domain::out_domain, 0, 1), ConfigError);
  }
}
