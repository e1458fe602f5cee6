#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ftforge/common.hpp"

namespace ftforge {

// Token table. Ids 0..3 are always <pad>, <s>, </s>, <unk>; content tokens
// follow in insertion order.
class Vocab {
 public:
  Vocab();

  // Appends content tokens after the reserved slots. Invalid or duplicate
  // tokens raise VocabError.
  static Vocab from_tokens(const std::vector<std::string>& content_tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const;
  int id(std::string_view token) const;  // kUnkId when absent
  bool contains(std::string_view token) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  // Nonempty, printable, no whitespace.
  static bool valid_token(std::string_view t);

  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

 private:
  std::vector<std::string> tokens_;
  std::vector<std::pair<std::string, int>> index_;  // sorted for lookup

  void rebuild_index();
};

std::vector<int> encode_tokens(const Vocab& v, const std::vector<std::string>& words);
std::vector<std::string> decode_tokens(const Vocab& v, const std::vector<int>& ids);

struct SentencePair {
  std::vector<std::string> src, tgt;
  std::int64_t line_index = 0;
};

using Corpus = std::vector<SentencePair>;

// Parallel text: one sentence per line, single-space separated tokens. Line
// counts must match and no line may be empty.
Corpus read_corpus(const std::string& src_path, const std::string& tgt_path);
void write_corpus(const Corpus& c, const std::string& src_path,
                  const std::string& tgt_path);

// Seeded selection of n pairs, original order and line indices preserved.
Corpus subsample(const Corpus& c, std::size_t n, std::uint64_t seed);

// Synthetic two-domain transduction task. Both domains share one content
// vocabulary and the target-side reversal rule; each applies its own token
// bijection. The bijections agree on a `shared_fraction` subset of token
// types and disagree on every remaining type, so fine-tuning data carries
// genuinely new mapping evidence while the base model's vocabulary still
// covers it.
struct GenConfig {
  int content_vocab = 120;
  int min_len = 3;
  int max_len = 12;
  double shared_fraction = 0.7;  // both maps agree on floor(fraction * vocab) types
  bool reverse = true;
  bool identity_map = false;  // both domains map every token to itself
  bool zipf = false;          // rank-1/r source frequencies instead of uniform
  std::uint64_t seed = 0;     // fixes the maps; sentence draws take their own seed

  void validate() const;
};

enum class Domain { out_domain, in_domain };

std::string domain_name(Domain d);

struct DomainMaps {
  std::vector<int> out_map, in_map;    // content index -> content index
  std::vector<std::uint8_t> shared;    // 1 where both maps agree
};

DomainMaps build_domain_maps(const GenConfig& cfg);

Vocab build_vocab(const GenConfig& cfg);

Corpus generate_corpus(const GenConfig& cfg, Domain d, int n_pairs,
                       std::uint64_t sample_seed);

}  // namespace ftforge
