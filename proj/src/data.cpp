#include "ftforge/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace ftforge {

namespace {

const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> r = {"<pad>", "<s>", "</s>", "<unk>"};
  return r;
}

}  // namespace

Vocab::Vocab() {
  tokens_ = reserved_tokens();
  rebuild_index();
}

Vocab Vocab::from_tokens(const std::vector<std::string>& content_tokens) {
  Vocab v;
  for (const std::string& t : content_tokens) {
    if (!valid_token(t)) throw VocabError("invalid token: '" + t + "'");
    if (v.contains(t)) throw VocabError("duplicate token: '" + t + "'");
    v.tokens_.push_back(t);
    v.rebuild_index();  // quadratic, but vocabularies here are small
  }
  return v;
}

void Vocab::rebuild_index() {
  index_.clear();
  index_.reserve(tokens_.size());
  for (int i = 0; i < static_cast<int>(tokens_.size()); ++i)
    index_.emplace_back(tokens_[i], i);
  std::sort(index_.begin(), index_.end());
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size())
    throw VocabError("token id " + std::to_string(id) + " outside vocabulary of size " +
                     std::to_string(size()));
  return tokens_[id];
}

int Vocab::id(std::string_view t) const {
  auto it = std::lower_bound(index_.begin(), index_.end(), t,
                             [](const auto& p, std::string_view s) { return p.first < s; });
  if (it != index_.end() && it->first == t) return it->second;
  return kUnkId;
}

bool Vocab::contains(std::string_view t) const {
  auto it = std::lower_bound(index_.begin(), index_.end(), t,
                             [](const auto& p, std::string_view s) { return p.first < s; });
  return it != index_.end() && it->first == t;
}

bool Vocab::valid_token(std::string_view t) {
  if (t.empty()) return false;
  for (unsigned char c : t) {
    if (std::isspace(c) || !std::isprint(c)) return false;
  }
  return true;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  for (const std::string& t : tokens_) out << t << '\n';
  if (!out) throw DataError("write failed: " + path);
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  if (lines.size() < reserved_tokens().size())
    throw DataError("vocabulary file too short: " + path);
  for (std::size_t i = 0; i < reserved_tokens().size(); ++i) {
    if (lines[i] != reserved_tokens()[i])
      throw DataError("vocabulary file " + path + " line " + std::to_string(i + 1) +
                      " must be " + reserved_tokens()[i] + ", got '" + lines[i] + "'");
  }
  return from_tokens({lines.begin() + reserved_tokens().size(), lines.end()});
}

std::vector<int> encode_tokens(const Vocab& v, const std::vector<std::string>& words) {
  std::vector<int> ids;
  ids.reserve(words.size());
  for (const std::string& w : words) ids.push_back(v.id(w));
  return ids;
}

std::vector<std::string> decode_tokens(const Vocab& v, const std::vector<int>& ids) {
  std::vector<std::string> words;
  words.reserve(ids.size());
  for (int id : ids) words.push_back(v.token(id));
  return words;
}

namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string w;
  while (ss >> w) out.push_back(std::move(w));
  return out;
}

std::vector<std::vector<std::string>> read_token_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path);
  std::vector<std::vector<std::string>> lines;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto toks = split_ws(line);
    if (toks.empty())
      throw DataError(path + ":" + std::to_string(lineno) + ": empty line");
    lines.push_back(std::move(toks));
  }
  return lines;
}

}  // namespace

Corpus read_corpus(const std::string& src_path, const std::string& tgt_path) {
  auto src = read_token_lines(src_path);
  auto tgt = read_token_lines(tgt_path);
  if (src.size() != tgt.size())
    throw DataError("line count mismatch: " + src_path + " has " +
                    std::to_string(src.size()) + " lines, " + tgt_path + " has " +
                    std::to_string(tgt.size()));
  Corpus c;
  c.reserve(src.size());
  for (std::size_t i = 0; i < src.size(); ++i)
    c.push_back({std::move(src[i]), std::move(tgt[i]), static_cast<std::int64_t>(i)});
  return c;
}

void write_corpus(const Corpus& c, const std::string& src_path,
                  const std::string& tgt_path) {
  auto write_side = [](const std::string& path, auto get) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    for (const auto& toks : get()) {
      for (std::size_t i = 0; i < toks.size(); ++i) {
        if (i) out << ' ';
        out << toks[i];
      }
      out << '\n';
    }
    if (!out) throw DataError("write failed: " + path);
  };
  write_side(src_path, [&] {
    std::vector<std::vector<std::string>> v;
    for (const auto& p : c) v.push_back(p.src);
    return v;
  });
  write_side(tgt_path, [&] {
    std::vector<std::vector<std::string>> v;
    for (const auto& p : c) v.push_back(p.tgt);
    return v;
  });
}

Corpus subsample(const Corpus& c, std::size_t n, std::uint64_t seed) {
  if (n > c.size())
    throw DataError("cannot subsample " + std::to_string(n) + " pairs from " +
                    std::to_string(c.size()));
  std::vector<std::size_t> idx(c.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(mix_seed({seed, hash_str("subsample")}));
  rng.shuffle(idx);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  Corpus out;
  out.reserve(n);
  for (std::size_t i : idx) out.push_back(c[i]);
  return out;
}

void GenConfig::validate() const {
  if (content_vocab < 2) throw ConfigError("content_vocab must be >= 2");
  if (min_len < 1) throw ConfigError("min_len must be positive");
  if (max_len < min_len) throw ConfigError("max_len must be >= min_len");
  if (!(shared_fraction >= 0.0 && shared_fraction <= 1.0))
    throw ConfigError("shared_fraction must be in [0, 1]");
}

std::string domain_name(Domain d) {
  return d == Domain::out_domain ? "out_domain" : "in_domain";
}

DomainMaps build_domain_maps(const GenConfig& cfg) {
  cfg.validate();
  const int v = cfg.content_vocab;
  DomainMaps maps;
  maps.out_map.resize(v);
  std::iota(maps.out_map.begin(), maps.out_map.end(), 0);
  if (cfg.identity_map) {
    maps.in_map = maps.out_map;
    maps.shared.assign(v, 1);
    return maps;
  }
  Rng map_rng(mix_seed({cfg.seed, hash_str("out_map")}));
  map_rng.shuffle(maps.out_map);

  std::vector<int> order(v);
  std::iota(order.begin(), order.end(), 0);
  Rng shared_rng(mix_seed({cfg.seed, hash_str("shared_set")}));
  shared_rng.shuffle(order);
  const int n_shared = static_cast<int>(std::floor(cfg.shared_fraction * v));
  maps.shared.assign(v, 0);
  for (int i = 0; i < n_shared; ++i) maps.shared[order[i]] = 1;

  std::vector<int> differing(order.begin() + n_shared, order.end());
  std::sort(differing.begin(), differing.end());
  if (differing.size() == 1)
    throw ConfigError("exactly one differing token type cannot be remapped "
                      "differently; adjust shared_fraction or content_vocab");

  maps.in_map = maps.out_map;
  if (!differing.empty()) {
    std::vector<int> images;
    images.reserve(differing.size());
    for (int d : differing) images.push_back(maps.out_map[d]);
    Rng derange_rng(mix_seed({cfg.seed, hash_str("derange")}));
    std::vector<int> perm(images.size());
    for (bool ok = false; !ok;) {
      std::iota(perm.begin(), perm.end(), 0);
      derange_rng.shuffle(perm);
      ok = true;
      for (std::size_t i = 0; i < perm.size(); ++i) {
        if (perm[i] == static_cast<int>(i)) {
          ok = false;
          break;
        }
      }
    }
    for (std::size_t i = 0; i < differing.size(); ++i)
      maps.in_map[differing[i]] = images[perm[i]];
  }
  return maps;
}

Vocab build_vocab(const GenConfig& cfg) {
  cfg.validate();
  std::vector<std::string> toks;
  toks.reserve(cfg.content_vocab);
  char buf[16];
  for (int i = 0; i < cfg.content_vocab; ++i) {
    std::snprintf(buf, sizeof(buf), "w%03d", i);
    toks.emplace_back(buf);
  }
  return Vocab::from_tokens(toks);
}

Corpus generate_corpus(const GenConfig& cfg, Domain d, int n_pairs,
                       std::uint64_t sample_seed) {
  cfg.validate();
  if (n_pairs < 1) throw ConfigError("n_pairs must be positive");
  const DomainMaps maps = build_domain_maps(cfg);
  const std::vector<int>& map = d == Domain::out_domain ? maps.out_map : maps.in_map;
  const int v = cfg.content_vocab;

  // Optional Zipf frequencies over a per-domain rank order, so the domains
  // can also differ in which token types are common.
  std::vector<int> freq_order(v);
  std::iota(freq_order.begin(), freq_order.end(), 0);
  std::vector<double> cum;
  double total = 0.0;
  if (cfg.zipf) {
    Rng freq_rng(mix_seed({cfg.seed, hash_str("freq"), hash_str(domain_name(d))}));
    freq_rng.shuffle(freq_order);
    cum.resize(v);
    for (int r = 0; r < v; ++r) {
      total += 1.0 / (r + 1);
      cum[r] = total;
    }
  }

  Vocab vocab = build_vocab(cfg);
  Rng rng(mix_seed({cfg.seed, hash_str("sample"), hash_str(domain_name(d)), sample_seed}));
  auto draw_token = [&] {
    if (!cfg.zipf) return static_cast<int>(rng.below(v));
    const double u = rng.uniform() * total;
    const int rank =
        static_cast<int>(std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
    return freq_order[std::min(rank, v - 1)];
  };
  Corpus out;
  out.reserve(n_pairs);
  for (int i = 0; i < n_pairs; ++i) {
    const int len = cfg.min_len + static_cast<int>(rng.below(cfg.max_len - cfg.min_len + 1));
    SentencePair p;
    p.line_index = i;
    p.src.reserve(len);
    p.tgt.reserve(len);
    std::vector<int> mapped;
    mapped.reserve(len);
    for (int t = 0; t < len; ++t) {
      const int tok = draw_token();
      p.src.push_back(vocab.token(kReservedTokens + tok));
      mapped.push_back(map[tok]);
    }
    if (cfg.reverse) std::reverse(mapped.begin(), mapped.end());
    for (int tok : mapped) p.tgt.push_back(vocab.token(kReservedTokens + tok));
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace ftforge
