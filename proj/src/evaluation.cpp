#include "ftforge/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>

namespace ftforge {

SentenceBleuStats& SentenceBleuStats::operator+=(const SentenceBleuStats& o) {
  for (int n = 0; n < 4; ++n) {
    match[n] += o.match[n];
    total[n] += o.total[n];
  }
  hyp_len += o.hyp_len;
  ref_len += o.ref_len;
  return *this;
}

namespace {

// n-grams keyed by tokens joined with an unlikely separator byte.
std::unordered_map<std::string, std::int64_t> ngram_counts(
    const std::vector<std::string>& toks, int n) {
  std::unordered_map<std::string, std::int64_t> counts;
  if (static_cast<int>(toks.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    std::string key;
    for (int j = 0; j < n; ++j) {
      if (j) key += '\x1f';
      key += toks[i + j];
    }
    ++counts[key];
  }
  return counts;
}

}  // namespace

SentenceBleuStats sentence_stats(const std::vector<std::string>& hyp,
                                 const std::vector<std::string>& ref) {
  SentenceBleuStats s;
  s.hyp_len = static_cast<std::int64_t>(hyp.size());
  s.ref_len = static_cast<std::int64_t>(ref.size());
  for (int n = 1; n <= 4; ++n) {
    const std::int64_t total =
        std::max<std::int64_t>(0, static_cast<std::int64_t>(hyp.size()) - n + 1);
    s.total[n - 1] = total;
    if (total == 0) continue;
    auto h = ngram_counts(hyp, n);
    auto r = ngram_counts(ref, n);
    std::int64_t matched = 0;
    for (const auto& [key, count] : h) {
      auto it = r.find(key);
      if (it != r.end()) matched += std::min(count, it->second);
    }
    s.match[n - 1] = matched;
  }
  return s;
}

BleuReport bleu_from_stats(const SentenceBleuStats& t) {
  BleuReport r;
  r.hyp_len = t.hyp_len;
  r.ref_len = t.ref_len;
  if (t.hyp_len == 0) return r;
  r.brevity_penalty =
      std::min(1.0, std::exp(1.0 - static_cast<double>(t.ref_len) / t.hyp_len));
  double log_sum = 0.0;
  bool any_zero = false;
  for (int n = 0; n < 4; ++n) {
    r.precision[n] = t.total[n] > 0 ? static_cast<double>(t.match[n]) / t.total[n] : 0.0;
    if (r.precision[n] <= 0.0) {
      any_zero = true;
    } else {
      log_sum += 0.25 * std::log(r.precision[n]);
    }
  }
  r.bleu = any_zero ? 0.0 : 100.0 * r.brevity_penalty * std::exp(log_sum);
  return r;
}

std::vector<SentenceBleuStats> corpus_stats(
    const std::vector<std::vector<std::string>>& hyps,
    const std::vector<std::vector<std::string>>& refs) {
  if (hyps.size() != refs.size())
    throw DataError("hypothesis/reference count mismatch: " + std::to_string(hyps.size()) +
                    " vs " + std::to_string(refs.size()));
  if (refs.empty()) throw DataError("empty reference set");
  std::vector<SentenceBleuStats> out;
  out.reserve(hyps.size());
  for (std::size_t i = 0; i < hyps.size(); ++i)
    out.push_back(sentence_stats(hyps[i], refs[i]));
  return out;
}

BleuReport corpus_bleu(const std::vector<std::vector<std::string>>& hyps,
                       const std::vector<std::vector<std::string>>& refs) {
  SentenceBleuStats total;
  for (const auto& s : corpus_stats(hyps, refs)) total += s;
  return bleu_from_stats(total);
}

SignificanceResult bootstrap_significance(const std::vector<SentenceBleuStats>& a,
                                          const std::vector<SentenceBleuStats>& b,
                                          int n_resamples, std::uint64_t seed) {
  if (a.size() != b.size())
    throw DataError("paired bootstrap needs equal sentence counts, got " +
                    std::to_string(a.size()) + " and " + std::to_string(b.size()));
  if (a.empty()) throw DataError("paired bootstrap needs at least one sentence");
  if (n_resamples < 1) throw ConfigError("n_resamples must be positive");

  Rng rng(mix_seed({seed, hash_str("bootstrap")}));
  SignificanceResult res;
  res.n_resamples = n_resamples;
  const std::size_t n = a.size();
  for (int it = 0; it < n_resamples; ++it) {
    SentenceBleuStats ta, tb;
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t i = static_cast<std::size_t>(rng.below(n));
      ta += a[i];
      tb += b[i];
    }
    const double ba = bleu_from_stats(ta).bleu;
    const double bb = bleu_from_stats(tb).bleu;
    if (ba > bb)
      ++res.wins_a;
    else if (bb > ba)
      ++res.wins_b;
    else
      ++res.ties;
  }
  res.p_value = static_cast<double>(res.wins_b + res.ties) / n_resamples;
  res.significant_at_5pct = res.p_value < 0.05;
  return res;
}

SignificanceResult bootstrap_significance(
    const std::vector<std::vector<std::string>>& hyp_a,
    const std::vector<std::vector<std::string>>& hyp_b,
    const std::vector<std::vector<std::string>>& refs, int n_resamples,
    std::uint64_t seed) {
  return bootstrap_significance(corpus_stats(hyp_a, refs), corpus_stats(hyp_b, refs),
                                n_resamples, seed);
}

std::string format_bleu_report(const BleuReport& r) {
  std::ostringstream out;
  out << "BLEU = " << fmt_double(r.bleu, 2) << " (";
  for (int n = 0; n < 4; ++n) {
    if (n) out << "/";
    out << fmt_double(100.0 * r.precision[n], 1);
  }
  out << ", BP = " << fmt_double(r.brevity_penalty, 3) << ", hyp_len = " << r.hyp_len
      << ", ref_len = " << r.ref_len << ")\n";
  out << "bleu=" << fmt_double(r.bleu, 4) << "\n";
  for (int n = 0; n < 4; ++n)
    out << "p" << (n + 1) << "=" << fmt_double(100.0 * r.precision[n], 4) << "\n";
  out << "bp=" << fmt_double(r.brevity_penalty, 4) << "\n";
  out << "hyp_len=" << r.hyp_len << "\n";
  out << "ref_len=" << r.ref_len << "\n";
  return out.str();
}

LogFit fit_log(const std::vector<double>& sizes, const std::vector<double>& bleus) {
  if (sizes.size() != bleus.size())
    throw DataError("fit_log needs matching lengths, got " + std::to_string(sizes.size()) +
                    " and " + std::to_string(bleus.size()));
  if (sizes.size() < 2) throw DataError("fit_log needs at least two points");
  const std::size_t n = sizes.size();
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(sizes[i] > 0.0)) throw DataError("fit_log sizes must be positive");
    x[i] = std::log(sizes[i]);
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sx += x[i];
    sy += bleus[i];
    sxx += x[i] * x[i];
    sxy += x[i] * bleus[i];
  }
  const double denom = n * sxx - sx * sx;
  if (denom == 0.0) throw DataError("fit_log needs at least two distinct sizes");
  LogFit f;
  f.b = (n * sxy - sx * sy) / denom;
  f.a = (sy - f.b * sx) / n;
  const double mean_y = sy / n;
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pred = f.a + f.b * x[i];
    ss_res += (bleus[i] - pred) * (bleus[i] - pred);
    ss_tot += (bleus[i] - mean_y) * (bleus[i] - mean_y);
  }
  f.r_squared = ss_tot == 0.0 ? 0.0 : 1.0 - ss_res / ss_tot;
  f.n_points = static_cast<int>(n);
  return f;
}

}  // namespace ftforge
