#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ftforge/common.hpp"

namespace ftforge {

// Per-sentence sufficient statistics for corpus BLEU-4: clipped n-gram
// matches and totals per order, plus lengths. Summing the stats of any
// sentence subset gives that subset's corpus score, which is what the
// bootstrap resampler relies on.
struct SentenceBleuStats {
  std::array<std::int64_t, 4> match{};
  std::array<std::int64_t, 4> total{};
  std::int64_t hyp_len = 0;
  std::int64_t ref_len = 0;

  SentenceBleuStats& operator+=(const SentenceBleuStats& o);
};

SentenceBleuStats sentence_stats(const std::vector<std::string>& hyp,
                                 const std::vector<std::string>& ref);

struct BleuReport {
  double bleu = 0.0;  // 0..100 scale
  std::array<double, 4> precision{};
  double brevity_penalty = 0.0;
  std::int64_t hyp_len = 0;
  std::int64_t ref_len = 0;
};

// Unsmoothed BLEU-4: geometric mean of the four precisions times
// min(1, exp(1 - ref_len / hyp_len)). Any zero precision gives 0.
BleuReport bleu_from_stats(const SentenceBleuStats& totals);

std::vector<SentenceBleuStats> corpus_stats(
    const std::vector<std::vector<std::string>>& hyps,
    const std::vector<std::vector<std::string>>& refs);

BleuReport corpus_bleu(const std::vector<std::vector<std::string>>& hyps,
                       const std::vector<std::vector<std::string>>& refs);

struct SignificanceResult {
  double p_value = 1.0;  // one-sided: chance that A does not beat B
  int n_resamples = 0;
  int wins_a = 0;
  int wins_b = 0;
  int ties = 0;
  bool significant_at_5pct = false;
};

// Paired bootstrap over sentences: both systems are rescored on the same
// resampled index sets. One-sided test that A beats B:
// p = (resamples where BLEU(b) >= BLEU(a)) / n = (wins_b + ties) / n.
SignificanceResult bootstrap_significance(const std::vector<SentenceBleuStats>& a,
                                          const std::vector<SentenceBleuStats>& b,
                                          int n_resamples, std::uint64_t seed);

SignificanceResult bootstrap_significance(
    const std::vector<std::vector<std::string>>& hyp_a,
    const std::vector<std::vector<std::string>>& hyp_b,
    const std::vector<std::vector<std::string>>& refs, int n_resamples,
    std::uint64_t seed);

std::string format_bleu_report(const BleuReport& r);

struct LogFit {
  double a = 0.0;  // intercept
  double b = 0.0;  // slope per ln(size)
  double r_squared = 0.0;
  int n_points = 0;
};

// Least-squares fit of bleu = a + b * ln(size). A constant response has
// r_squared 0 by convention.
LogFit fit_log(const std::vector<double>& sizes, const std::vector<double>& bleus);

}  // namespace ftforge
