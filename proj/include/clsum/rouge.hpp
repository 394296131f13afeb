#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "clsum/tokenize.hpp"

namespace clsum {

struct Score {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct RougeScore {
  Score r1, r2, rl;
};

enum class RougeUnit { EnWord, ZhChar };

inline RougeUnit rouge_unit_for(Lang lang) {
  return lang == Lang::En ? RougeUnit::EnWord : RougeUnit::ZhChar;
}

inline Score make_score(double overlap, double cand_total, double ref_total) {
  Score s;
  s.precision = cand_total > 0 ? overlap / cand_total : 0.0;
  s.recall = ref_total > 0 ? overlap / ref_total : 0.0;
  double denom = s.precision + s.recall;
  s.f1 = denom > 0 ? 2.0 * s.precision * s.recall / denom : 0.0;
  return s;
}

// n-gram multiset; keys join tokens with a 0x1f separator, which cannot
// appear inside a token produced by the tokenizer.
inline std::unordered_map<std::string, long long> ngram_counts(
    const std::vector<std::string>& tokens, std::size_t n) {
  std::unordered_map<std::string, long long> counts;
  if (n == 0 || tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (std::size_t j = 1; j < n; ++j) {
      key += '\x1f';
      key += tokens[i + j];
    }
    counts[key] += 1;
  }
  return counts;
}

// Clipped multiset overlap: each reference n-gram credits at most its own
// count. Empty sides yield all-zero components.
inline Score rouge_n_f1(const std::vector<std::string>& cand,
                        const std::vector<std::string>& ref, std::size_t n) {
  if (n == 0) throw std::invalid_argument("rouge_n_f1: n must be >= 1");
  auto cand_counts = ngram_counts(cand, n);
  auto ref_counts = ngram_counts(ref, n);
  long long overlap = 0, cand_total = 0, ref_total = 0;
  for (const auto& [k, c] : cand_counts) cand_total += c;
  for (const auto& [k, c] : ref_counts) ref_total += c;
  for (const auto& [k, c] : cand_counts) {
    auto it = ref_counts.find(k);
    if (it != ref_counts.end()) overlap += std::min(c, it->second);
  }
  return make_score(static_cast<double>(overlap), static_cast<double>(cand_total),
                    static_cast<double>(ref_total));
}

inline std::size_t lcs_length(const std::vector<std::string>& a,
                              const std::vector<std::string>& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      if (a[i - 1] == b[j - 1])
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// Sequence-level LCS over the flattened token sequence (no summary-level
// union across sentences).
inline Score rouge_l_f1(const std::vector<std::string>& cand,
                        const std::vector<std::string>& ref) {
  double l = static_cast<double>(lcs_length(cand, ref));
  return make_score(l, static_cast<double>(cand.size()), static_cast<double>(ref.size()));
}

inline std::vector<std::string> rouge_tokens(const std::string& text, RougeUnit unit) {
  if (unit == RougeUnit::EnWord) return tokenize(text, Lang::En, Granularity::Word);
  return tokenize(text, Lang::Zh, Granularity::Character);
}

inline RougeScore rouge_suite_tokens(const std::vector<std::string>& cand,
                                     const std::vector<std::string>& ref) {
  RougeScore s;
  s.r1 = rouge_n_f1(cand, ref, 1);
  s.r2 = rouge_n_f1(cand, ref, 2);
  s.rl = rouge_l_f1(cand, ref);
  return s;
}

inline RougeScore rouge_suite(const std::string& cand, const std::string& ref, RougeUnit unit) {
  return rouge_suite_tokens(rouge_tokens(cand, unit), rouge_tokens(ref, unit));
}

}  // namespace clsum
