#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "clsum/corpus.hpp"
#include "clsum/rouge.hpp"
#include "clsum/tokenize.hpp"

namespace clsum {

struct LexRankConfig {
  double threshold = 0.1;   // minimum cosine similarity for an edge
  double damping = 0.85;
  double tolerance = 1e-8;  // max-norm change that counts as converged
  std::size_t max_iterations = 1000;
};

struct RankedSentence {
  std::size_t index = 0;
  double score = 0.0;
};

namespace detail {

// TF-IDF sentence vectors; idf = log(N/df) + 1 so terms common to every
// sentence still carry weight (two identical sentences must not collapse to
// zero vectors).
inline std::vector<std::map<std::string, double>> tfidf_vectors(
    const std::vector<std::vector<std::string>>& sentence_tokens) {
  std::size_t n = sentence_tokens.size();
  std::map<std::string, std::size_t> df;
  for (const auto& toks : sentence_tokens) {
    std::map<std::string, bool> seen;
    for (const auto& t : toks)
      if (!seen[t]) {
        seen[t] = true;
        df[t] += 1;
      }
  }
  std::vector<std::map<std::string, double>> vectors(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::map<std::string, double> tf;
    for (const auto& t : sentence_tokens[i]) tf[t] += 1.0;
    for (const auto& [term, count] : tf) {
      double idf = std::log(static_cast<double>(n) / static_cast<double>(df[term])) + 1.0;
      vectors[i][term] = count * idf;
    }
  }
  return vectors;
}

inline double cosine(const std::map<std::string, double>& a,
                     const std::map<std::string, double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [term, v] : a) {
    na += v * v;
    auto it = b.find(term);
    if (it != b.end()) dot += v * it->second;
  }
  for (const auto& [term, v] : b) nb += v * v;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace detail

// Sentence salience via a damped random walk on the thresholded cosine
// similarity graph. Rows without any edge (possible only for sentences whose
// vector is empty) are treated as linking uniformly everywhere. Throws if
// power iteration fails to converge within the configured iteration cap.
inline std::vector<RankedSentence> lexrank(const std::vector<std::string>& sentences, Lang lang,
                                           const LexRankConfig& cfg = {}) {
  if (sentences.empty()) throw std::invalid_argument("lexrank: no sentences");
  std::size_t n = sentences.size();
  std::vector<std::vector<std::string>> tokens;
  tokens.reserve(n);
  for (const auto& s : sentences) tokens.push_back(tokenize(s, lang, Granularity::Word));
  auto vectors = detail::tfidf_vectors(tokens);

  // Row-stochastic transition matrix over the similarity graph.
  std::vector<double> trans(n * n, 0.0);
  std::vector<bool> dangling(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    double row_sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double sim = detail::cosine(vectors[i], vectors[j]);
      if (sim >= cfg.threshold) {
        trans[i * n + j] = 1.0;
        row_sum += 1.0;
      }
    }
    if (row_sum == 0.0)
      dangling[i] = true;
    else
      for (std::size_t j = 0; j < n; ++j) trans[i * n + j] /= row_sum;
  }

  std::vector<double> p(n, 1.0 / static_cast<double>(n)), next(n);
  double teleport = (1.0 - cfg.damping) / static_cast<double>(n);
  bool converged = false;
  for (std::size_t iter = 0; iter < cfg.max_iterations; ++iter) {
    double dangling_mass = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (dangling[i]) dangling_mass += p[i];
    for (std::size_t j = 0; j < n; ++j) {
      double in_flow = dangling_mass / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) in_flow += trans[i * n + j] * p[i];
      next[j] = teleport + cfg.damping * in_flow;
    }
    double diff = 0.0;
    for (std::size_t j = 0; j < n; ++j) diff = std::max(diff, std::fabs(next[j] - p[j]));
    p = next;
    if (diff < cfg.tolerance) {
      converged = true;
      break;
    }
  }
  if (!converged)
    throw std::runtime_error("lexrank: power iteration did not converge within " +
                             std::to_string(cfg.max_iterations) + " iterations");

  std::vector<RankedSentence> ranked(n);
  for (std::size_t i = 0; i < n; ++i) ranked[i] = {i, p[i]};
  std::stable_sort(ranked.begin(), ranked.end(), [](const RankedSentence& a, const RankedSentence& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.index < b.index;
  });
  return ranked;
}

// ---------------------------------------------------------------------------
// Extraction

struct ExtractBudget {
  enum class Kind { Sentences, Tokens };
  Kind kind = Kind::Sentences;
  std::size_t limit = 1;

  static ExtractBudget sentences(std::size_t n) { return {Kind::Sentences, n}; }
  static ExtractBudget tokens(std::size_t n) { return {Kind::Tokens, n}; }
};

// Default token budgets mirroring the target summary lengths the toolkit is
// built around: 120 words for English output, 150 characters for Chinese.
inline ExtractBudget default_extract_budget(Lang lang) {
  return ExtractBudget::tokens(lang == Lang::En ? 120 : 150);
}

inline std::size_t budget_tokens(const std::string& sentence, Lang lang) {
  if (lang == Lang::Zh) return tokenize(sentence, lang, Granularity::Character).size();
  return tokenize(sentence, lang, Granularity::Word).size();
}

// Walk the ranking, taking sentences until the budget is exhausted; stop at
// the first sentence that would overflow a token budget. The top sentence is
// always taken so the summary is never empty. Selected sentences come out in
// original document order.
inline std::string extract_summary(const std::vector<RankedSentence>& ranked,
                                   const std::vector<std::string>& sentences,
                                   const ExtractBudget& budget, Lang lang) {
  if (budget.limit == 0) throw std::invalid_argument("extract_summary: budget must be positive");
  std::vector<std::size_t> selected;
  if (budget.kind == ExtractBudget::Kind::Sentences) {
    for (const auto& r : ranked) {
      if (selected.size() >= budget.limit) break;
      selected.push_back(r.index);
    }
  } else {
    std::size_t used = 0;
    for (const auto& r : ranked) {
      std::size_t cost = budget_tokens(sentences[r.index], lang);
      if (!selected.empty() && used + cost > budget.limit) break;
      selected.push_back(r.index);
      used += cost;
      if (used >= budget.limit) break;
    }
  }
  std::sort(selected.begin(), selected.end());
  std::vector<std::string> chosen;
  chosen.reserve(selected.size());
  for (std::size_t i : selected) chosen.push_back(sentences[i]);
  return join_sentences(chosen, lang);
}

inline std::string lexrank_summary(const std::string& doc, Lang lang, const LexRankConfig& cfg,
                                   const ExtractBudget& budget) {
  std::vector<std::string> sentences = split_sentences(doc, lang);
  if (sentences.empty()) throw std::invalid_argument("lexrank_summary: document has no sentences");
  return extract_summary(lexrank(sentences, lang, cfg), sentences, budget, lang);
}

// ---------------------------------------------------------------------------
// Pipelines

namespace detail {

inline std::vector<std::string> translate_sentences(const std::vector<std::string>& sentences,
                                                    Translator& t, Lang src, Lang tgt) {
  std::vector<std::string> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) {
    std::string tr = t.translate(s, src, tgt);
    if (tr.empty())
      throw std::runtime_error("translator returned empty output for: " + s.substr(0, 60));
    out.push_back(std::move(tr));
  }
  return out;
}

}  // namespace detail

// Translate the document first, then summarize in the target language.
inline std::string pipeline_etran(const std::string& doc, Translator& t, Lang src, Lang tgt,
                                  const LexRankConfig& cfg = {},
                                  const ExtractBudget* budget = nullptr) {
  std::vector<std::string> sentences = split_sentences(doc, src);
  if (sentences.empty()) throw std::invalid_argument("pipeline_etran: document has no sentences");
  std::vector<std::string> translated = detail::translate_sentences(sentences, t, src, tgt);
  std::string tgt_doc = join_sentences(translated, tgt);
  ExtractBudget b = budget ? *budget : default_extract_budget(tgt);
  return lexrank_summary(tgt_doc, tgt, cfg, b);
}

// Summarize in the source language first, then translate the summary.
// The summarizer is pluggable (LexRank or a trained model's decode).
inline std::string pipeline_ltran(const std::string& doc,
                                  const std::function<std::string(const std::string&)>& summarize,
                                  Translator& t, Lang src, Lang tgt) {
  std::string summary = summarize(doc);
  if (summary.empty()) throw std::runtime_error("pipeline_ltran: summarizer returned nothing");
  std::vector<std::string> sentences = split_sentences(summary, src);
  if (sentences.empty()) throw std::runtime_error("pipeline_ltran: summary has no sentences");
  std::vector<std::string> translated = detail::translate_sentences(sentences, t, src, tgt);
  return join_sentences(translated, tgt);
}

}  // namespace clsum
