#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "clsum/rouge.hpp"
#include "clsum/tokenize.hpp"
#include "clsum/util.hpp"

namespace clsum {

struct MonoPair {
  std::string id;
  std::string doc;
  std::string summary;
};

struct ClsPair {
  std::string id;
  std::string doc;                   // source-language document
  std::string summary_tgt;           // target-language summary
  std::string summary_src_retained;  // source-language reference, kept sentences only
  std::vector<bool> keep_flags;      // one per original summary sentence
  std::string variant;               // which build produced it (informational)
};

struct FilterConfig {
  double t1 = 0.45;                    // unigram F1 floor
  double t2 = 0.2;                     // bigram F1 floor
  Fraction retention{2, 3};            // sentence retention fraction per sample
  bool strict_retention = true;        // kept/total must exceed (not just reach) it
  RougeUnit unit = RougeUnit::EnWord;  // comparison granularity for the round trip
};

inline FilterConfig default_filter_config(Lang src) {
  FilterConfig cfg;
  if (src == Lang::Zh) {
    cfg.t1 = 0.6;
    cfg.unit = RougeUnit::ZhChar;
  }
  return cfg;
}

class Translator {
 public:
  virtual ~Translator() = default;
  virtual std::string translate(const std::string& text, Lang src, Lang tgt) = 0;
};

class IdentityTranslator final : public Translator {
 public:
  std::string translate(const std::string& text, Lang, Lang) override { return text; }
};

// Deterministic word-substitution noise: each unit (whitespace chunk for
// English, scalar for Chinese) is independently replaced with probability p
// by a pseudo-word derived from a hash of (seed, langs, text, position).
// Hashing the whole input rather than advancing shared RNG state keeps the
// output independent of call order, so concurrent builds stay reproducible.
class NoiseTranslator final : public Translator {
 public:
  NoiseTranslator(std::uint64_t seed, double p) : seed_(seed), p_(p) {
    if (p < 0.0 || p > 1.0) throw std::invalid_argument("NoiseTranslator: p must be in [0,1]");
  }

  std::string translate(const std::string& text, Lang src, Lang tgt) override {
    std::vector<std::string> units;
    if (src == Lang::En) {
      units = detail::whitespace_chunks(text, Lang::En);
    } else {
      for (auto& s : utf8_scalars(text))
        if (!is_space_scalar(s)) units.push_back(std::move(s));
    }
    std::string out;
    for (std::size_t i = 0; i < units.size(); ++i) {
      if (i > 0 && src == Lang::En) out += ' ';
      std::uint64_t h = unit_hash(text, src, tgt, i);
      if (to_unit_interval(h) < p_)
        out += pseudo_word(h, tgt);
      else
        out += units[i];
    }
    return out;
  }

 private:
  std::uint64_t unit_hash(const std::string& text, Lang src, Lang tgt, std::size_t i) const {
    std::string key = std::to_string(seed_) + '|' + lang_name(src) + '|' + lang_name(tgt) + '|' +
                      text + '|' + std::to_string(i);
    return fnv1a64(key);
  }
  static double to_unit_interval(std::uint64_t h) { return (h >> 11) * 0x1.0p-53; }
  static std::string pseudo_word(std::uint64_t h, Lang tgt) {
    if (tgt == Lang::Zh) {
      // a CJK scalar in the common-ideograph range
      char32_t cp = 0x4E00 + static_cast<char32_t>(h % 0x51A6);
      std::string s;
      s += static_cast<char>(0xE0 | (cp >> 12));
      s += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
      s += static_cast<char>(0x80 | (cp & 0x3F));
      return s;
    }
    static const char* alphabet = "abcdefghijklmnopqrstuvwxyz";
    std::string s;
    std::uint64_t v = h | 1;
    for (int i = 0; i < 5; ++i) {
      s += alphabet[v % 26];
      v /= 26;
    }
    return s;
  }

  std::uint64_t seed_;
  double p_;
};

// ---------------------------------------------------------------------------
// Round-trip filtering

struct RttResult {
  std::string translated;  // forward translation (target language)
  std::string back;        // back translation (source language)
  bool keep = false;
  RougeScore scores;  // ref vs. back, on the configured unit
};

inline RttResult rtt_sentence(const std::string& ref_sentence, Translator& t, Lang src, Lang tgt,
                              const FilterConfig& cfg) {
  RttResult r;
  r.translated = t.translate(ref_sentence, src, tgt);
  r.back = t.translate(r.translated, tgt, src);
  r.scores = rouge_suite(r.back, ref_sentence, cfg.unit);
  r.keep = r.scores.r1.f1 >= cfg.t1 && r.scores.r2.f1 >= cfg.t2;
  return r;
}

// Integer comparison so a boundary like 2 kept of 3 never depends on
// floating-point rounding of the fraction.
inline bool retention_passes(std::size_t kept, std::size_t total, const FilterConfig& cfg) {
  if (total == 0) return false;
  long long lhs = static_cast<long long>(kept) * cfg.retention.den;
  long long rhs = cfg.retention.num * static_cast<long long>(total);
  return cfg.strict_retention ? lhs > rhs : lhs >= rhs;
}

// Runs every summary sentence through the round trip; kept sentences (in
// original order) form the retained reference and their forward translations
// the target summary. Returns nothing when too few sentences survive.
inline std::optional<ClsPair> build_cls_pair(const MonoPair& p, Translator& t, Lang src, Lang tgt,
                                             const FilterConfig& cfg) {
  std::vector<std::string> sentences = split_sentences(p.summary, src);
  std::vector<std::string> kept_src, kept_tgt;
  std::vector<bool> flags;
  flags.reserve(sentences.size());
  for (const auto& sent : sentences) {
    RttResult r;
    try {
      r = rtt_sentence(sent, t, src, tgt, cfg);
    } catch (const std::exception& e) {
      throw std::runtime_error("pair " + p.id + ": " + e.what());
    }
    flags.push_back(r.keep);
    if (r.keep) {
      kept_src.push_back(sent);
      kept_tgt.push_back(r.translated);
    }
  }
  if (!retention_passes(kept_src.size(), sentences.size(), cfg)) return std::nullopt;
  ClsPair out;
  out.id = p.id;
  out.doc = p.doc;
  out.summary_src_retained = join_sentences(kept_src, src);
  out.summary_tgt = join_sentences(kept_tgt, tgt);
  out.keep_flags = std::move(flags);
  return out;
}

// Forward translation only; every sentence marked kept, every pair emitted.
inline ClsPair forward_pair(const MonoPair& p, Translator& t, Lang src, Lang tgt) {
  std::vector<std::string> sentences = split_sentences(p.summary, src);
  std::vector<std::string> translated;
  translated.reserve(sentences.size());
  for (const auto& sent : sentences) {
    try {
      translated.push_back(t.translate(sent, src, tgt));
    } catch (const std::exception& e) {
      throw std::runtime_error("pair " + p.id + ": " + e.what());
    }
  }
  ClsPair out;
  out.id = p.id;
  out.doc = p.doc;
  out.summary_src_retained = join_sentences(sentences, src);
  out.summary_tgt = join_sentences(translated, tgt);
  out.keep_flags.assign(sentences.size(), true);
  return out;
}

enum class Variant { Filter, NonFilter, PseudoFilter };

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::Filter: return "filter";
    case Variant::NonFilter: return "nonfilter";
    default: return "pseudofilter";
  }
}

inline Variant parse_variant(const std::string& s) {
  if (s == "filter") return Variant::Filter;
  if (s == "nonfilter" || s == "non-filter") return Variant::NonFilter;
  if (s == "pseudofilter" || s == "pseudo-filter") return Variant::PseudoFilter;
  throw std::invalid_argument("unknown corpus variant: " + s);
}

struct BuildReport {
  std::string variant;
  std::size_t input_count = 0;
  std::size_t retained_count = 0;
  std::size_t rejected_count = 0;
  std::size_t sentences_total = 0;
  std::size_t sentences_kept = 0;

  std::string str() const {
    std::ostringstream os;
    os << "variant            " << variant << '\n'
       << "input pairs        " << input_count << '\n'
       << "retained pairs     " << retained_count << '\n'
       << "rejected pairs     " << rejected_count << '\n'
       << "sentences seen     " << sentences_total << '\n'
       << "sentences kept     " << sentences_kept << '\n';
    return os.str();
  }
};

struct BuildResult {
  std::vector<ClsPair> pairs;
  BuildReport report;
};

// Filter: full round-trip pipeline. NonFilter: forward translation, all
// pairs. PseudoFilter: runs the filter pass to learn how many pairs survive
// (or takes that number directly via pseudo_target), then draws a uniform
// sample of that size, without replacement, from the NonFilter output;
// emitted order follows input order in every variant.
inline BuildResult build_corpus(const std::vector<MonoPair>& src_pairs, Translator& t, Lang src,
                                Lang tgt, const FilterConfig& cfg, Variant variant,
                                std::uint64_t seed = 0,
                                std::optional<std::size_t> pseudo_target = std::nullopt,
                                std::size_t threads = 1) {
  BuildResult result;
  result.report.variant = variant_name(variant);
  result.report.input_count = src_pairs.size();

  auto count_sentences = [&](const ClsPair& p, bool from_flags) {
    result.report.sentences_total += p.keep_flags.size();
    if (from_flags)
      for (bool k : p.keep_flags) result.report.sentences_kept += k ? 1 : 0;
    else
      result.report.sentences_kept += p.keep_flags.size();
  };

  // Pairs are processed as independent work items but always emitted in
  // input order, so the worker count never changes the output.
  if (variant == Variant::Filter) {
    std::vector<std::optional<ClsPair>> built(src_pairs.size());
    parallel_for(src_pairs.size(), threads,
                 [&](std::size_t i) { built[i] = build_cls_pair(src_pairs[i], t, src, tgt, cfg); });
    for (auto& b : built) {
      if (b) {
        b->variant = result.report.variant;
        count_sentences(*b, true);
        result.pairs.push_back(std::move(*b));
      } else {
        result.report.rejected_count += 1;
      }
    }
    result.report.retained_count = result.pairs.size();
    return result;
  }

  std::vector<ClsPair> forward(src_pairs.size());
  parallel_for(src_pairs.size(), threads,
               [&](std::size_t i) { forward[i] = forward_pair(src_pairs[i], t, src, tgt); });

  if (variant == Variant::NonFilter) {
    for (auto& p : forward) {
      p.variant = result.report.variant;
      count_sentences(p, false);
      result.pairs.push_back(std::move(p));
    }
    result.report.retained_count = result.pairs.size();
    return result;
  }

  std::size_t target;
  if (pseudo_target) {
    target = *pseudo_target;
    if (target > forward.size())
      throw std::invalid_argument("build_corpus: pseudo-filter target exceeds corpus size");
  } else {
    std::vector<std::uint8_t> survived_flags(src_pairs.size(), 0);
    parallel_for(src_pairs.size(), threads, [&](std::size_t i) {
      survived_flags[i] = build_cls_pair(src_pairs[i], t, src, tgt, cfg).has_value() ? 1 : 0;
    });
    std::size_t survived = 0;
    for (auto f : survived_flags) survived += f;
    target = survived;
  }

  std::vector<std::size_t> idx(forward.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  for (std::size_t i = 0; i < target; ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(target);
  std::sort(idx.begin(), idx.end());
  for (std::size_t i : idx) {
    forward[i].variant = result.report.variant;
    count_sentences(forward[i], false);
    result.pairs.push_back(std::move(forward[i]));
  }
  result.report.retained_count = result.pairs.size();
  result.report.rejected_count = forward.size() - result.pairs.size();
  return result;
}

// ---------------------------------------------------------------------------
// Statistics

struct CorpusStats {
  std::size_t n_documents = 0;
  double avg_src_tokens = 0;
  double avg_ref_tokens_src = 0;  // retained source-language reference
  double avg_ref_tokens_tgt = 0;  // target-language summary
  double avg_tokens_per_sentence = 0;
  double avg_sentences = 0;
};

inline CorpusStats corpus_stats(const std::vector<ClsPair>& pairs, Lang src, Lang tgt) {
  if (pairs.empty()) throw std::invalid_argument("corpus_stats: empty corpus");
  CorpusStats s;
  s.n_documents = pairs.size();
  long long doc_tokens = 0, ref_src_tokens = 0, ref_tgt_tokens = 0, sentences = 0;
  for (const auto& p : pairs) {
    doc_tokens += static_cast<long long>(tokenize(p.doc, src, Granularity::Word).size());
    ref_src_tokens +=
        static_cast<long long>(tokenize(p.summary_src_retained, src, Granularity::Word).size());
    ref_tgt_tokens += static_cast<long long>(tokenize(p.summary_tgt, tgt, Granularity::Word).size());
    sentences += static_cast<long long>(split_sentences(p.doc, src).size());
  }
  double n = static_cast<double>(pairs.size());
  s.avg_src_tokens = doc_tokens / n;
  s.avg_ref_tokens_src = ref_src_tokens / n;
  s.avg_ref_tokens_tgt = ref_tgt_tokens / n;
  s.avg_sentences = sentences / n;
  s.avg_tokens_per_sentence = sentences > 0 ? static_cast<double>(doc_tokens) / sentences : 0.0;
  return s;
}

// ---------------------------------------------------------------------------
// Persistence: UTF-8 JSON lines.

namespace detail {

inline std::string require_string(const nlohmann::json& j, const char* field, std::size_t lineno) {
  auto it = j.find(field);
  if (it == j.end())
    throw std::runtime_error("line " + std::to_string(lineno) + ": missing field \"" + field +
                             "\"");
  if (!it->is_string())
    throw std::runtime_error("line " + std::to_string(lineno) + ": field \"" + field +
                             "\" must be a string");
  return it->get<std::string>();
}

inline nlohmann::json parse_line(const std::string& line, std::size_t lineno) {
  nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded())
    throw std::runtime_error("line " + std::to_string(lineno) + ": malformed record");
  return j;
}

}  // namespace detail

inline void write_corpus(const std::vector<ClsPair>& pairs, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_corpus: cannot open " + path);
  for (const auto& p : pairs) {
    nlohmann::json j;
    j["id"] = p.id;
    j["doc"] = p.doc;
    j["summary_tgt"] = p.summary_tgt;
    j["summary_src_retained"] = p.summary_src_retained;
    j["keep_flags"] = std::vector<bool>(p.keep_flags.begin(), p.keep_flags.end());
    if (!p.variant.empty()) j["variant"] = p.variant;
    out << j.dump() << '\n';
  }
}

inline std::vector<ClsPair> read_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_corpus: cannot open " + path);
  std::vector<ClsPair> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    nlohmann::json j = detail::parse_line(line, lineno);
    ClsPair p;
    p.id = detail::require_string(j, "id", lineno);
    p.doc = detail::require_string(j, "doc", lineno);
    p.summary_tgt = detail::require_string(j, "summary_tgt", lineno);
    p.summary_src_retained = detail::require_string(j, "summary_src_retained", lineno);
    auto kf = j.find("keep_flags");
    if (kf == j.end())
      throw std::runtime_error("line " + std::to_string(lineno) +
                               ": missing field \"keep_flags\"");
    if (!kf->is_array())
      throw std::runtime_error("line " + std::to_string(lineno) +
                               ": field \"keep_flags\" must be an array");
    for (const auto& v : *kf) p.keep_flags.push_back(v.get<bool>());
    if (j.contains("variant") && j["variant"].is_string())
      p.variant = j["variant"].get<std::string>();
    pairs.push_back(std::move(p));
  }
  return pairs;
}

inline void write_mono(const std::vector<MonoPair>& pairs, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_mono: cannot open " + path);
  for (const auto& p : pairs) {
    nlohmann::json j;
    j["id"] = p.id;
    j["doc"] = p.doc;
    j["summary"] = p.summary;
    out << j.dump() << '\n';
  }
}

inline std::vector<MonoPair> read_mono(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_mono: cannot open " + path);
  std::vector<MonoPair> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    nlohmann::json j = detail::parse_line(line, lineno);
    MonoPair p;
    p.id = detail::require_string(j, "id", lineno);
    p.doc = detail::require_string(j, "doc", lineno);
    p.summary = detail::require_string(j, "summary", lineno);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// Deterministic train/valid/test split: pairs are ranked by a stable hash of
// their id; the top of that ranking supplies test then valid, everything
// else trains. Each split preserves the original corpus order.

struct CorpusSplit {
  std::vector<ClsPair> train, valid, test;
};

inline CorpusSplit split_corpus(const std::vector<ClsPair>& pairs, std::size_t n_valid,
                                std::size_t n_test) {
  if (n_valid + n_test >= pairs.size())
    throw std::invalid_argument("split_corpus: corpus too small for requested valid/test sizes");
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    std::uint64_t ha = fnv1a64(pairs[a].id), hb = fnv1a64(pairs[b].id);
    if (ha != hb) return ha < hb;
    return pairs[a].id < pairs[b].id;
  });
  std::vector<int> role(pairs.size(), 0);  // 0 train, 1 valid, 2 test
  for (std::size_t i = 0; i < n_test; ++i) role[order[order.size() - 1 - i]] = 2;
  for (std::size_t i = 0; i < n_valid; ++i) role[order[order.size() - 1 - n_test - i]] = 1;
  CorpusSplit split;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (role[i] == 0)
      split.train.push_back(pairs[i]);
    else if (role[i] == 1)
      split.valid.push_back(pairs[i]);
    else
      split.test.push_back(pairs[i]);
  }
  return split;
}

}  // namespace clsum
