#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "clsum/util.hpp"

namespace clsum {

enum class Lang { En, Zh };
enum class Granularity { Character, Word, Subword };

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kBosId = 2;
inline constexpr int kEosId = 3;
inline constexpr int kNumSpecials = 4;

inline const std::array<std::string, 4>& special_tokens() {
  static const std::array<std::string, 4> specials = {"<pad>", "<unk>", "<bos>", "<eos>"};
  return specials;
}

inline std::string lang_name(Lang l) { return l == Lang::En ? "en" : "zh"; }

inline Lang parse_lang(const std::string& s) {
  if (s == "en") return Lang::En;
  if (s == "zh") return Lang::Zh;
  throw std::invalid_argument("unknown language: " + s);
}

inline Granularity parse_granularity(const std::string& s) {
  if (s == "character" || s == "char" || s == "c") return Granularity::Character;
  if (s == "word" || s == "w") return Granularity::Word;
  if (s == "subword" || s == "sw") return Granularity::Subword;
  throw std::invalid_argument("unknown granularity: " + s);
}

inline std::string granularity_name(Granularity g) {
  switch (g) {
    case Granularity::Character: return "character";
    case Granularity::Word: return "word";
    default: return "subword";
  }
}

// ---------------------------------------------------------------------------
// UTF-8 handling. Inputs are expected to be valid UTF-8; a malformed byte is
// passed through as a single-byte scalar rather than rejected.

inline std::vector<std::string> utf8_scalars(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    unsigned char c = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if (c >= 0xF0)
      len = 4;
    else if (c >= 0xE0)
      len = 3;
    else if (c >= 0xC0)
      len = 2;
    if (i + len > text.size()) len = 1;
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

inline char32_t utf8_codepoint(std::string_view scalar) {
  if (scalar.empty()) return 0;
  unsigned char c0 = static_cast<unsigned char>(scalar[0]);
  if (c0 < 0x80 || scalar.size() == 1) return c0;
  char32_t cp = 0;
  if (scalar.size() == 2)
    cp = (c0 & 0x1F);
  else if (scalar.size() == 3)
    cp = (c0 & 0x0F);
  else
    cp = (c0 & 0x07);
  for (std::size_t i = 1; i < scalar.size(); ++i)
    cp = (cp << 6) | (static_cast<unsigned char>(scalar[i]) & 0x3F);
  return cp;
}

inline bool is_space_scalar(std::string_view s) {
  char32_t cp = utf8_codepoint(s);
  return cp == U' ' || cp == U'\t' || cp == U'\n' || cp == U'\r' || cp == U'\f' ||
         cp == U'\v' || cp == 0x00A0 || cp == 0x3000;  // incl. NBSP, ideographic space
}

inline bool is_punct_scalar(std::string_view s) {
  char32_t cp = utf8_codepoint(s);
  if (cp < 0x80) {
    char c = static_cast<char>(cp);
    return std::ispunct(static_cast<unsigned char>(c)) != 0;
  }
  // Common CJK punctuation and fullwidth forms.
  return (cp >= 0x3000 && cp <= 0x303F) || (cp >= 0xFF00 && cp <= 0xFF0F) ||
         (cp >= 0xFF1A && cp <= 0xFF20) || (cp >= 0xFF3B && cp <= 0xFF40) ||
         (cp >= 0xFF5B && cp <= 0xFF65) || cp == 0x2018 || cp == 0x2019 || cp == 0x201C ||
         cp == 0x201D || cp == 0x2026 || cp == 0x2013 || cp == 0x2014;
}

inline std::string lowercase_ascii(std::string_view text) {
  std::string out(text);
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

// ---------------------------------------------------------------------------
// Sentence splitting. ASCII terminators (. ! ?) end a sentence only when
// followed by whitespace or end of text; fullwidth CJK terminators always do.
// Abbreviations like "Dr." therefore split; this is a documented limitation.

inline std::vector<std::string> split_sentences(const std::string& text, Lang lang) {
  (void)lang;  // the boundary rule is shared; lang kept for interface symmetry
  std::vector<std::string> sentences;
  std::vector<std::string> scalars = utf8_scalars(text);
  std::string current;
  auto flush = [&]() {
    // trim surrounding whitespace
    std::size_t b = 0, e = current.size();
    while (b < e && std::isspace(static_cast<unsigned char>(current[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(current[e - 1]))) --e;
    if (e > b) sentences.push_back(current.substr(b, e - b));
    current.clear();
  };
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    const std::string& s = scalars[i];
    current += s;
    bool boundary = false;
    if (s == "。" || s == "！" || s == "？") {
      boundary = true;
    } else if (s == "." || s == "!" || s == "?") {
      boundary = (i + 1 == scalars.size()) || is_space_scalar(scalars[i + 1]);
    }
    if (boundary) flush();
  }
  flush();
  return sentences;
}

inline std::string join_sentences(const std::vector<std::string>& sentences, Lang lang) {
  std::string out;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    if (i > 0 && lang == Lang::En) out += ' ';
    out += sentences[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Byte-pair encoding. Merges are learned over whitespace-delimited chunks
// (each chunk as a sequence of Unicode scalars, no end-of-word marker); the
// encoder emits "@@" continuation markers on all but the last piece of a
// chunk so that decoding is a pure join.

inline const std::string kBpeJoiner = "@@";

struct BpeModel {
  std::vector<std::pair<std::string, std::string>> merges;
  std::set<std::string> vocab;  // subword units producible by the merges

  bool empty() const { return merges.empty() && vocab.empty(); }

  // Split a chunk into pieces by replaying the merges in learned order.
  std::vector<std::string> apply(const std::string& chunk) const {
    std::vector<std::string> symbols = utf8_scalars(chunk);
    if (symbols.size() <= 1) return symbols;
    for (const auto& [left, right] : merges) {
      std::vector<std::string> next;
      next.reserve(symbols.size());
      std::size_t i = 0;
      while (i < symbols.size()) {
        if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
          next.push_back(left + right);
          i += 2;
        } else {
          next.push_back(symbols[i]);
          ++i;
        }
      }
      symbols = std::move(next);
      if (symbols.size() == 1) break;
    }
    return symbols;
  }
};

// Learn `num_merges` merges by repeatedly taking the most frequent adjacent
// symbol pair; frequency ties break lexicographically on (left, right).
// `corpus` is a stream of pre-split token sequences.
inline BpeModel train_bpe(const std::vector<std::vector<std::string>>& corpus,
                          std::size_t num_merges) {
  BpeModel model;
  // chunk -> (symbols, frequency)
  std::map<std::string, std::pair<std::vector<std::string>, long long>> words;
  for (const auto& seq : corpus)
    for (const auto& chunk : seq) {
      if (chunk.empty()) continue;
      auto it = words.find(chunk);
      if (it == words.end())
        words.emplace(chunk, std::make_pair(utf8_scalars(chunk), 1ll));
      else
        it->second.second += 1;
    }
  for (const auto& [chunk, entry] : words)
    for (const auto& sym : entry.first) model.vocab.insert(sym);

  for (std::size_t step = 0; step < num_merges; ++step) {
    std::map<std::pair<std::string, std::string>, long long> pair_counts;
    for (const auto& [chunk, entry] : words) {
      const auto& syms = entry.first;
      for (std::size_t i = 0; i + 1 < syms.size(); ++i)
        pair_counts[{syms[i], syms[i + 1]}] += entry.second;
    }
    if (pair_counts.empty()) break;
    // std::map iterates keys in lexicographic order, so the first maximal
    // count is the lexicographically smallest tie.
    std::pair<std::string, std::string> best;
    long long best_count = -1;
    for (const auto& [pair, count] : pair_counts) {
      if (count > best_count) {
        best = pair;
        best_count = count;
      }
    }
    model.merges.push_back(best);
    model.vocab.insert(best.first + best.second);
    for (auto& [chunk, entry] : words) {
      auto& syms = entry.first;
      if (syms.size() < 2) continue;
      std::vector<std::string> next;
      next.reserve(syms.size());
      std::size_t i = 0;
      while (i < syms.size()) {
        if (i + 1 < syms.size() && syms[i] == best.first && syms[i + 1] == best.second) {
          next.push_back(best.first + best.second);
          i += 2;
        } else {
          next.push_back(syms[i]);
          ++i;
        }
      }
      syms = std::move(next);
    }
  }
  return model;
}

inline std::vector<std::string> bpe_encode(const BpeModel& model,
                                           const std::vector<std::string>& chunks) {
  std::vector<std::string> out;
  for (const auto& chunk : chunks) {
    std::vector<std::string> pieces = model.apply(chunk);
    for (std::size_t i = 0; i < pieces.size(); ++i) {
      if (i + 1 < pieces.size())
        out.push_back(pieces[i] + kBpeJoiner);
      else
        out.push_back(pieces[i]);
    }
  }
  return out;
}

inline std::vector<std::string> bpe_decode(const std::vector<std::string>& pieces) {
  std::vector<std::string> chunks;
  std::string current;
  for (const auto& piece : pieces) {
    if (piece.size() >= kBpeJoiner.size() &&
        piece.compare(piece.size() - kBpeJoiner.size(), kBpeJoiner.size(), kBpeJoiner) == 0) {
      current += piece.substr(0, piece.size() - kBpeJoiner.size());
    } else {
      current += piece;
      chunks.push_back(current);
      current.clear();
    }
  }
  if (!current.empty()) chunks.push_back(current);
  return chunks;
}

// ---------------------------------------------------------------------------
// Chinese word segmentation is pluggable: greedy longest-match over a
// user-supplied lexicon, falling back to single scalars where no entry
// matches (so an empty lexicon degrades to character segmentation).

struct Lexicon {
  std::set<std::string> words;
  std::size_t max_scalars = 1;

  void add(const std::string& word) {
    words.insert(word);
    max_scalars = std::max(max_scalars, utf8_scalars(word).size());
  }
};

struct TokenizerOptions {
  const BpeModel* bpe = nullptr;
  const Lexicon* lexicon = nullptr;
};

namespace detail {

// Whitespace-delimited chunks, lowercased for English.
inline std::vector<std::string> whitespace_chunks(const std::string& text, Lang lang) {
  std::string prepared = lang == Lang::En ? lowercase_ascii(text) : text;
  std::vector<std::string> chunks;
  std::string current;
  for (const auto& s : utf8_scalars(prepared)) {
    if (is_space_scalar(s)) {
      if (!current.empty()) {
        chunks.push_back(current);
        current.clear();
      }
    } else {
      current += s;
    }
  }
  if (!current.empty()) chunks.push_back(current);
  return chunks;
}

inline std::vector<std::string> segment_greedy(const std::vector<std::string>& scalars,
                                               const Lexicon& lexicon) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < scalars.size()) {
    std::size_t best_len = 1;
    std::string best = scalars[i];
    std::size_t limit = std::min(lexicon.max_scalars, scalars.size() - i);
    std::string candidate;
    for (std::size_t len = 1; len <= limit; ++len) {
      candidate += scalars[i + len - 1];
      if (len > 1 && lexicon.words.count(candidate)) {
        best_len = len;
        best = candidate;
      }
    }
    out.push_back(best);
    i += best_len;
  }
  return out;
}

}  // namespace detail

inline std::vector<std::string> tokenize(const std::string& text, Lang lang, Granularity g,
                                         const TokenizerOptions& opts = {}) {
  switch (g) {
    case Granularity::Character: {
      std::string prepared = lang == Lang::En ? lowercase_ascii(text) : text;
      std::vector<std::string> out;
      for (const auto& s : utf8_scalars(prepared))
        if (!is_space_scalar(s)) out.push_back(s);
      return out;
    }
    case Granularity::Word: {
      std::vector<std::string> out;
      for (const auto& chunk : detail::whitespace_chunks(text, lang)) {
        // Punctuation scalars become standalone tokens; the runs between
        // them are words (English) or segmenter input (Chinese).
        std::vector<std::string> run;
        auto flush_run = [&]() {
          if (run.empty()) return;
          if (lang == Lang::Zh) {
            if (opts.lexicon) {
              for (auto& w : detail::segment_greedy(run, *opts.lexicon)) out.push_back(std::move(w));
            } else {
              for (auto& s : run) out.push_back(std::move(s));
            }
          } else {
            std::string word;
            for (const auto& s : run) word += s;
            out.push_back(std::move(word));
          }
          run.clear();
        };
        for (auto& s : utf8_scalars(chunk)) {
          if (is_punct_scalar(s)) {
            flush_run();
            out.push_back(std::move(s));
          } else {
            run.push_back(std::move(s));
          }
        }
        flush_run();
      }
      return out;
    }
    case Granularity::Subword: {
      if (!opts.bpe)
        throw std::invalid_argument("tokenize: Subword granularity requires a BpeModel");
      return bpe_encode(*opts.bpe, detail::whitespace_chunks(text, lang));
    }
  }
  return {};
}

// Inverse of tokenize for display: joins tokens back into text using the
// conventions of the granularity/language pair.
inline std::string detokenize(const std::vector<std::string>& tokens, Lang lang, Granularity g) {
  std::vector<std::string> units = g == Granularity::Subword ? bpe_decode(tokens) : tokens;
  std::string sep = (lang == Lang::En && g != Granularity::Character) ? " " : "";
  std::string out;
  for (std::size_t i = 0; i < units.size(); ++i) {
    if (i > 0) out += sep;
    out += units[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary: specials occupy ids 0..3, then tokens by descending frequency
// (ties by first occurrence), capped at max_size entries total.

struct Vocabulary {
  std::unordered_map<std::string, int> token_to_id;
  std::vector<std::string> id_to_token;
  std::size_t max_size = 0;

  Vocabulary() {
    for (const auto& s : special_tokens()) {
      token_to_id.emplace(s, static_cast<int>(id_to_token.size()));
      id_to_token.push_back(s);
    }
    max_size = id_to_token.size();
  }

  std::size_t size() const { return id_to_token.size(); }

  int id(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? kUnkId : it->second;
  }

  const std::string& token(int id) const {
    if (id < 0 || id >= static_cast<int>(id_to_token.size()))
      throw std::out_of_range("Vocabulary::token: id " + std::to_string(id) + " out of range");
    return id_to_token[static_cast<std::size_t>(id)];
  }

  bool contains(const std::string& token) const { return token_to_id.count(token) > 0; }

  void add(const std::string& token) {
    if (token_to_id.count(token)) return;
    if (id_to_token.size() >= max_size)
      throw std::runtime_error("Vocabulary::add: capacity " + std::to_string(max_size) +
                               " exceeded");
    token_to_id.emplace(token, static_cast<int>(id_to_token.size()));
    id_to_token.push_back(token);
  }
};

inline Vocabulary build_vocab(const std::vector<std::string>& tokens, std::size_t max_size) {
  if (max_size < static_cast<std::size_t>(kNumSpecials))
    throw std::invalid_argument("build_vocab: max_size must be at least " +
                                std::to_string(kNumSpecials));
  struct Entry {
    long long count = 0;
    std::size_t first = 0;
  };
  std::unordered_map<std::string, Entry> counts;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto [it, inserted] = counts.try_emplace(tokens[i]);
    if (inserted) it->second.first = i;
    it->second.count += 1;
  }
  std::vector<std::pair<std::string, Entry>> ordered(counts.begin(), counts.end());
  std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
    if (a.second.count != b.second.count) return a.second.count > b.second.count;
    return a.second.first < b.second.first;
  });
  Vocabulary vocab;
  vocab.max_size = max_size;
  std::size_t capacity = max_size - kNumSpecials;
  for (std::size_t i = 0; i < ordered.size() && i < capacity; ++i) vocab.add(ordered[i].first);
  return vocab;
}

inline Vocabulary build_vocab(const std::vector<std::vector<std::string>>& sequences,
                              std::size_t max_size) {
  std::vector<std::string> flat;
  for (const auto& seq : sequences) flat.insert(flat.end(), seq.begin(), seq.end());
  return build_vocab(flat, max_size);
}

// Truncate to max_len tokens, map through the vocabulary (OOV -> UNK),
// append EOS; BOS is prepended only when the caller asks (decoder targets).
inline std::vector<int> encode_ids(const std::vector<std::string>& tokens,
                                   const Vocabulary& vocab, std::size_t max_len,
                                   bool add_bos = false) {
  if (max_len < 1) throw std::invalid_argument("encode_ids: max_len must be >= 1");
  std::vector<int> ids;
  ids.reserve(std::min(tokens.size(), max_len) + 2);
  if (add_bos) ids.push_back(kBosId);
  for (std::size_t i = 0; i < tokens.size() && i < max_len; ++i) ids.push_back(vocab.id(tokens[i]));
  ids.push_back(kEosId);
  return ids;
}

inline std::vector<std::string> decode_ids(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::vector<std::string> out;
  for (int id : ids) {
    if (id == kPadId || id == kBosId || id == kEosId) continue;
    out.push_back(vocab.token(id));
  }
  return out;
}

// ---------------------------------------------------------------------------
// File formats. Vocabulary: one token per line, line index = id - 4 (the
// specials are implicit). BPE: one merge per line, "left right".

inline void save_vocab(const Vocabulary& vocab, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_vocab: cannot open " + path);
  for (std::size_t i = kNumSpecials; i < vocab.id_to_token.size(); ++i)
    out << vocab.id_to_token[i] << '\n';
}

inline Vocabulary load_vocab(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_vocab: cannot open " + path);
  Vocabulary vocab;
  vocab.max_size = std::numeric_limits<std::size_t>::max();
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    vocab.add(line);
  }
  vocab.max_size = vocab.id_to_token.size();
  return vocab;
}

inline void save_bpe(const BpeModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_bpe: cannot open " + path);
  for (const auto& [left, right] : model.merges) out << left << ' ' << right << '\n';
}

inline BpeModel load_bpe(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_bpe: cannot open " + path);
  BpeModel model;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto space = line.find(' ');
    if (space == std::string::npos || space == 0 || space + 1 == line.size())
      throw std::runtime_error("load_bpe: malformed merge at " + path + ":" +
                               std::to_string(lineno));
    std::string left = line.substr(0, space);
    std::string right = line.substr(space + 1);
    model.merges.emplace_back(left, right);
    for (const auto& s : utf8_scalars(left)) model.vocab.insert(s);
    for (const auto& s : utf8_scalars(right)) model.vocab.insert(s);
    model.vocab.insert(left);
    model.vocab.insert(right);
    model.vocab.insert(left + right);
  }
  return model;
}

}  // namespace clsum
