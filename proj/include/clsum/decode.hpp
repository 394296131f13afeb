#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "clsum/corpus.hpp"
#include "clsum/model.hpp"
#include "clsum/tokenize.hpp"

namespace clsum {

struct Hypothesis {
  std::vector<int> ids;  // BOS, then generated tokens (EOS last when finished)
  double logprob = 0.0;
  bool finished = false;

  std::size_t generated() const { return ids.size() - 1; }

  // Length-normalized comparison score; generated() counts EOS.
  double score(bool length_norm) const {
    if (!length_norm) return logprob;
    return generated() == 0 ? 0.0 : logprob / static_cast<double>(generated());
  }
};

// Deterministic ordering: better score first, then shorter, then
// lexicographically smaller token ids.
inline bool hypothesis_before(const Hypothesis& a, const Hypothesis& b, bool length_norm) {
  double sa = a.score(length_norm), sb = b.score(length_norm);
  if (sa != sb) return sa > sb;
  if (a.ids.size() != b.ids.size()) return a.ids.size() < b.ids.size();
  return a.ids < b.ids;
}

namespace detail {

// Log-probabilities of the next token given the decoded prefix (the last
// logits row, log-softmaxed).
inline std::vector<double> next_token_logprobs(const ModelConfig& cfg, const EncoderParams& enc_p,
                                               const DecoderParams& dec_p, const Tensor& z,
                                               const std::vector<int>& src_ids,
                                               const std::vector<int>& prefix) {
  (void)enc_p;
  Tensor logits = decoder_forward(cfg, dec_p, z, src_ids, prefix);
  std::size_t v = logits->shape[1];
  const double* row = &logits->data[(prefix.size() - 1) * v];
  double mx = row[0];
  for (std::size_t i = 1; i < v; ++i) mx = std::max(mx, row[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < v; ++i) sum += std::exp(row[i] - mx);
  double lse = mx + std::log(sum);
  std::vector<double> out(v);
  for (std::size_t i = 0; i < v; ++i) out[i] = row[i] - lse;
  return out;
}

inline std::vector<int> strip_specials(const std::vector<int>& ids) {
  std::vector<int> out;
  for (int id : ids)
    if (id != kBosId && id != kEosId && id != kPadId) out.push_back(id);
  return out;
}

}  // namespace detail

// Beam search with a shared pool: each step expands every live hypothesis by
// all emittable tokens (PAD and BOS are never proposed), then keeps the best
// `beam` of the expansions plus the already-finished hypotheses. Returns the
// best finished hypothesis, or the best live one if nothing finished, with
// BOS/EOS stripped.
inline std::vector<int> beam_search(const ModelConfig& cfg, const EncoderParams& enc_p,
                                    const DecoderParams& dec_p, const std::vector<int>& src_ids,
                                    std::size_t beam, std::size_t max_len,
                                    bool length_norm = true) {
  if (beam < 1) throw std::invalid_argument("beam_search: beam must be >= 1");
  if (max_len < 1) throw std::invalid_argument("beam_search: max_len must be >= 1");
  Tensor z = encoder_forward(cfg, enc_p, src_ids);
  std::vector<Hypothesis> pool{Hypothesis{{kBosId}, 0.0, false}};
  for (std::size_t step = 0; step < max_len; ++step) {
    std::vector<Hypothesis> next;
    bool any_live = false;
    for (const Hypothesis& h : pool) {
      if (h.finished) {
        next.push_back(h);
        continue;
      }
      any_live = true;
      std::vector<double> logp =
          detail::next_token_logprobs(cfg, enc_p, dec_p, z, src_ids, h.ids);
      for (std::size_t v = 0; v < logp.size(); ++v) {
        if (static_cast<int>(v) == kPadId || static_cast<int>(v) == kBosId) continue;
        Hypothesis ext = h;
        ext.ids.push_back(static_cast<int>(v));
        ext.logprob += logp[v];
        ext.finished = static_cast<int>(v) == kEosId;
        next.push_back(std::move(ext));
      }
    }
    if (!any_live) break;
    std::sort(next.begin(), next.end(), [length_norm](const Hypothesis& a, const Hypothesis& b) {
      return hypothesis_before(a, b, length_norm);
    });
    if (next.size() > beam) next.resize(beam);
    pool = std::move(next);
  }
  const Hypothesis* best = nullptr;
  for (const Hypothesis& h : pool) {
    if (!h.finished) continue;
    if (!best || hypothesis_before(h, *best, length_norm)) best = &h;
  }
  if (!best)
    for (const Hypothesis& h : pool)
      if (!best || hypothesis_before(h, *best, length_norm)) best = &h;
  return detail::strip_specials(best->ids);
}

// Argmax token per step until EOS or max_len.
inline std::vector<int> greedy_decode(const ModelConfig& cfg, const EncoderParams& enc_p,
                                      const DecoderParams& dec_p, const std::vector<int>& src_ids,
                                      std::size_t max_len) {
  if (max_len < 1) throw std::invalid_argument("greedy_decode: max_len must be >= 1");
  Tensor z = encoder_forward(cfg, enc_p, src_ids);
  std::vector<int> prefix{kBosId};
  for (std::size_t step = 0; step < max_len; ++step) {
    std::vector<double> logp = detail::next_token_logprobs(cfg, enc_p, dec_p, z, src_ids, prefix);
    int best = -1;
    for (std::size_t v = 0; v < logp.size(); ++v) {
      if (static_cast<int>(v) == kPadId || static_cast<int>(v) == kBosId) continue;
      if (best < 0 || logp[v] > logp[best]) best = static_cast<int>(v);
    }
    prefix.push_back(best);
    if (best == kEosId) break;
  }
  return detail::strip_specials(prefix);
}

inline std::vector<int> beam_search(const TransformerParams& model,
                                    const std::vector<int>& src_ids, std::size_t beam,
                                    std::size_t max_len, bool length_norm = true) {
  return beam_search(model.config, model.encoder, model.decoder, src_ids, beam, max_len,
                     length_norm);
}

inline std::vector<int> greedy_decode(const TransformerParams& model,
                                      const std::vector<int>& src_ids, std::size_t max_len) {
  return greedy_decode(model.config, model.encoder, model.decoder, src_ids, max_len);
}

// ---------------------------------------------------------------------------
// Decoded-output records

struct OutputPair {
  std::string id;
  std::string summary;
};

inline void write_outputs(const std::vector<OutputPair>& outputs, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_outputs: cannot open " + path);
  for (const auto& o : outputs) {
    nlohmann::json j;
    j["id"] = o.id;
    j["summary"] = o.summary;
    out << j.dump() << '\n';
  }
}

inline std::vector<OutputPair> read_outputs(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_outputs: cannot open " + path);
  std::vector<OutputPair> outputs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    nlohmann::json j = detail::parse_line(line, lineno);
    OutputPair o;
    o.id = detail::require_string(j, "id", lineno);
    o.summary = detail::require_string(j, "summary", lineno);
    outputs.push_back(std::move(o));
  }
  return outputs;
}

inline std::string ids_to_text(const std::vector<int>& ids, const Vocabulary& vocab, Lang lang,
                               Granularity g) {
  return detokenize(decode_ids(ids, vocab), lang, g);
}

}  // namespace clsum
