#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "clsum/autodiff.hpp"
#include "clsum/tokenize.hpp"
#include "clsum/util.hpp"

namespace clsum {

struct ModelConfig {
  std::size_t n_layers_enc = 2;
  std::size_t n_layers_dec = 2;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  double dropout_p = 0.1;
  std::size_t src_vocab = 0;
  std::size_t tgt_vocab = 0;
  std::size_t max_positions = 512;
  bool use_positional = true;  // test knob: disable to expose permutation covariance

  std::size_t d_k() const { return d_model / n_heads; }

  void validate() const {
    if (n_heads == 0 || d_model == 0 || d_ff == 0 || n_layers_enc == 0 || n_layers_dec == 0)
      throw std::invalid_argument("ModelConfig: sizes must be positive");
    if (d_model % n_heads != 0)
      throw std::invalid_argument("ModelConfig: d_model " + std::to_string(d_model) +
                                  " not divisible by n_heads " + std::to_string(n_heads));
    if (src_vocab <= static_cast<std::size_t>(kNumSpecials) ||
        tgt_vocab <= static_cast<std::size_t>(kNumSpecials))
      throw std::invalid_argument("ModelConfig: vocab sizes must exceed the reserved ids");
    if (dropout_p < 0.0 || dropout_p >= 1.0)
      throw std::invalid_argument("ModelConfig: dropout_p must be in [0,1)");
  }

  // Small configuration that trains in seconds on one core.
  static ModelConfig desk_default() { return ModelConfig{}; }

  // The full-scale configuration: 6+6 layers, width 512, 8 heads, ffn 2048.
  static ModelConfig base() {
    ModelConfig c;
    c.n_layers_enc = 6;
    c.n_layers_dec = 6;
    c.d_model = 512;
    c.n_heads = 8;
    c.d_ff = 2048;
    c.dropout_p = 0.1;
    return c;
  }
};

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["n_layers_enc"] = c.n_layers_enc;
  j["n_layers_dec"] = c.n_layers_dec;
  j["d_model"] = c.d_model;
  j["n_heads"] = c.n_heads;
  j["d_ff"] = c.d_ff;
  j["dropout_p"] = c.dropout_p;
  j["src_vocab"] = c.src_vocab;
  j["tgt_vocab"] = c.tgt_vocab;
  j["max_positions"] = c.max_positions;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_layers_enc = j.at("n_layers_enc").get<std::size_t>();
  c.n_layers_dec = j.at("n_layers_dec").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.dropout_p = j.at("dropout_p").get<double>();
  c.src_vocab = j.at("src_vocab").get<std::size_t>();
  c.tgt_vocab = j.at("tgt_vocab").get<std::size_t>();
  c.max_positions = j.at("max_positions").get<std::size_t>();
  return c;
}

// ---------------------------------------------------------------------------
// Parameters

struct AttentionParams {
  std::vector<Tensor> wq, wk, wv;  // one (d_model x d_k) projection per head
  Tensor wo;                       // (d_model x d_model)
};

struct LayerNormParams {
  Tensor gain, bias;  // (d_model)
};

struct FfnParams {
  Tensor w1, b1, w2, b2;  // (d_model x d_ff), (d_ff), (d_ff x d_model), (d_model)
};

struct EncoderLayerParams {
  AttentionParams self_attn;
  LayerNormParams ln1;
  FfnParams ffn;
  LayerNormParams ln2;
};

struct DecoderLayerParams {
  AttentionParams self_attn;
  LayerNormParams ln1;
  AttentionParams cross_attn;
  LayerNormParams ln2;
  FfnParams ffn;
  LayerNormParams ln3;
};

struct EncoderParams {
  Tensor emb;  // (src_vocab x d_model)
  std::vector<EncoderLayerParams> layers;
  std::vector<double> pe;  // (max_positions x d_model), fixed, not a parameter
};

struct DecoderParams {
  Tensor emb;  // (vocab x d_model)
  std::vector<DecoderLayerParams> layers;
  Tensor w_out, b_out;  // (d_model x vocab), (vocab)
  std::vector<double> pe;
  std::size_t vocab = 0;
};

// PE(pos, 2i) = sin(pos / 10000^(2i/d)), PE(pos, 2i+1) = cos of the same
// angle; row-major (max_len x d_model).
inline std::vector<double> positional_encoding(std::size_t max_len, std::size_t d_model) {
  if (d_model % 2 != 0) throw std::invalid_argument("positional_encoding: d_model must be even");
  std::vector<double> pe(max_len * d_model);
  for (std::size_t pos = 0; pos < max_len; ++pos)
    for (std::size_t i = 0; i < d_model / 2; ++i) {
      double angle = static_cast<double>(pos) /
                     std::pow(10000.0, (2.0 * static_cast<double>(i)) / static_cast<double>(d_model));
      pe[pos * d_model + 2 * i] = std::sin(angle);
      pe[pos * d_model + 2 * i + 1] = std::cos(angle);
    }
  return pe;
}

namespace detail {

inline Tensor xavier(std::size_t rows, std::size_t cols, Rng& rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::vector<double> data(rows * cols);
  for (double& v : data) v = rng.uniform(-limit, limit);
  return param({rows, cols}, std::move(data));
}

inline Tensor zeros_param(std::size_t n) { return param({n}, std::vector<double>(n, 0.0)); }
inline Tensor ones_param(std::size_t n) { return param({n}, std::vector<double>(n, 1.0)); }

inline AttentionParams init_attention(const ModelConfig& cfg, Rng& rng) {
  AttentionParams a;
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    a.wq.push_back(xavier(cfg.d_model, cfg.d_k(), rng));
    a.wk.push_back(xavier(cfg.d_model, cfg.d_k(), rng));
    a.wv.push_back(xavier(cfg.d_model, cfg.d_k(), rng));
  }
  a.wo = xavier(cfg.d_model, cfg.d_model, rng);
  return a;
}

inline LayerNormParams init_ln(const ModelConfig& cfg) {
  return LayerNormParams{ones_param(cfg.d_model), zeros_param(cfg.d_model)};
}

inline FfnParams init_ffn(const ModelConfig& cfg, Rng& rng) {
  FfnParams f;
  f.w1 = xavier(cfg.d_model, cfg.d_ff, rng);
  f.b1 = zeros_param(cfg.d_ff);
  f.w2 = xavier(cfg.d_ff, cfg.d_model, rng);
  f.b2 = zeros_param(cfg.d_model);
  return f;
}

inline void collect_attention(const AttentionParams& a, const std::string& prefix,
                              NamedParams& out) {
  for (std::size_t h = 0; h < a.wq.size(); ++h) {
    out.emplace_back(prefix + ".q" + std::to_string(h), a.wq[h]);
    out.emplace_back(prefix + ".k" + std::to_string(h), a.wk[h]);
    out.emplace_back(prefix + ".v" + std::to_string(h), a.wv[h]);
  }
  out.emplace_back(prefix + ".o", a.wo);
}

inline void collect_ln(const LayerNormParams& ln, const std::string& prefix, NamedParams& out) {
  out.emplace_back(prefix + ".g", ln.gain);
  out.emplace_back(prefix + ".b", ln.bias);
}

inline void collect_ffn(const FfnParams& f, const std::string& prefix, NamedParams& out) {
  out.emplace_back(prefix + ".w1", f.w1);
  out.emplace_back(prefix + ".b1", f.b1);
  out.emplace_back(prefix + ".w2", f.w2);
  out.emplace_back(prefix + ".b2", f.b2);
}

}  // namespace detail

inline EncoderParams init_encoder(const ModelConfig& cfg, Rng& rng) {
  EncoderParams e;
  e.emb = detail::xavier(cfg.src_vocab, cfg.d_model, rng);
  for (std::size_t l = 0; l < cfg.n_layers_enc; ++l) {
    EncoderLayerParams layer;
    layer.self_attn = detail::init_attention(cfg, rng);
    layer.ln1 = detail::init_ln(cfg);
    layer.ffn = detail::init_ffn(cfg, rng);
    layer.ln2 = detail::init_ln(cfg);
    e.layers.push_back(std::move(layer));
  }
  e.pe = positional_encoding(cfg.max_positions, cfg.d_model);
  return e;
}

inline DecoderParams init_decoder(const ModelConfig& cfg, std::size_t vocab, Rng& rng) {
  DecoderParams d;
  d.vocab = vocab;
  d.emb = detail::xavier(vocab, cfg.d_model, rng);
  for (std::size_t l = 0; l < cfg.n_layers_dec; ++l) {
    DecoderLayerParams layer;
    layer.self_attn = detail::init_attention(cfg, rng);
    layer.ln1 = detail::init_ln(cfg);
    layer.cross_attn = detail::init_attention(cfg, rng);
    layer.ln2 = detail::init_ln(cfg);
    layer.ffn = detail::init_ffn(cfg, rng);
    layer.ln3 = detail::init_ln(cfg);
    d.layers.push_back(std::move(layer));
  }
  d.w_out = detail::xavier(cfg.d_model, vocab, rng);
  d.b_out = detail::zeros_param(vocab);
  d.pe = positional_encoding(cfg.max_positions, cfg.d_model);
  return d;
}

inline void collect_params(const EncoderParams& e, const std::string& prefix, NamedParams& out) {
  out.emplace_back(prefix + ".emb", e.emb);
  for (std::size_t l = 0; l < e.layers.size(); ++l) {
    std::string lp = prefix + "." + std::to_string(l);
    detail::collect_attention(e.layers[l].self_attn, lp + ".self", out);
    detail::collect_ln(e.layers[l].ln1, lp + ".ln1", out);
    detail::collect_ffn(e.layers[l].ffn, lp + ".ffn", out);
    detail::collect_ln(e.layers[l].ln2, lp + ".ln2", out);
  }
}

inline void collect_params(const DecoderParams& d, const std::string& prefix, NamedParams& out) {
  out.emplace_back(prefix + ".emb", d.emb);
  for (std::size_t l = 0; l < d.layers.size(); ++l) {
    std::string lp = prefix + "." + std::to_string(l);
    detail::collect_attention(d.layers[l].self_attn, lp + ".self", out);
    detail::collect_ln(d.layers[l].ln1, lp + ".ln1", out);
    detail::collect_attention(d.layers[l].cross_attn, lp + ".cross", out);
    detail::collect_ln(d.layers[l].ln2, lp + ".ln2", out);
    detail::collect_ffn(d.layers[l].ffn, lp + ".ffn", out);
    detail::collect_ln(d.layers[l].ln3, lp + ".ln3", out);
  }
  out.emplace_back(prefix + ".out.w", d.w_out);
  out.emplace_back(prefix + ".out.b", d.b_out);
}

struct TransformerParams {
  ModelConfig config;
  EncoderParams encoder;
  DecoderParams decoder;

  NamedParams all() const {
    NamedParams out;
    collect_params(encoder, "enc", out);
    collect_params(decoder, "dec", out);
    return out;
  }
};

inline TransformerParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  TransformerParams p;
  p.config = cfg;
  p.encoder = init_encoder(cfg, rng);
  p.decoder = init_decoder(cfg, cfg.tgt_vocab, rng);
  return p;
}

// ---------------------------------------------------------------------------
// Forward passes

struct DropoutCtx {
  double p = 0.0;
  Rng* rng = nullptr;
  bool train = false;
};

namespace detail {

inline Tensor apply_dropout(const Tensor& t, const DropoutCtx& ctx) {
  if (!ctx.train || ctx.p == 0.0) return t;
  if (!ctx.rng) throw std::invalid_argument("dropout requested without an rng");
  return dropout(t, ctx.p, *ctx.rng, true);
}

}  // namespace detail

// softmax(QK^T / sqrt(d_k)) V with an optional visibility mask (true =
// attendable). A row with no visible key is an error, surfaced by the
// masked softmax.
inline Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                   const std::vector<std::uint8_t>* mask = nullptr) {
  if (q->shape.size() != 2 || k->shape.size() != 2 || v->shape.size() != 2)
    throw std::invalid_argument("scaled_dot_attention: inputs must be 2-d");
  if (q->shape[1] != k->shape[1])
    throw std::invalid_argument("scaled_dot_attention: query width " + shape_str(q->shape) +
                                " vs key width " + shape_str(k->shape));
  if (k->shape[0] != v->shape[0])
    throw std::invalid_argument("scaled_dot_attention: key count " + shape_str(k->shape) +
                                " vs value count " + shape_str(v->shape));
  double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(q->shape[1]));
  Tensor scores = scale(matmul(q, transpose(k)), inv_sqrt_dk);
  Tensor weights = mask ? masked_softmax(scores, *mask) : softmax(scores);
  return matmul(weights, v);
}

// h parallel heads over per-head projections of the same inputs,
// concatenated and mixed by the output projection.
inline Tensor multi_head(const Tensor& x_q, const Tensor& x_kv, const AttentionParams& p,
                         const std::vector<std::uint8_t>* mask = nullptr) {
  std::vector<Tensor> heads;
  heads.reserve(p.wq.size());
  for (std::size_t h = 0; h < p.wq.size(); ++h) {
    Tensor q = matmul(x_q, p.wq[h]);
    Tensor k = matmul(x_kv, p.wk[h]);
    Tensor v = matmul(x_kv, p.wv[h]);
    heads.push_back(scaled_dot_attention(q, k, v, mask));
  }
  return matmul(concat_cols(heads), p.wo);
}

namespace detail {

inline Tensor ffn_forward(const Tensor& x, const FfnParams& f) {
  Tensor hidden = relu(add_rowwise(matmul(x, f.w1), f.b1));
  return add_rowwise(matmul(hidden, f.w2), f.b2);
}

// Residual connection around the sublayer output, then layer norm.
inline Tensor post_norm(const Tensor& x, const Tensor& sublayer, const LayerNormParams& ln,
                        const DropoutCtx& ctx) {
  return layer_norm(add(x, apply_dropout(sublayer, ctx)), ln.gain, ln.bias);
}

inline Tensor embed_with_positions(const Tensor& emb, const std::vector<double>& pe,
                                   const ModelConfig& cfg, const std::vector<int>& ids,
                                   const DropoutCtx& ctx) {
  if (ids.size() > cfg.max_positions)
    throw std::invalid_argument("input length " + std::to_string(ids.size()) +
                                " exceeds max_positions " + std::to_string(cfg.max_positions));
  Tensor x = scale(embedding_lookup(emb, ids), std::sqrt(static_cast<double>(cfg.d_model)));
  if (cfg.use_positional) {
    std::vector<double> slice(pe.begin(),
                              pe.begin() + static_cast<std::ptrdiff_t>(ids.size() * cfg.d_model));
    x = add(x, constant({ids.size(), cfg.d_model}, std::move(slice)));
  }
  return apply_dropout(x, ctx);
}

}  // namespace detail

// Visibility masks (true = key attendable from that query position).
inline std::vector<std::uint8_t> self_attention_mask(const std::vector<int>& ids) {
  std::size_t n = ids.size();
  std::vector<std::uint8_t> mask(n * n);
  for (std::size_t q = 0; q < n; ++q)
    for (std::size_t k = 0; k < n; ++k) mask[q * n + k] = ids[k] != kPadId ? 1 : 0;
  return mask;
}

inline std::vector<std::uint8_t> causal_mask(const std::vector<int>& ids) {
  std::size_t n = ids.size();
  std::vector<std::uint8_t> mask(n * n);
  for (std::size_t q = 0; q < n; ++q)
    for (std::size_t k = 0; k <= q; ++k) mask[q * n + k] = ids[k] != kPadId ? 1 : 0;
  return mask;
}

inline std::vector<std::uint8_t> cross_attention_mask(std::size_t n_queries,
                                                      const std::vector<int>& src_ids) {
  std::vector<std::uint8_t> mask(n_queries * src_ids.size());
  for (std::size_t q = 0; q < n_queries; ++q)
    for (std::size_t k = 0; k < src_ids.size(); ++k)
      mask[q * src_ids.size() + k] = src_ids[k] != kPadId ? 1 : 0;
  return mask;
}

inline Tensor encoder_forward(const ModelConfig& cfg, const EncoderParams& p,
                              const std::vector<int>& src_ids, const DropoutCtx& ctx = {}) {
  if (src_ids.empty()) throw std::invalid_argument("encoder_forward: empty input");
  Tensor x = detail::embed_with_positions(p.emb, p.pe, cfg, src_ids, ctx);
  std::vector<std::uint8_t> mask = self_attention_mask(src_ids);
  for (const auto& layer : p.layers) {
    Tensor a = multi_head(x, x, layer.self_attn, &mask);
    x = detail::post_norm(x, a, layer.ln1, ctx);
    Tensor f = detail::ffn_forward(x, layer.ffn);
    x = detail::post_norm(x, f, layer.ln2, ctx);
  }
  return x;
}

// z: encoder output for src_ids (needed again here to mask pad keys in
// cross attention). Returns (len(tgt_ids) x vocab) logits.
inline Tensor decoder_forward(const ModelConfig& cfg, const DecoderParams& p, const Tensor& z,
                              const std::vector<int>& src_ids, const std::vector<int>& tgt_ids,
                              const DropoutCtx& ctx = {}) {
  if (tgt_ids.empty()) throw std::invalid_argument("decoder_forward: empty target");
  if (z->shape.size() != 2 || z->shape[0] != src_ids.size() || z->shape[1] != cfg.d_model)
    throw std::invalid_argument("decoder_forward: encoder output shape " + shape_str(z->shape) +
                                " does not match source length " +
                                std::to_string(src_ids.size()));
  Tensor x = detail::embed_with_positions(p.emb, p.pe, cfg, tgt_ids, ctx);
  std::vector<std::uint8_t> self_mask = causal_mask(tgt_ids);
  std::vector<std::uint8_t> cross = cross_attention_mask(tgt_ids.size(), src_ids);
  for (const auto& layer : p.layers) {
    Tensor a = multi_head(x, x, layer.self_attn, &self_mask);
    x = detail::post_norm(x, a, layer.ln1, ctx);
    Tensor c = multi_head(x, z, layer.cross_attn, &cross);
    x = detail::post_norm(x, c, layer.ln2, ctx);
    Tensor f = detail::ffn_forward(x, layer.ffn);
    x = detail::post_norm(x, f, layer.ln3, ctx);
  }
  return add_rowwise(matmul(x, p.w_out), p.b_out);
}

// ---------------------------------------------------------------------------
// Checkpoint + sidecar

inline void save_model(const TransformerParams& model, const std::string& ckpt_path,
                       const std::string& config_path) {
  NamedParams named = model.all();
  save_params(named, ckpt_path);
  nlohmann::json j = model_config_to_json(model.config);
  std::string tmp = config_path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_model: cannot open " + tmp);
    out << j.dump(2) << '\n';
  }
  if (std::rename(tmp.c_str(), config_path.c_str()) != 0)
    throw std::runtime_error("save_model: cannot rename " + tmp + " to " + config_path);
}

inline TransformerParams load_model(const std::string& ckpt_path, const std::string& config_path) {
  std::ifstream in(config_path, std::ios::binary);
  if (!in) throw std::runtime_error("load_model: cannot open " + config_path);
  nlohmann::json j = nlohmann::json::parse(in);
  ModelConfig cfg = model_config_from_json(j);
  TransformerParams model = init_params(cfg, 0);
  NamedParams named = model.all();
  load_params_into(named, ckpt_path);
  return model;
}

}  // namespace clsum
