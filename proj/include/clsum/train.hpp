#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "clsum/autodiff.hpp"
#include "clsum/corpus.hpp"
#include "clsum/model.hpp"
#include "clsum/tokenize.hpp"

namespace clsum {

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.998;
  double eps = 1e-9;
};

// Inverse-square-root schedule with linear warmup:
// d_model^-0.5 * min(step^-0.5, step * warmup^-1.5).
inline double lr_schedule(std::size_t d_model, std::size_t step, std::size_t warmup) {
  if (step == 0) throw std::invalid_argument("lr_schedule: step must be >= 1");
  double s = static_cast<double>(step);
  double w = static_cast<double>(warmup);
  return std::pow(static_cast<double>(d_model), -0.5) * std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

struct AdamSlot {
  std::vector<double> m, v;
  std::size_t t = 0;  // per-parameter update count for bias correction
};

struct AdamState {
  std::unordered_map<std::string, AdamSlot> slots;
};

// Bias-corrected Adam over the given parameter subset. A parameter absent
// from a call keeps its slot untouched, so alternating regimes can update
// disjoint subsets without corrupting each other's moments.
inline void adam_step(const NamedParams& params, AdamState& state, const AdamConfig& cfg,
                      double lr) {
  for (const auto& [name, tensor] : params) {
    tensor->ensure_grad();
    AdamSlot& slot = state.slots[name];
    if (slot.m.size() != tensor->data.size()) {
      slot.m.assign(tensor->data.size(), 0.0);
      slot.v.assign(tensor->data.size(), 0.0);
      slot.t = 0;
    }
    slot.t += 1;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(slot.t));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(slot.t));
    for (std::size_t i = 0; i < tensor->data.size(); ++i) {
      double g = tensor->grad[i];
      if (!std::isfinite(g))
        throw std::runtime_error("adam_step: non-finite gradient in " + name);
      slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * g;
      slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * g * g;
      double mhat = slot.m[i] / bc1;
      double vhat = slot.v[i] / bc2;
      tensor->data[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Examples and batching

struct Example {
  std::string id;
  std::vector<int> src;  // source ids ending in EOS
  std::vector<int> tgt;  // target ids: BOS ... EOS
};

struct JointExample {
  std::string id;
  std::vector<int> src;
  std::vector<int> tgt_cls;  // BOS ... EOS, primary-task target
  std::vector<int> tgt_aux;  // BOS ... EOS, second-task target
};

struct TokenizeSettings {
  Lang lang = Lang::En;
  Granularity granularity = Granularity::Word;
  const BpeModel* bpe = nullptr;
  const Lexicon* lexicon = nullptr;
  std::size_t max_len = 200;
};

inline std::vector<int> encode_text(const std::string& text, const Vocabulary& vocab,
                                    const TokenizeSettings& s, bool add_bos) {
  TokenizerOptions opts;
  opts.bpe = s.bpe;
  opts.lexicon = s.lexicon;
  return encode_ids(tokenize(text, s.lang, s.granularity, opts), vocab, s.max_len, add_bos);
}

inline std::vector<Example> prepare_examples(const std::vector<ClsPair>& pairs,
                                             const Vocabulary& src_vocab,
                                             const Vocabulary& tgt_vocab,
                                             const TokenizeSettings& src_s,
                                             const TokenizeSettings& tgt_s) {
  std::vector<Example> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    Example e;
    e.id = p.id;
    e.src = encode_text(p.doc, src_vocab, src_s, false);
    e.tgt = encode_text(p.summary_tgt, tgt_vocab, tgt_s, true);
    out.push_back(std::move(e));
  }
  return out;
}

// The second target of a joint example is the retained source-language
// reference (the monolingual-summarization view of the same document).
inline std::vector<JointExample> prepare_joint_examples(const std::vector<ClsPair>& pairs,
                                                        const Vocabulary& src_vocab,
                                                        const Vocabulary& tgt_vocab,
                                                        const Vocabulary& aux_vocab,
                                                        const TokenizeSettings& src_s,
                                                        const TokenizeSettings& tgt_s,
                                                        const TokenizeSettings& aux_s) {
  std::vector<JointExample> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    JointExample e;
    e.id = p.id;
    e.src = encode_text(p.doc, src_vocab, src_s, false);
    e.tgt_cls = encode_text(p.summary_tgt, tgt_vocab, tgt_s, true);
    e.tgt_aux = encode_text(p.summary_src_retained, aux_vocab, aux_s, true);
    out.push_back(std::move(e));
  }
  return out;
}

// Seeded shuffle, then greedy packing under a twin constraint: batch size
// times the longest source must stay within the budget, and likewise for
// the longest target. Every example lands in exactly one batch.
inline std::vector<std::vector<std::size_t>> make_batches(
    const std::vector<std::pair<std::size_t, std::size_t>>& sizes, std::size_t token_budget,
    std::uint64_t seed) {
  for (std::size_t i = 0; i < sizes.size(); ++i)
    if (sizes[i].first > token_budget || sizes[i].second > token_budget)
      throw std::invalid_argument("make_batches: example " + std::to_string(i) + " (" +
                                  std::to_string(sizes[i].first) + " src / " +
                                  std::to_string(sizes[i].second) +
                                  " tgt tokens) exceeds token budget " +
                                  std::to_string(token_budget));
  std::vector<std::size_t> order(sizes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> current;
  std::size_t max_src = 0, max_tgt = 0;
  for (std::size_t idx : order) {
    std::size_t new_src = std::max(max_src, sizes[idx].first);
    std::size_t new_tgt = std::max(max_tgt, sizes[idx].second);
    std::size_t n = current.size() + 1;
    if (!current.empty() && (n * new_src > token_budget || n * new_tgt > token_budget)) {
      batches.push_back(current);
      current.clear();
      new_src = sizes[idx].first;
      new_tgt = sizes[idx].second;
    }
    current.push_back(idx);
    max_src = new_src;
    max_tgt = new_tgt;
  }
  if (!current.empty()) batches.push_back(current);
  return batches;
}

// ---------------------------------------------------------------------------
// Losses

// Negative mean log-likelihood of the target continuation: the decoder sees
// tgt[0..n-2] and must predict tgt[1..n-1].
inline Tensor cls_loss(const ModelConfig& cfg, const EncoderParams& enc, const DecoderParams& dec,
                       const std::vector<int>& src, const std::vector<int>& tgt,
                       const DropoutCtx& ctx = {}, double smoothing = 0.0) {
  if (tgt.size() < 2)
    throw std::invalid_argument("cls_loss: target must contain at least BOS and one token");
  std::vector<int> tgt_in(tgt.begin(), tgt.end() - 1);
  std::vector<int> tgt_out(tgt.begin() + 1, tgt.end());
  Tensor z = encoder_forward(cfg, enc, src, ctx);
  Tensor logits = decoder_forward(cfg, dec, z, src, tgt_in, ctx);
  return cross_entropy(logits, tgt_out, kPadId, smoothing);
}

// Sum of the two task losses over one shared encoding; gradients reach the
// encoder through both terms.
inline Tensor joint_loss(const ModelConfig& cfg, const EncoderParams& enc,
                         const DecoderParams& dec_cls, const DecoderParams& dec_aux,
                         const std::vector<int>& src, const std::vector<int>& tgt_cls,
                         const std::vector<int>& tgt_aux, const DropoutCtx& ctx = {},
                         double smoothing = 0.0) {
  if (tgt_cls.size() < 2 || tgt_aux.size() < 2)
    throw std::invalid_argument("joint_loss: both targets must be present");
  Tensor z = encoder_forward(cfg, enc, src, ctx);
  auto term = [&](const DecoderParams& dec, const std::vector<int>& tgt) {
    std::vector<int> tgt_in(tgt.begin(), tgt.end() - 1);
    std::vector<int> tgt_out(tgt.begin() + 1, tgt.end());
    Tensor logits = decoder_forward(cfg, dec, z, src, tgt_in, ctx);
    return cross_entropy(logits, tgt_out, kPadId, smoothing);
  };
  return add(term(dec_cls, tgt_cls), term(dec_aux, tgt_aux));
}

// ---------------------------------------------------------------------------
// Training loop

enum class TrainMode { Single, JointMS, AlternatingMT };

inline std::string train_mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::Single: return "single";
    case TrainMode::JointMS: return "joint";
    default: return "alternating";
  }
}

inline TrainMode parse_train_mode(const std::string& s) {
  if (s == "single") return TrainMode::Single;
  if (s == "joint" || s == "joint-ms") return TrainMode::JointMS;
  if (s == "alternating" || s == "alternating-mt") return TrainMode::AlternatingMT;
  throw std::invalid_argument("unknown training mode: " + s);
}

struct TrainPlan {
  TrainMode mode = TrainMode::Single;
  std::size_t alternate_k = 1;  // batches per task before switching
  std::size_t token_budget = 2048;
  std::size_t max_steps = 1000;
  std::uint64_t seed = 0;
  std::size_t warmup = 4000;
  double lr_scale = 1.0;
  double label_smoothing = 0.0;
  double stop_loss = -1.0;  // early stop when batch loss drops below (if >= 0)
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  std::string checkpoint_path;       // empty: no checkpoints written
  std::string config_path;           // sidecar for checkpoint_path
  std::string metrics_path;          // empty: in-memory log only

  void validate() const {
    if (alternate_k < 1) throw std::invalid_argument("TrainPlan: alternate_k must be >= 1");
    if (max_steps < 1) throw std::invalid_argument("TrainPlan: max_steps must be >= 1");
    if (token_budget < 1) throw std::invalid_argument("TrainPlan: token_budget must be >= 1");
  }
};

struct StepRecord {
  std::size_t step = 0;
  std::string task;
  double loss = 0.0;
  double lr = 0.0;
  std::size_t tokens = 0;  // non-pad target tokens in the batch
};

struct TrainResult {
  std::vector<StepRecord> log;
  double final_loss = 0.0;
  std::size_t steps_run = 0;
};

namespace detail {

class MetricsLog {
 public:
  explicit MetricsLog(const std::string& path) {
    if (!path.empty()) {
      out_.open(path, std::ios::binary | std::ios::app);
      if (!out_) throw std::runtime_error("cannot open metrics log " + path);
    }
  }
  void write(const StepRecord& r) {
    if (!out_.is_open()) return;
    nlohmann::json j;
    j["step"] = r.step;
    j["task"] = r.task;
    j["loss"] = r.loss;
    j["lr"] = r.lr;
    j["tokens"] = r.tokens;
    out_ << j.dump() << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

// Endless seeded batch stream: re-shuffles with a fresh epoch-derived seed
// whenever the previous epoch is exhausted.
class BatchStream {
 public:
  BatchStream(std::vector<std::pair<std::size_t, std::size_t>> sizes, std::size_t budget,
              std::uint64_t seed)
      : sizes_(std::move(sizes)), budget_(budget), seed_(seed) {}

  const std::vector<std::size_t>& next() {
    if (cursor_ >= batches_.size()) {
      batches_ = make_batches(sizes_, budget_,
                              fnv1a64(std::to_string(seed_) + ":" + std::to_string(epoch_)));
      cursor_ = 0;
      ++epoch_;
    }
    return batches_[cursor_++];
  }

 private:
  std::vector<std::pair<std::size_t, std::size_t>> sizes_;
  std::size_t budget_;
  std::uint64_t seed_;
  std::vector<std::vector<std::size_t>> batches_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
};

inline void guard_finite(double loss, std::size_t step) {
  if (!std::isfinite(loss))
    throw std::runtime_error("training diverged: non-finite loss at step " +
                             std::to_string(step));
}

}  // namespace detail

// Mean per-token loss of a dataset under the current parameters (no dropout,
// no gradient use; safe to call between steps).
inline double eval_loss(const ModelConfig& cfg, const EncoderParams& enc,
                        const DecoderParams& dec, const std::vector<Example>& data) {
  if (data.empty()) throw std::invalid_argument("eval_loss: empty dataset");
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& ex : data) {
    Tensor loss = cls_loss(cfg, enc, dec, ex.src, ex.tgt);
    std::size_t n = ex.tgt.size() - 1;
    total += scalar_value(loss) * static_cast<double>(n);
    tokens += n;
  }
  return total / static_cast<double>(tokens);
}

// Single-task training. When valid data is supplied, the checkpoint written
// at the end is the best-validation-loss snapshot, not necessarily the final
// parameters (the model itself is left at its final state).
inline TrainResult train_single(TransformerParams& model, const std::vector<Example>& data,
                                const TrainPlan& plan,
                                const std::vector<Example>* valid = nullptr) {
  plan.validate();
  if (data.empty()) throw std::invalid_argument("train_single: empty dataset");
  const ModelConfig& cfg = model.config;
  NamedParams params = model.all();
  AdamState state;
  AdamConfig adam;
  Rng dropout_rng(plan.seed + 0x9E3779B97F4A7C15ull);
  DropoutCtx ctx{cfg.dropout_p, &dropout_rng, true};

  std::vector<std::pair<std::size_t, std::size_t>> sizes;
  sizes.reserve(data.size());
  for (const auto& ex : data) sizes.emplace_back(ex.src.size(), ex.tgt.size() - 1);
  detail::BatchStream stream(std::move(sizes), plan.token_budget, plan.seed);
  detail::MetricsLog metrics(plan.metrics_path);

  TrainResult result;
  double best_valid = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best_snapshot;
  auto snapshot = [&]() {
    best_snapshot.clear();
    for (const auto& [name, t] : params) best_snapshot.push_back(t->data);
  };
  auto maybe_checkpoint = [&](bool force) {
    if (plan.checkpoint_path.empty()) return;
    if (valid) {
      double vl = eval_loss(cfg, model.encoder, model.decoder, *valid);
      if (vl < best_valid) {
        best_valid = vl;
        snapshot();
      }
      if (force) {
        if (!best_snapshot.empty()) {
          std::vector<std::vector<double>> current;
          for (const auto& [name, t] : params) current.push_back(t->data);
          for (std::size_t i = 0; i < params.size(); ++i)
            params[i].second->data = best_snapshot[i];
          save_model(model, plan.checkpoint_path,
                     plan.config_path.empty() ? plan.checkpoint_path + ".json" : plan.config_path);
          for (std::size_t i = 0; i < params.size(); ++i) params[i].second->data = current[i];
        }
      }
    } else if (force || plan.checkpoint_every > 0) {
      save_model(model, plan.checkpoint_path,
                 plan.config_path.empty() ? plan.checkpoint_path + ".json" : plan.config_path);
    }
  };

  for (std::size_t step = 1; step <= plan.max_steps; ++step) {
    const std::vector<std::size_t>& batch = stream.next();
    std::size_t total_tokens = 0;
    for (std::size_t idx : batch) total_tokens += data[idx].tgt.size() - 1;
    zero_grads(params);
    double batch_loss = 0.0;
    for (std::size_t idx : batch) {
      const Example& ex = data[idx];
      double w = static_cast<double>(ex.tgt.size() - 1) / static_cast<double>(total_tokens);
      Tensor loss = scale(
          cls_loss(cfg, model.encoder, model.decoder, ex.src, ex.tgt, ctx, plan.label_smoothing),
          w);
      batch_loss += scalar_value(loss);
      backward(loss);
    }
    detail::guard_finite(batch_loss, step);
    double lr = plan.lr_scale * lr_schedule(cfg.d_model, step, plan.warmup);
    adam_step(params, state, adam, lr);

    StepRecord rec{step, "cls", batch_loss, lr, total_tokens};
    metrics.write(rec);
    result.log.push_back(rec);
    result.final_loss = batch_loss;
    result.steps_run = step;
    if (plan.checkpoint_every > 0 && step % plan.checkpoint_every == 0) maybe_checkpoint(false);
    if (plan.stop_loss >= 0.0 && batch_loss < plan.stop_loss) break;
  }
  maybe_checkpoint(true);
  return result;
}

// ---------------------------------------------------------------------------
// Multi-task models: one encoder, a decoder for the primary task and a
// decoder for the auxiliary task (monolingual summarization or translation).

struct MultiTaskModel {
  ModelConfig config;      // tgt_vocab sizes the primary decoder
  std::size_t aux_vocab = 0;
  EncoderParams encoder;
  DecoderParams dec_cls;
  DecoderParams dec_aux;

  NamedParams all() const {
    NamedParams out;
    collect_params(encoder, "enc", out);
    collect_params(dec_cls, "cls", out);
    collect_params(dec_aux, "aux", out);
    return out;
  }

  // The primary-task submodel, sharing tensors with this model; saving it
  // yields a checkpoint the decoder tooling loads like any single-task one.
  TransformerParams primary() const {
    TransformerParams t;
    t.config = config;
    t.encoder = encoder;
    t.decoder = dec_cls;
    return t;
  }
};

inline MultiTaskModel init_multitask(const ModelConfig& cfg, std::size_t aux_vocab,
                                     std::uint64_t seed) {
  cfg.validate();
  if (aux_vocab <= static_cast<std::size_t>(kNumSpecials))
    throw std::invalid_argument("init_multitask: aux vocab must exceed the reserved ids");
  Rng rng(seed);
  MultiTaskModel m;
  m.config = cfg;
  m.aux_vocab = aux_vocab;
  m.encoder = init_encoder(cfg, rng);
  m.dec_cls = init_decoder(cfg, cfg.tgt_vocab, rng);
  m.dec_aux = init_decoder(cfg, aux_vocab, rng);
  return m;
}

// Joint regime: every step encodes each example once and sums both task
// losses (token-weighted within the batch per task).
inline TrainResult train_joint(MultiTaskModel& model, const std::vector<JointExample>& data,
                               const TrainPlan& plan) {
  plan.validate();
  if (data.empty()) throw std::invalid_argument("train_joint: empty dataset");
  const ModelConfig& cfg = model.config;
  NamedParams params = model.all();
  AdamState state;
  AdamConfig adam;
  Rng dropout_rng(plan.seed + 0x9E3779B97F4A7C15ull);
  DropoutCtx ctx{cfg.dropout_p, &dropout_rng, true};

  std::vector<std::pair<std::size_t, std::size_t>> sizes;
  sizes.reserve(data.size());
  for (const auto& ex : data)
    sizes.emplace_back(ex.src.size(), std::max(ex.tgt_cls.size(), ex.tgt_aux.size()) - 1);
  detail::BatchStream stream(std::move(sizes), plan.token_budget, plan.seed);
  detail::MetricsLog metrics(plan.metrics_path);

  TrainResult result;
  for (std::size_t step = 1; step <= plan.max_steps; ++step) {
    const std::vector<std::size_t>& batch = stream.next();
    std::size_t cls_tokens = 0, aux_tokens = 0;
    for (std::size_t idx : batch) {
      cls_tokens += data[idx].tgt_cls.size() - 1;
      aux_tokens += data[idx].tgt_aux.size() - 1;
    }
    zero_grads(params);
    double batch_loss = 0.0;
    for (std::size_t idx : batch) {
      const JointExample& ex = data[idx];
      Tensor z = encoder_forward(cfg, model.encoder, ex.src, ctx);
      auto term = [&](const DecoderParams& dec, const std::vector<int>& tgt,
                      std::size_t task_tokens) {
        std::vector<int> tgt_in(tgt.begin(), tgt.end() - 1);
        std::vector<int> tgt_out(tgt.begin() + 1, tgt.end());
        Tensor logits = decoder_forward(cfg, dec, z, ex.src, tgt_in, ctx);
        Tensor ce = cross_entropy(logits, tgt_out, kPadId, plan.label_smoothing);
        double w = static_cast<double>(tgt.size() - 1) / static_cast<double>(task_tokens);
        return scale(ce, w);
      };
      Tensor loss =
          add(term(model.dec_cls, ex.tgt_cls, cls_tokens), term(model.dec_aux, ex.tgt_aux, aux_tokens));
      batch_loss += scalar_value(loss);
      backward(loss);
    }
    detail::guard_finite(batch_loss, step);
    double lr = plan.lr_scale * lr_schedule(cfg.d_model, step, plan.warmup);
    adam_step(params, state, adam, lr);

    StepRecord rec{step, "joint", batch_loss, lr, cls_tokens + aux_tokens};
    metrics.write(rec);
    result.log.push_back(rec);
    result.final_loss = batch_loss;
    result.steps_run = step;
    if (plan.stop_loss >= 0.0 && batch_loss < plan.stop_loss) break;
  }
  if (!plan.checkpoint_path.empty()) {
    TransformerParams primary = model.primary();
    save_model(primary, plan.checkpoint_path,
               plan.config_path.empty() ? plan.checkpoint_path + ".json" : plan.config_path);
  }
  return result;
}

// Alternating regime: k consecutive batches of the primary task, then k of
// the auxiliary task, repeating; task b of step s is ((s-1)/k) mod 2. Only
// the parameters of the active task (encoder + its decoder) are stepped.
inline TrainResult train_alternating(MultiTaskModel& model, const std::vector<Example>& cls_data,
                                     const std::vector<Example>& aux_data, const TrainPlan& plan) {
  plan.validate();
  if (cls_data.empty() || aux_data.empty())
    throw std::invalid_argument("train_alternating: both datasets must be non-empty");
  const ModelConfig& cfg = model.config;
  NamedParams cls_params, aux_params;
  collect_params(model.encoder, "enc", cls_params);
  collect_params(model.dec_cls, "cls", cls_params);
  collect_params(model.encoder, "enc", aux_params);
  collect_params(model.dec_aux, "aux", aux_params);
  AdamState state;
  AdamConfig adam;
  Rng dropout_rng(plan.seed + 0x9E3779B97F4A7C15ull);
  DropoutCtx ctx{cfg.dropout_p, &dropout_rng, true};

  auto sizes_of = [](const std::vector<Example>& data) {
    std::vector<std::pair<std::size_t, std::size_t>> sizes;
    sizes.reserve(data.size());
    for (const auto& ex : data) sizes.emplace_back(ex.src.size(), ex.tgt.size() - 1);
    return sizes;
  };
  detail::BatchStream cls_stream(sizes_of(cls_data), plan.token_budget, plan.seed);
  detail::BatchStream aux_stream(sizes_of(aux_data), plan.token_budget, plan.seed + 1);
  detail::MetricsLog metrics(plan.metrics_path);

  TrainResult result;
  for (std::size_t step = 1; step <= plan.max_steps; ++step) {
    bool aux_turn = ((step - 1) / plan.alternate_k) % 2 == 1;
    const std::vector<Example>& data = aux_turn ? aux_data : cls_data;
    const DecoderParams& dec = aux_turn ? model.dec_aux : model.dec_cls;
    NamedParams& params = aux_turn ? aux_params : cls_params;
    const std::vector<std::size_t>& batch = aux_turn ? aux_stream.next() : cls_stream.next();

    std::size_t total_tokens = 0;
    for (std::size_t idx : batch) total_tokens += data[idx].tgt.size() - 1;
    zero_grads(params);
    double batch_loss = 0.0;
    for (std::size_t idx : batch) {
      const Example& ex = data[idx];
      double w = static_cast<double>(ex.tgt.size() - 1) / static_cast<double>(total_tokens);
      Tensor loss = scale(
          cls_loss(cfg, model.encoder, dec, ex.src, ex.tgt, ctx, plan.label_smoothing), w);
      batch_loss += scalar_value(loss);
      backward(loss);
    }
    detail::guard_finite(batch_loss, step);
    double lr = plan.lr_scale * lr_schedule(cfg.d_model, step, plan.warmup);
    adam_step(params, state, adam, lr);

    StepRecord rec{step, aux_turn ? "mt" : "cls", batch_loss, lr, total_tokens};
    metrics.write(rec);
    result.log.push_back(rec);
    result.final_loss = batch_loss;
    result.steps_run = step;
    if (plan.stop_loss >= 0.0 && batch_loss < plan.stop_loss) break;
  }
  if (!plan.checkpoint_path.empty()) {
    TransformerParams primary = model.primary();
    save_model(primary, plan.checkpoint_path,
               plan.config_path.empty() ? plan.checkpoint_path + ".json" : plan.config_path);
  }
  return result;
}

}  // namespace clsum
