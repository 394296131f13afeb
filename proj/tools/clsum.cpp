// Command-line front end: corpus building, statistics, training, decoding,
// pipeline baselines, evaluation. Every subcommand echoes its fully resolved
// configuration to stderr before doing work, accepts a JSON config file
// (flags > config file > defaults, unknown keys rejected), and exits 0 on
// success, 1 on a usage error, 2 on a runtime failure.

#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "clsum/baselines.hpp"
#include "clsum/corpus.hpp"
#include "clsum/decode.hpp"
#include "clsum/eval.hpp"
#include "clsum/http_translator.hpp"
#include "clsum/model.hpp"
#include "clsum/rouge.hpp"
#include "clsum/tokenize.hpp"
#include "clsum/train.hpp"

namespace {

using nlohmann::json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// JSON config file honored under the flags: a key fills its option only when
// that option was not passed on the command line. Keys that match no option
// of the subcommand are errors.
class ConfigFile {
 public:
  void load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot open config file " + path);
    values_ = json::parse(in, nullptr, false);
    if (values_.is_discarded() || !values_.is_object())
      throw UsageError("config file " + path + " must hold a JSON object");
  }

  template <typename T>
  void apply(const std::string& key, const CLI::Option* opt, T& var) {
    known_.insert(key);
    if (!values_.contains(key)) return;
    if (opt && opt->count() > 0) return;  // command line wins
    try {
      var = values_.at(key).get<T>();
    } catch (const json::exception&) {
      throw UsageError("config key \"" + key + "\" has the wrong type");
    }
  }

  void finish() const {
    for (auto it = values_.begin(); it != values_.end(); ++it)
      if (!known_.count(it.key())) throw UsageError("unknown config key \"" + it.key() + "\"");
  }

 private:
  json values_ = json::object();
  std::set<std::string> known_;
};

struct Direction {
  clsum::Lang src;
  clsum::Lang tgt;
};

Direction parse_direction(const std::string& s) {
  if (s == "en2zh") return {clsum::Lang::En, clsum::Lang::Zh};
  if (s == "zh2en") return {clsum::Lang::Zh, clsum::Lang::En};
  throw UsageError("unknown direction \"" + s + "\" (expected en2zh or zh2en)");
}

clsum::RougeUnit parse_unit(const std::string& s) {
  if (s == "en-word") return clsum::RougeUnit::EnWord;
  if (s == "zh-char") return clsum::RougeUnit::ZhChar;
  throw UsageError("unknown unit \"" + s + "\" (expected en-word or zh-char)");
}

void echo_config(const std::string& command, const json& resolved) {
  std::cerr << command << " config: " << resolved.dump() << "\n";
}

std::unique_ptr<clsum::Translator> translator_or_usage(const std::string& spec,
                                                       const std::string& cache) {
  try {
    return clsum::make_translator(spec, cache);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

// ---------------------------------------------------------------------------
// build-corpus

struct BuildArgs {
  std::string input, out, report_path, config_path, cache;
  std::string direction = "en2zh";
  std::string variant = "filter";
  std::string translator = "identity";
  double t1 = -1.0;  // <0: language default (0.45 en / 0.6 zh)
  double t2 = 0.2;
  std::string retention = "2/3";
  bool lax_retention = false;
  std::uint64_t seed = 0;
  std::int64_t pseudo_size = -1;
};

void run_build(const BuildArgs& a, std::size_t threads, const ConfigFile& done) {
  done.finish();
  Direction dir = parse_direction(a.direction);
  clsum::Variant variant;
  try {
    variant = clsum::parse_variant(a.variant);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  clsum::FilterConfig cfg = clsum::default_filter_config(dir.src);
  if (a.t1 >= 0.0) cfg.t1 = a.t1;
  cfg.t2 = a.t2;
  try {
    cfg.retention = clsum::Fraction::parse(a.retention);
  } catch (const std::exception& e) {
    throw UsageError(std::string("bad --retention: ") + e.what());
  }
  cfg.strict_retention = !a.lax_retention;

  json resolved{{"input", a.input},       {"out", a.out},
                {"direction", a.direction}, {"variant", a.variant},
                {"translator", a.translator}, {"t1", cfg.t1},
                {"t2", cfg.t2},             {"retention", cfg.retention.str()},
                {"strict", cfg.strict_retention}, {"seed", a.seed},
                {"threads", threads}};
  echo_config("build-corpus", resolved);

  auto translator = translator_or_usage(a.translator, a.cache);
  std::vector<clsum::MonoPair> mono = clsum::read_mono(a.input);
  std::optional<std::size_t> pseudo_target;
  if (a.pseudo_size >= 0) pseudo_target = static_cast<std::size_t>(a.pseudo_size);
  clsum::BuildResult result = clsum::build_corpus(mono, *translator, dir.src, dir.tgt, cfg,
                                                  variant, a.seed, pseudo_target, threads);
  clsum::write_corpus(result.pairs, a.out);
  std::cout << result.report.str();
  if (!a.report_path.empty()) {
    std::ofstream rep(a.report_path, std::ios::binary);
    if (!rep) throw std::runtime_error("cannot open report file " + a.report_path);
    rep << result.report.str();
  }
}

// ---------------------------------------------------------------------------
// stats

void run_stats(const std::string& corpus_path, const std::string& direction) {
  Direction dir = parse_direction(direction);
  std::vector<clsum::ClsPair> pairs = clsum::read_corpus(corpus_path);
  clsum::CorpusStats s = clsum::corpus_stats(pairs, dir.src, dir.tgt);
  std::cout.setf(std::ios::fixed);
  std::cout.precision(2);
  std::cout << "documents                 " << s.n_documents << '\n'
            << "avg doc tokens            " << s.avg_src_tokens << '\n'
            << "avg source-ref tokens     " << s.avg_ref_tokens_src << '\n'
            << "avg target-ref tokens     " << s.avg_ref_tokens_tgt << '\n'
            << "avg doc sentences         " << s.avg_sentences << '\n'
            << "avg tokens per sentence   " << s.avg_tokens_per_sentence << '\n';
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string corpus, valid, mt_corpus, out_model, metrics, config_path;
  std::string direction = "en2zh";
  std::string mode = "single";
  std::string src_granularity = "word";
  std::string tgt_granularity = "word";
  std::size_t src_vocab_size = 8000, tgt_vocab_size = 8000, aux_vocab_size = 8000;
  std::size_t bpe_merges = 500;
  std::size_t max_src_len = 200, max_tgt_len = 120;
  std::size_t layers_enc = 2, layers_dec = 2, d_model = 64, heads = 4, d_ff = 128;
  std::size_t max_positions = 512;
  double dropout = 0.1;
  std::size_t steps = 1000, warmup = 4000, token_budget = 2048, alternate_k = 1;
  std::size_t checkpoint_every = 0;
  double lr_scale = 1.0, label_smoothing = 0.0, stop_loss = -1.0;
  std::uint64_t seed = 0;
};

struct TextPipeline {
  clsum::TokenizeSettings settings;
  clsum::Vocabulary vocab;
  std::unique_ptr<clsum::BpeModel> bpe;
};

// Tokenization + vocabulary for one side, learned from the given texts.
TextPipeline make_pipeline(const std::vector<std::string>& texts, clsum::Lang lang,
                           const std::string& granularity_name, std::size_t vocab_size,
                           std::size_t bpe_merges, std::size_t max_len) {
  TextPipeline p;
  p.settings.lang = lang;
  try {
    p.settings.granularity = clsum::parse_granularity(granularity_name);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  p.settings.max_len = max_len;
  if (p.settings.granularity == clsum::Granularity::Subword) {
    std::vector<std::vector<std::string>> chunks;
    chunks.reserve(texts.size());
    for (const auto& t : texts)
      chunks.push_back(clsum::detail::whitespace_chunks(t, lang));
    p.bpe = std::make_unique<clsum::BpeModel>(clsum::train_bpe(chunks, bpe_merges));
    p.settings.bpe = p.bpe.get();
  }
  std::vector<std::string> all_tokens;
  clsum::TokenizerOptions opts;
  opts.bpe = p.settings.bpe;
  for (const auto& t : texts) {
    auto toks = clsum::tokenize(t, lang, p.settings.granularity, opts);
    all_tokens.insert(all_tokens.end(), toks.begin(), toks.end());
  }
  p.vocab = clsum::build_vocab(all_tokens, vocab_size);
  return p;
}

json tokenizer_manifest(const TextPipeline& p, const std::string& vocab_file,
                        const std::string& bpe_file) {
  json j;
  j["lang"] = clsum::lang_name(p.settings.lang);
  j["granularity"] = clsum::granularity_name(p.settings.granularity);
  j["max_len"] = p.settings.max_len;
  j["vocab"] = vocab_file;
  j["bpe"] = bpe_file;
  return j;
}

void run_train(const TrainArgs& a, const ConfigFile& done) {
  done.finish();
  if (a.out_model.empty()) throw UsageError("--out-model is required");
  Direction dir = parse_direction(a.direction);
  clsum::TrainMode mode;
  try {
    mode = clsum::parse_train_mode(a.mode);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (mode == clsum::TrainMode::AlternatingMT && a.mt_corpus.empty())
    throw UsageError("--mt-corpus is required for alternating mode");

  json resolved{{"corpus", a.corpus},     {"mode", a.mode},
                {"direction", a.direction}, {"steps", a.steps},
                {"token_budget", a.token_budget}, {"warmup", a.warmup},
                {"seed", a.seed},         {"d_model", a.d_model},
                {"layers_enc", a.layers_enc}, {"layers_dec", a.layers_dec},
                {"heads", a.heads},       {"d_ff", a.d_ff},
                {"dropout", a.dropout},   {"lr_scale", a.lr_scale},
                {"label_smoothing", a.label_smoothing}, {"alternate_k", a.alternate_k},
                {"out_model", a.out_model}};
  echo_config("train", resolved);

  std::vector<clsum::ClsPair> pairs = clsum::read_corpus(a.corpus);
  if (pairs.empty()) throw std::runtime_error("training corpus is empty");

  std::vector<std::string> src_texts, tgt_texts;
  for (const auto& p : pairs) {
    src_texts.push_back(p.doc);
    tgt_texts.push_back(p.summary_tgt);
  }
  TextPipeline src_pipe = make_pipeline(src_texts, dir.src, a.src_granularity, a.src_vocab_size,
                                        a.bpe_merges, a.max_src_len);
  TextPipeline tgt_pipe = make_pipeline(tgt_texts, dir.tgt, a.tgt_granularity, a.tgt_vocab_size,
                                        a.bpe_merges, a.max_tgt_len);

  clsum::ModelConfig cfg;
  cfg.n_layers_enc = a.layers_enc;
  cfg.n_layers_dec = a.layers_dec;
  cfg.d_model = a.d_model;
  cfg.n_heads = a.heads;
  cfg.d_ff = a.d_ff;
  cfg.dropout_p = a.dropout;
  cfg.src_vocab = src_pipe.vocab.size();
  cfg.tgt_vocab = tgt_pipe.vocab.size();
  cfg.max_positions = a.max_positions;
  cfg.validate();

  clsum::TrainPlan plan;
  plan.mode = mode;
  plan.alternate_k = a.alternate_k;
  plan.token_budget = a.token_budget;
  plan.max_steps = a.steps == 0 ? 1 : a.steps;
  plan.seed = a.seed;
  plan.warmup = a.warmup;
  plan.lr_scale = a.lr_scale;
  plan.label_smoothing = a.label_smoothing;
  plan.stop_loss = a.stop_loss;
  plan.checkpoint_every = a.checkpoint_every;
  plan.checkpoint_path = a.out_model;
  plan.config_path = a.out_model + ".json";
  plan.metrics_path = a.metrics.empty() ? a.out_model + ".metrics.jsonl" : a.metrics;

  // Sidecar file names live next to the checkpoint.
  std::string src_vocab_file = a.out_model + ".src.vocab";
  std::string tgt_vocab_file = a.out_model + ".tgt.vocab";
  clsum::save_vocab(src_pipe.vocab, src_vocab_file);
  clsum::save_vocab(tgt_pipe.vocab, tgt_vocab_file);
  std::string src_bpe_file, tgt_bpe_file;
  if (src_pipe.bpe) {
    src_bpe_file = a.out_model + ".src.bpe";
    clsum::save_bpe(*src_pipe.bpe, src_bpe_file);
  }
  if (tgt_pipe.bpe) {
    tgt_bpe_file = a.out_model + ".tgt.bpe";
    clsum::save_bpe(*tgt_pipe.bpe, tgt_bpe_file);
  }
  auto base_name = [](const std::string& path) {
    return std::filesystem::path(path).filename().string();
  };

  auto write_sidecar = [&](const clsum::ModelConfig& model_cfg) {
    json j = clsum::model_config_to_json(model_cfg);
    j["src_tokenizer"] = tokenizer_manifest(src_pipe, base_name(src_vocab_file),
                                            src_bpe_file.empty() ? "" : base_name(src_bpe_file));
    j["tgt_tokenizer"] = tokenizer_manifest(tgt_pipe, base_name(tgt_vocab_file),
                                            tgt_bpe_file.empty() ? "" : base_name(tgt_bpe_file));
    std::ofstream out(plan.config_path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + plan.config_path);
    out << j.dump(2) << '\n';
  };

  if (mode == clsum::TrainMode::Single) {
    clsum::TransformerParams model = clsum::init_params(cfg, a.seed);
    std::vector<clsum::Example> data =
        clsum::prepare_examples(pairs, src_pipe.vocab, tgt_pipe.vocab, src_pipe.settings,
                                tgt_pipe.settings);
    std::vector<clsum::Example> valid_data;
    if (!a.valid.empty()) {
      std::vector<clsum::ClsPair> valid_pairs = clsum::read_corpus(a.valid);
      valid_data = clsum::prepare_examples(valid_pairs, src_pipe.vocab, tgt_pipe.vocab,
                                           src_pipe.settings, tgt_pipe.settings);
    }
    if (a.steps == 0) {
      clsum::save_model(model, plan.checkpoint_path, plan.config_path);
    } else {
      clsum::TrainResult r = clsum::train_single(model, data, plan,
                                                 valid_data.empty() ? nullptr : &valid_data);
      std::cout << "final loss " << r.final_loss << " after " << r.steps_run << " steps\n";
    }
    write_sidecar(model.config);
    return;
  }

  // Both multi-task regimes need the auxiliary side's pipeline.
  std::string aux_vocab_file = a.out_model + ".aux.vocab";
  std::string aux_bpe_file;
  if (mode == clsum::TrainMode::JointMS) {
    std::vector<std::string> aux_texts;
    for (const auto& p : pairs) aux_texts.push_back(p.summary_src_retained);
    TextPipeline aux_pipe = make_pipeline(aux_texts, dir.src, a.src_granularity,
                                          a.aux_vocab_size, a.bpe_merges, a.max_tgt_len);
    clsum::save_vocab(aux_pipe.vocab, aux_vocab_file);
    if (aux_pipe.bpe) {
      aux_bpe_file = a.out_model + ".aux.bpe";
      clsum::save_bpe(*aux_pipe.bpe, aux_bpe_file);
    }
    for (const auto& p : pairs)
      if (p.summary_src_retained.empty())
        throw std::runtime_error("joint mode: pair " + p.id + " lacks a bilingual reference");
    clsum::MultiTaskModel model = clsum::init_multitask(cfg, aux_pipe.vocab.size(), a.seed);
    std::vector<clsum::JointExample> data = clsum::prepare_joint_examples(
        pairs, src_pipe.vocab, tgt_pipe.vocab, aux_pipe.vocab, src_pipe.settings,
        tgt_pipe.settings, aux_pipe.settings);
    if (a.steps == 0) {
      clsum::TransformerParams primary = model.primary();
      clsum::save_model(primary, plan.checkpoint_path, plan.config_path);
    } else {
      clsum::TrainResult r = clsum::train_joint(model, data, plan);
      std::cout << "final loss " << r.final_loss << " after " << r.steps_run << " steps\n";
    }
    write_sidecar(cfg);
    return;
  }

  // Alternating: the auxiliary task is translation, target side in the
  // target language.
  std::vector<clsum::ClsPair> mt_pairs = clsum::read_corpus(a.mt_corpus);
  if (mt_pairs.empty()) throw std::runtime_error("mt corpus is empty");
  std::vector<std::string> aux_texts;
  for (const auto& p : mt_pairs) aux_texts.push_back(p.summary_tgt);
  TextPipeline aux_pipe = make_pipeline(aux_texts, dir.tgt, a.tgt_granularity, a.aux_vocab_size,
                                        a.bpe_merges, a.max_tgt_len);
  clsum::save_vocab(aux_pipe.vocab, aux_vocab_file);
  if (aux_pipe.bpe) {
    aux_bpe_file = a.out_model + ".aux.bpe";
    clsum::save_bpe(*aux_pipe.bpe, aux_bpe_file);
  }
  clsum::MultiTaskModel model = clsum::init_multitask(cfg, aux_pipe.vocab.size(), a.seed);
  std::vector<clsum::Example> cls_data = clsum::prepare_examples(
      pairs, src_pipe.vocab, tgt_pipe.vocab, src_pipe.settings, tgt_pipe.settings);
  std::vector<clsum::Example> aux_data = clsum::prepare_examples(
      mt_pairs, src_pipe.vocab, aux_pipe.vocab, src_pipe.settings, aux_pipe.settings);
  if (a.steps == 0) {
    clsum::TransformerParams primary = model.primary();
    clsum::save_model(primary, plan.checkpoint_path, plan.config_path);
  } else {
    clsum::TrainResult r = clsum::train_alternating(model, cls_data, aux_data, plan);
    std::cout << "final loss " << r.final_loss << " after " << r.steps_run << " steps\n";
  }
  write_sidecar(cfg);
}

// ---------------------------------------------------------------------------
// decode

struct Bundle {
  clsum::TransformerParams model;
  clsum::TokenizeSettings src_settings, tgt_settings;
  clsum::Vocabulary src_vocab, tgt_vocab;
  std::unique_ptr<clsum::BpeModel> src_bpe, tgt_bpe;
};

Bundle load_bundle(const std::string& ckpt_path) {
  Bundle b;
  std::string config_path = ckpt_path + ".json";
  std::ifstream in(config_path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model sidecar " + config_path);
  json j = json::parse(in);
  std::filesystem::path dir = std::filesystem::path(ckpt_path).parent_path();
  auto load_side = [&](const char* key, clsum::TokenizeSettings& settings,
                       clsum::Vocabulary& vocab, std::unique_ptr<clsum::BpeModel>& bpe) {
    if (!j.contains(key)) throw std::runtime_error(config_path + ": missing " + key);
    const json& t = j.at(key);
    settings.lang = clsum::parse_lang(t.at("lang").get<std::string>());
    settings.granularity = clsum::parse_granularity(t.at("granularity").get<std::string>());
    settings.max_len = t.at("max_len").get<std::size_t>();
    vocab = clsum::load_vocab((dir / t.at("vocab").get<std::string>()).string());
    std::string bpe_file = t.at("bpe").get<std::string>();
    if (!bpe_file.empty()) {
      bpe = std::make_unique<clsum::BpeModel>(clsum::load_bpe((dir / bpe_file).string()));
      settings.bpe = bpe.get();
    }
  };
  load_side("src_tokenizer", b.src_settings, b.src_vocab, b.src_bpe);
  load_side("tgt_tokenizer", b.tgt_settings, b.tgt_vocab, b.tgt_bpe);
  b.model = clsum::load_model(ckpt_path, config_path);
  return b;
}

struct DecodeArgs {
  std::string model, corpus, out, config_path;
  std::size_t beam = 4;
  std::size_t max_len = 60;
  bool no_length_norm = false;
};

void run_decode(const DecodeArgs& a, std::size_t threads, const ConfigFile& done) {
  done.finish();
  if (a.beam < 1) throw UsageError("--beam must be >= 1");
  json resolved{{"model", a.model}, {"corpus", a.corpus},         {"out", a.out},
                {"beam", a.beam},   {"max_len", a.max_len},       {"length_norm", !a.no_length_norm},
                {"threads", threads}};
  echo_config("decode", resolved);

  Bundle b = load_bundle(a.model);
  std::vector<clsum::ClsPair> pairs = clsum::read_corpus(a.corpus);
  std::vector<clsum::OutputPair> outputs(pairs.size());
  clsum::parallel_for(pairs.size(), threads, [&](std::size_t i) {
    const clsum::ClsPair& p = pairs[i];
    std::vector<int> src =
        clsum::encode_text(p.doc, b.src_vocab, b.src_settings, false);
    std::vector<int> ids = clsum::beam_search(b.model, src, a.beam, a.max_len, !a.no_length_norm);
    outputs[i] = {p.id, clsum::ids_to_text(ids, b.tgt_vocab, b.tgt_settings.lang,
                                           b.tgt_settings.granularity)};
  });
  clsum::write_outputs(outputs, a.out);
  std::cout << "decoded " << outputs.size() << " documents\n";
}

// ---------------------------------------------------------------------------
// baseline

struct BaselineArgs {
  std::string method = "etran";
  std::string corpus, out, config_path, cache;
  std::string direction = "en2zh";
  std::string translator = "identity";
  std::string summarizer_model;  // ltran: decode with this model instead of lexrank
  double threshold = 0.1, damping = 0.85, tolerance = 1e-8;
  std::size_t max_iterations = 1000;
  std::int64_t budget_sentences = -1, budget_tokens = -1;
  std::size_t beam = 4, max_len = 60;
};

void run_baseline(const BaselineArgs& a, std::size_t threads, const ConfigFile& done) {
  done.finish();
  if (a.method != "etran" && a.method != "ltran")
    throw UsageError("unknown --method \"" + a.method + "\" (expected etran or ltran)");
  if (a.budget_sentences >= 0 && a.budget_tokens >= 0)
    throw UsageError("--budget-sentences and --budget-tokens are mutually exclusive");
  Direction dir = parse_direction(a.direction);

  clsum::LexRankConfig lex;
  lex.threshold = a.threshold;
  lex.damping = a.damping;
  lex.tolerance = a.tolerance;
  lex.max_iterations = a.max_iterations;

  json resolved{{"method", a.method},       {"corpus", a.corpus},
                {"out", a.out},             {"direction", a.direction},
                {"translator", a.translator}, {"threshold", lex.threshold},
                {"damping", lex.damping},   {"threads", threads}};
  echo_config("baseline", resolved);

  auto translator = translator_or_usage(a.translator, a.cache);
  std::vector<clsum::ClsPair> pairs = clsum::read_corpus(a.corpus);

  auto budget_for = [&](clsum::Lang lang) {
    if (a.budget_sentences >= 0)
      return clsum::ExtractBudget::sentences(static_cast<std::size_t>(a.budget_sentences));
    if (a.budget_tokens >= 0)
      return clsum::ExtractBudget::tokens(static_cast<std::size_t>(a.budget_tokens));
    return clsum::default_extract_budget(lang);
  };

  std::function<std::string(const std::string&)> summarize;
  std::unique_ptr<Bundle> bundle;
  if (a.method == "ltran") {
    if (!a.summarizer_model.empty()) {
      bundle = std::make_unique<Bundle>(load_bundle(a.summarizer_model));
      summarize = [&](const std::string& doc) {
        std::vector<int> src =
            clsum::encode_text(doc, bundle->src_vocab, bundle->src_settings, false);
        std::vector<int> ids = clsum::beam_search(bundle->model, src, a.beam, a.max_len);
        return clsum::ids_to_text(ids, bundle->tgt_vocab, bundle->tgt_settings.lang,
                                  bundle->tgt_settings.granularity);
      };
    } else {
      summarize = [&, budget = budget_for(dir.src)](const std::string& doc) {
        return clsum::lexrank_summary(doc, dir.src, lex, budget);
      };
    }
  }

  std::vector<clsum::OutputPair> outputs(pairs.size());
  clsum::ExtractBudget etran_budget = budget_for(dir.tgt);
  clsum::parallel_for(pairs.size(), threads, [&](std::size_t i) {
    const clsum::ClsPair& p = pairs[i];
    std::string summary =
        a.method == "etran"
            ? clsum::pipeline_etran(p.doc, *translator, dir.src, dir.tgt, lex, &etran_budget)
            : clsum::pipeline_ltran(p.doc, summarize, *translator, dir.src, dir.tgt);
    outputs[i] = {p.id, summary};
  });
  clsum::write_outputs(outputs, a.out);
  std::cout << "summarized " << outputs.size() << " documents\n";
}

// ---------------------------------------------------------------------------
// evaluate

struct EvalArgs {
  std::string outputs, refs, json_out, config_path;
  std::string unit = "en-word";
  std::size_t resamples = 1000;
  double confidence = 0.95;
  std::uint64_t seed = 0;
};

void run_evaluate(const EvalArgs& a, const ConfigFile& done) {
  done.finish();
  clsum::EvalConfig cfg;
  cfg.unit = parse_unit(a.unit);
  cfg.resamples = a.resamples;
  cfg.confidence = a.confidence;
  cfg.seed = a.seed;

  json resolved{{"outputs", a.outputs},     {"refs", a.refs},
                {"unit", a.unit},           {"resamples", a.resamples},
                {"confidence", a.confidence}, {"seed", a.seed}};
  echo_config("evaluate", resolved);

  std::vector<clsum::OutputPair> outputs = clsum::read_outputs(a.outputs);
  std::vector<clsum::ClsPair> refs = clsum::read_corpus(a.refs);
  clsum::EvalReport report = clsum::evaluate(outputs, refs, cfg);
  std::cout << report.table();
  if (!a.json_out.empty()) {
    std::ofstream out(a.json_out, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + a.json_out);
    out << report.to_json().dump() << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cross-lingual summarization toolkit"};
  app.require_subcommand(1);
  std::size_t threads = 1;
  app.add_option("--threads", threads, "worker threads for data-parallel stages")
      ->check(CLI::Range(std::size_t{1}, std::size_t{256}));

  // build-corpus
  auto build_args = std::make_shared<BuildArgs>();
  auto build_cfg = std::make_shared<ConfigFile>();
  CLI::App* build = app.add_subcommand("build-corpus", "construct a corpus by round-trip translation");
  {
    auto& a = *build_args;
    build->add_option("--input", a.input, "monolingual pairs, one JSON object per line")->required();
    build->add_option("--out", a.out, "output corpus file")->required();
    auto* od = build->add_option("--direction", a.direction, "en2zh or zh2en");
    auto* ov = build->add_option("--variant", a.variant, "filter, nonfilter, or pseudofilter");
    auto* ot = build->add_option("--translator", a.translator,
                                 "identity | noise:<seed>:<p> | http:<url>");
    auto* o1 = build->add_option("--t1", a.t1, "unigram F1 threshold (default 0.45 en / 0.6 zh)");
    auto* o2 = build->add_option("--t2", a.t2, "bigram F1 threshold");
    auto* oret = build->add_option("--retention", a.retention, "sentence retention fraction");
    auto* olax = build->add_flag("--lax-retention", a.lax_retention,
                                 "keep samples at exactly the retention fraction");
    auto* os = build->add_option("--seed", a.seed, "seed for pseudofilter sampling");
    auto* ops = build->add_option("--pseudo-size", a.pseudo_size,
                                  "pseudofilter target size (default: size of a filter pass)");
    build->add_option("--report", a.report_path, "also write the build report here");
    build->add_option("--cache", a.cache, "http translator response cache file");
    build->add_option("--config", a.config_path, "JSON config file");
    build->callback([&app, build_args, build_cfg, od, ov, ot, o1, o2, oret, olax, os, ops,
                     &threads]() {
      auto& a = *build_args;
      auto& c = *build_cfg;
      if (!a.config_path.empty()) c.load(a.config_path);
      c.apply("direction", od, a.direction);
      c.apply("variant", ov, a.variant);
      c.apply("translator", ot, a.translator);
      c.apply("t1", o1, a.t1);
      c.apply("t2", o2, a.t2);
      c.apply("retention", oret, a.retention);
      c.apply("lax_retention", olax, a.lax_retention);
      c.apply("seed", os, a.seed);
      c.apply("pseudo_size", ops, a.pseudo_size);
      run_build(a, threads, c);
    });
  }

  // stats
  auto stats_corpus = std::make_shared<std::string>();
  auto stats_direction = std::make_shared<std::string>("en2zh");
  CLI::App* stats = app.add_subcommand("stats", "corpus statistics");
  stats->add_option("--corpus", *stats_corpus, "corpus file")->required();
  stats->add_option("--direction", *stats_direction, "en2zh or zh2en");
  stats->callback([stats_corpus, stats_direction]() { run_stats(*stats_corpus, *stats_direction); });

  // train
  auto train_args = std::make_shared<TrainArgs>();
  auto train_cfg = std::make_shared<ConfigFile>();
  CLI::App* train = app.add_subcommand("train", "train a summarizer");
  {
    auto& a = *train_args;
    train->add_option("--corpus", a.corpus, "training corpus")->required();
    train->add_option("--out-model", a.out_model, "checkpoint path")->required();
    std::map<std::string, CLI::Option*> opts;
    opts["valid"] = train->add_option("--valid", a.valid, "validation corpus (best checkpoint)");
    opts["mt_corpus"] = train->add_option("--mt-corpus", a.mt_corpus,
                                          "parallel corpus for the alternating regime");
    opts["direction"] = train->add_option("--direction", a.direction, "en2zh or zh2en");
    opts["mode"] = train->add_option("--mode", a.mode, "single, joint, or alternating");
    opts["src_granularity"] =
        train->add_option("--src-granularity", a.src_granularity, "word, character, or subword");
    opts["tgt_granularity"] =
        train->add_option("--tgt-granularity", a.tgt_granularity, "word, character, or subword");
    opts["src_vocab_size"] = train->add_option("--src-vocab-size", a.src_vocab_size);
    opts["tgt_vocab_size"] = train->add_option("--tgt-vocab-size", a.tgt_vocab_size);
    opts["aux_vocab_size"] = train->add_option("--aux-vocab-size", a.aux_vocab_size);
    opts["bpe_merges"] = train->add_option("--bpe-merges", a.bpe_merges);
    opts["max_src_len"] = train->add_option("--max-src-len", a.max_src_len);
    opts["max_tgt_len"] = train->add_option("--max-tgt-len", a.max_tgt_len);
    opts["layers_enc"] = train->add_option("--layers-enc", a.layers_enc);
    opts["layers_dec"] = train->add_option("--layers-dec", a.layers_dec);
    opts["d_model"] = train->add_option("--d-model", a.d_model);
    opts["heads"] = train->add_option("--heads", a.heads);
    opts["d_ff"] = train->add_option("--d-ff", a.d_ff);
    opts["max_positions"] = train->add_option("--max-positions", a.max_positions);
    opts["dropout"] = train->add_option("--dropout", a.dropout);
    opts["steps"] = train->add_option("--steps", a.steps, "0 saves the initialized model");
    opts["warmup"] = train->add_option("--warmup", a.warmup);
    opts["token_budget"] = train->add_option("--token-budget", a.token_budget);
    opts["alternate_k"] = train->add_option("--alternate-k", a.alternate_k);
    opts["checkpoint_every"] = train->add_option("--checkpoint-every", a.checkpoint_every);
    opts["lr_scale"] = train->add_option("--lr-scale", a.lr_scale);
    opts["label_smoothing"] = train->add_option("--label-smoothing", a.label_smoothing);
    opts["stop_loss"] = train->add_option("--stop-loss", a.stop_loss);
    opts["seed"] = train->add_option("--seed", a.seed);
    opts["metrics"] = train->add_option("--metrics", a.metrics, "metrics log path");
    train->add_option("--config", a.config_path, "JSON config file");
    train->callback([train_args, train_cfg, opts]() {
      auto& a = *train_args;
      auto& c = *train_cfg;
      if (!a.config_path.empty()) c.load(a.config_path);
      c.apply("valid", opts.at("valid"), a.valid);
      c.apply("mt_corpus", opts.at("mt_corpus"), a.mt_corpus);
      c.apply("direction", opts.at("direction"), a.direction);
      c.apply("mode", opts.at("mode"), a.mode);
      c.apply("src_granularity", opts.at("src_granularity"), a.src_granularity);
      c.apply("tgt_granularity", opts.at("tgt_granularity"), a.tgt_granularity);
      c.apply("src_vocab_size", opts.at("src_vocab_size"), a.src_vocab_size);
      c.apply("tgt_vocab_size", opts.at("tgt_vocab_size"), a.tgt_vocab_size);
      c.apply("aux_vocab_size", opts.at("aux_vocab_size"), a.aux_vocab_size);
      c.apply("bpe_merges", opts.at("bpe_merges"), a.bpe_merges);
      c.apply("max_src_len", opts.at("max_src_len"), a.max_src_len);
      c.apply("max_tgt_len", opts.at("max_tgt_len"), a.max_tgt_len);
      c.apply("layers_enc", opts.at("layers_enc"), a.layers_enc);
      c.apply("layers_dec", opts.at("layers_dec"), a.layers_dec);
      c.apply("d_model", opts.at("d_model"), a.d_model);
      c.apply("heads", opts.at("heads"), a.heads);
      c.apply("d_ff", opts.at("d_ff"), a.d_ff);
      c.apply("max_positions", opts.at("max_positions"), a.max_positions);
      c.apply("dropout", opts.at("dropout"), a.dropout);
      c.apply("steps", opts.at("steps"), a.steps);
      c.apply("warmup", opts.at("warmup"), a.warmup);
      c.apply("token_budget", opts.at("token_budget"), a.token_budget);
      c.apply("alternate_k", opts.at("alternate_k"), a.alternate_k);
      c.apply("checkpoint_every", opts.at("checkpoint_every"), a.checkpoint_every);
      c.apply("lr_scale", opts.at("lr_scale"), a.lr_scale);
      c.apply("label_smoothing", opts.at("label_smoothing"), a.label_smoothing);
      c.apply("stop_loss", opts.at("stop_loss"), a.stop_loss);
      c.apply("seed", opts.at("seed"), a.seed);
      c.apply("metrics", opts.at("metrics"), a.metrics);
      run_train(a, c);
    });
  }

  // decode
  auto decode_args = std::make_shared<DecodeArgs>();
  auto decode_cfg = std::make_shared<ConfigFile>();
  CLI::App* decode = app.add_subcommand("decode", "generate summaries with a trained model");
  {
    auto& a = *decode_args;
    decode->add_option("--model", a.model, "checkpoint path")->required();
    decode->add_option("--corpus", a.corpus, "input corpus")->required();
    decode->add_option("--out", a.out, "output file")->required();
    auto* ob = decode->add_option("--beam", a.beam, "beam size");
    auto* om = decode->add_option("--max-len", a.max_len, "maximum generated tokens");
    auto* on = decode->add_flag("--no-length-norm", a.no_length_norm,
                                "rank hypotheses by raw log-probability");
    decode->add_option("--config", a.config_path, "JSON config file");
    decode->callback([decode_args, decode_cfg, ob, om, on, &threads]() {
      auto& a = *decode_args;
      auto& c = *decode_cfg;
      if (!a.config_path.empty()) c.load(a.config_path);
      c.apply("beam", ob, a.beam);
      c.apply("max_len", om, a.max_len);
      c.apply("no_length_norm", on, a.no_length_norm);
      run_decode(a, threads, c);
    });
  }

  // baseline
  auto baseline_args = std::make_shared<BaselineArgs>();
  auto baseline_cfg = std::make_shared<ConfigFile>();
  CLI::App* baseline = app.add_subcommand("baseline", "translate+summarize pipeline baselines");
  {
    auto& a = *baseline_args;
    baseline->add_option("--method", a.method, "etran or ltran")->required();
    baseline->add_option("--corpus", a.corpus, "input corpus")->required();
    baseline->add_option("--out", a.out, "output file")->required();
    auto* od = baseline->add_option("--direction", a.direction, "en2zh or zh2en");
    auto* ot = baseline->add_option("--translator", a.translator,
                                    "identity | noise:<seed>:<p> | http:<url>");
    auto* oth = baseline->add_option("--threshold", a.threshold, "similarity edge threshold");
    auto* oda = baseline->add_option("--damping", a.damping, "random-walk damping");
    auto* otl = baseline->add_option("--tolerance", a.tolerance, "power-iteration tolerance");
    auto* omi = baseline->add_option("--max-iterations", a.max_iterations);
    auto* obs = baseline->add_option("--budget-sentences", a.budget_sentences);
    auto* obt = baseline->add_option("--budget-tokens", a.budget_tokens);
    auto* osm = baseline->add_option("--summarizer-model", a.summarizer_model,
                                     "ltran: decode with this model instead of lexrank");
    baseline->add_option("--cache", a.cache, "http translator response cache file");
    baseline->add_option("--config", a.config_path, "JSON config file");
    baseline->callback([baseline_args, baseline_cfg, od, ot, oth, oda, otl, omi, obs, obt, osm,
                        &threads]() {
      auto& a = *baseline_args;
      auto& c = *baseline_cfg;
      if (!a.config_path.empty()) c.load(a.config_path);
      c.apply("direction", od, a.direction);
      c.apply("translator", ot, a.translator);
      c.apply("threshold", oth, a.threshold);
      c.apply("damping", oda, a.damping);
      c.apply("tolerance", otl, a.tolerance);
      c.apply("max_iterations", omi, a.max_iterations);
      c.apply("budget_sentences", obs, a.budget_sentences);
      c.apply("budget_tokens", obt, a.budget_tokens);
      c.apply("summarizer_model", osm, a.summarizer_model);
      run_baseline(a, threads, c);
    });
  }

  // evaluate
  auto eval_args = std::make_shared<EvalArgs>();
  auto eval_cfg = std::make_shared<ConfigFile>();
  CLI::App* evaluate = app.add_subcommand("evaluate", "score outputs against references");
  {
    auto& a = *eval_args;
    evaluate->add_option("--outputs", a.outputs, "decoded outputs")->required();
    evaluate->add_option("--refs", a.refs, "reference corpus")->required();
    auto* ou = evaluate->add_option("--unit", a.unit, "en-word or zh-char");
    auto* ors = evaluate->add_option("--resamples", a.resamples, "bootstrap resamples");
    auto* oc = evaluate->add_option("--confidence", a.confidence, "confidence level");
    auto* os = evaluate->add_option("--seed", a.seed, "resampling seed");
    evaluate->add_option("--json", a.json_out, "also write a machine-readable report here");
    evaluate->add_option("--config", a.config_path, "JSON config file");
    evaluate->callback([eval_args, eval_cfg, ou, ors, oc, os]() {
      auto& a = *eval_args;
      auto& c = *eval_cfg;
      if (!a.config_path.empty()) c.load(a.config_path);
      c.apply("unit", ou, a.unit);
      c.apply("resamples", ors, a.resamples);
      c.apply("confidence", oc, a.confidence);
      c.apply("seed", os, a.seed);
      run_evaluate(a, c);
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
