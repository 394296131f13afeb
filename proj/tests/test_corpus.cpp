#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <set>
#include <thread>
#include <unordered_map>

#include <httplib.h>

#include "clsum/corpus.hpp"
#include "clsum/http_translator.hpp"

using namespace clsum;
using Catch::Matchers::WithinAbs;

namespace {

std::string tmp_file(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

// Table-driven stand-in for a real MT system.
class MapTranslator final : public Translator {
 public:
  std::unordered_map<std::string, std::string> table;
  std::string translate(const std::string& text, Lang, Lang) override {
    auto it = table.find(text);
    return it == table.end() ? text : it->second;
  }
};

}  // namespace

TEST_CASE("identity round trip keeps every sentence", "[corpus]") {
  IdentityTranslator t;
  FilterConfig cfg;
  RttResult r = rtt_sentence("the quick fox jumped.", t, Lang::En, Lang::Zh, cfg);
  CHECK(r.keep);
  CHECK_THAT(r.scores.r1.f1, WithinAbs(1.0, 1e-12));
  CHECK_THAT(r.scores.r2.f1, WithinAbs(1.0, 1e-12));
  CHECK(r.translated == "the quick fox jumped.");
  CHECK(r.back == "the quick fox jumped.");
}

TEST_CASE("round trip keeps the bigram floor inclusive", "[corpus]") {
  MapTranslator t;
  FilterConfig cfg;  // t1 0.45, t2 0.2

  SECTION("bigram overlap exactly at the floor passes") {
    t.table["a b c d e f"] = "F";
    t.table["F"] = "a b x c y e";  // unigram 2/3, exactly one shared bigram of five
    RttResult r = rtt_sentence("a b c d e f", t, Lang::En, Lang::Zh, cfg);
    CHECK_THAT(r.scores.r1.f1, WithinAbs(2.0 / 3.0, 1e-12));
    CHECK_THAT(r.scores.r2.f1, WithinAbs(0.2, 1e-12));
    CHECK(r.keep);
  }

  SECTION("perfect unigrams cannot rescue zero bigram overlap") {
    t.table["a b c d e f"] = "G";
    t.table["G"] = "a c b d f e";  // same bag of words, every bigram different
    RttResult r = rtt_sentence("a b c d e f", t, Lang::En, Lang::Zh, cfg);
    CHECK_THAT(r.scores.r1.f1, WithinAbs(1.0, 1e-12));
    CHECK(r.scores.r2.f1 == 0.0);
    CHECK_FALSE(r.keep);
  }

  SECTION("low unigram overlap fails the first floor") {
    t.table["a b c d e f"] = "H";
    t.table["H"] = "z y x w v u";
    RttResult r = rtt_sentence("a b c d e f", t, Lang::En, Lang::Zh, cfg);
    CHECK_FALSE(r.keep);
  }
}

TEST_CASE("retention threshold is strictly more than two thirds", "[corpus]") {
  FilterConfig cfg;
  CHECK(retention_passes(3, 4, cfg));        // 3/4 > 2/3
  CHECK_FALSE(retention_passes(2, 3, cfg));  // exactly 2/3 fails
  CHECK(retention_passes(3, 3, cfg));
  CHECK_FALSE(retention_passes(0, 0, cfg));
  cfg.strict_retention = false;
  CHECK(retention_passes(2, 3, cfg));  // lax mode admits the boundary
}

TEST_CASE("samples drop rejected sentences from both summary versions", "[corpus]") {
  MapTranslator t;
  t.table["K one."] = "T1";
  t.table["T1"] = "K one.";
  t.table["K two."] = "T2";
  t.table["T2"] = "K two.";
  t.table["K three."] = "T3";
  t.table["T3"] = "K three.";
  t.table["Bad four."] = "T4";
  t.table["T4"] = "zzz yyy xxx www";
  FilterConfig cfg;

  MonoPair good{"g", "some document text.", "K one. K two. K three. Bad four."};
  auto pair = build_cls_pair(good, t, Lang::En, Lang::Zh, cfg);
  REQUIRE(pair.has_value());
  CHECK(pair->keep_flags == std::vector<bool>{true, true, true, false});
  CHECK(pair->summary_src_retained == "K one. K two. K three.");
  CHECK(pair->summary_tgt == "T1T2T3");  // target language joins without spaces
  CHECK(pair->doc == good.doc);

  MonoPair weak{"w", "doc.", "K one. Bad four. Bad four."};
  CHECK_FALSE(build_cls_pair(weak, t, Lang::En, Lang::Zh, cfg).has_value());
}

// Wrecks any sentence tagged with an odd index so a fixed subset of the
// fixture fails the round trip; everything else passes through untouched.
struct SelectiveGarbler final : Translator {
  std::string translate(const std::string& text, Lang, Lang) override {
    for (int i = 1; i < 12; i += 2)
      if (text.find("item" + std::to_string(i) + "x") != std::string::npos)
        return "wrecked beyond recognition";
    return text;
  }
};

TEST_CASE("corpus variants obey containment and sizing laws", "[corpus]") {
  std::vector<MonoPair> mono;
  for (int i = 0; i < 12; ++i) {
    std::string id = "d" + std::to_string(i);
    std::string tag = "item" + std::to_string(i) + "x";
    mono.push_back({id, "document body " + std::to_string(i) + ".",
                    "alpha beta gamma delta " + tag + " one. epsilon zeta eta theta " + tag +
                        " two. iota kappa lambda mu " + tag + " three."});
  }
  SelectiveGarbler noise;
  FilterConfig cfg;

  BuildResult filter = build_corpus(mono, noise, Lang::En, Lang::Zh, cfg, Variant::Filter);
  BuildResult nonfilter = build_corpus(mono, noise, Lang::En, Lang::Zh, cfg, Variant::NonFilter);
  BuildResult pseudo =
      build_corpus(mono, noise, Lang::En, Lang::Zh, cfg, Variant::PseudoFilter, 11);

  CHECK(nonfilter.pairs.size() == mono.size());
  for (const auto& p : nonfilter.pairs)
    for (bool f : p.keep_flags) CHECK(f);

  std::set<std::string> nonfilter_ids, filter_ids, pseudo_ids;
  for (const auto& p : nonfilter.pairs) nonfilter_ids.insert(p.id);
  for (const auto& p : filter.pairs) filter_ids.insert(p.id);
  for (const auto& p : pseudo.pairs) pseudo_ids.insert(p.id);

  CHECK(filter.pairs.size() == 6);  // even-tagged pairs survive, odd ones go
  for (const auto& id : filter_ids) CHECK(nonfilter_ids.count(id) == 1);
  CHECK(pseudo.pairs.size() == filter.pairs.size());
  for (const auto& id : pseudo_ids) CHECK(nonfilter_ids.count(id) == 1);

  BuildResult pseudo_again =
      build_corpus(mono, noise, Lang::En, Lang::Zh, cfg, Variant::PseudoFilter, 11);
  REQUIRE(pseudo_again.pairs.size() == pseudo.pairs.size());
  for (std::size_t i = 0; i < pseudo.pairs.size(); ++i)
    CHECK(pseudo_again.pairs[i].id == pseudo.pairs[i].id);

  BuildResult sized = build_corpus(mono, noise, Lang::En, Lang::Zh, cfg, Variant::PseudoFilter, 11,
                                   std::size_t{5});
  CHECK(sized.pairs.size() == 5);

  // Thread count must not change the result.
  BuildResult threaded =
      build_corpus(mono, noise, Lang::En, Lang::Zh, cfg, Variant::Filter, 0, std::nullopt, 4);
  REQUIRE(threaded.pairs.size() == filter.pairs.size());
  for (std::size_t i = 0; i < filter.pairs.size(); ++i) {
    CHECK(threaded.pairs[i].id == filter.pairs[i].id);
    CHECK(threaded.pairs[i].summary_tgt == filter.pairs[i].summary_tgt);
  }

  CHECK(filter.report.input_count == mono.size());
  CHECK(filter.report.retained_count == filter.pairs.size());
  CHECK(filter.report.rejected_count == mono.size() - filter.pairs.size());
}

TEST_CASE("noise translator is deterministic and respects p", "[corpus]") {
  NoiseTranslator a(3, 0.5), b(3, 0.5), c(4, 0.5);
  std::string text = "the quick brown fox jumps over the lazy dog again";
  CHECK(a.translate(text, Lang::En, Lang::Zh) == b.translate(text, Lang::En, Lang::Zh));
  CHECK(a.translate(text, Lang::En, Lang::Zh) != c.translate(text, Lang::En, Lang::Zh));

  NoiseTranslator clean(3, 0.0);
  CHECK(clean.translate("Hello World", Lang::En, Lang::Zh) == "hello world");
  CHECK_THROWS_AS(NoiseTranslator(0, 1.5), std::invalid_argument);
}

TEST_CASE("corpus files round trip through jsonl", "[corpus]") {
  std::vector<ClsPair> pairs;
  ClsPair p;
  p.id = "x1";
  p.doc = "body text.";
  p.summary_tgt = "目标摘要。";
  p.summary_src_retained = "kept source.";
  p.keep_flags = {true, false, true};
  p.variant = "filter";
  pairs.push_back(p);

  std::string path = tmp_file("clsum_test_corpus.jsonl");
  write_corpus(pairs, path);
  auto loaded = read_corpus(path);
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0].id == "x1");
  CHECK(loaded[0].doc == "body text.");
  CHECK(loaded[0].summary_tgt == "目标摘要。");
  CHECK(loaded[0].summary_src_retained == "kept source.");
  CHECK(loaded[0].keep_flags == std::vector<bool>{true, false, true});
  CHECK(loaded[0].variant == "filter");

  std::string bad = tmp_file("clsum_test_corpus_bad.jsonl");
  {
    std::ofstream out(bad);
    out << R"({"id":"a","doc":"d"})" << "\n";
  }
  CHECK_THROWS_WITH(read_corpus(bad), Catch::Matchers::ContainsSubstring("line 1") &&
                                          Catch::Matchers::ContainsSubstring("summary_tgt"));

  std::vector<MonoPair> mono{{"m1", "doc one.", "sum one."}};
  std::string mp = tmp_file("clsum_test_mono.jsonl");
  write_mono(mono, mp);
  auto mono2 = read_mono(mp);
  REQUIRE(mono2.size() == 1);
  CHECK(mono2[0].id == "m1");
  CHECK(mono2[0].summary == "sum one.");
}

TEST_CASE("corpus statistics average over documents", "[corpus]") {
  std::vector<ClsPair> pairs(2);
  pairs[0].id = "a";
  pairs[0].doc = "a b c. d e.";
  pairs[0].summary_src_retained = "a b.";
  pairs[0].summary_tgt = "今天";
  pairs[1].id = "b";
  pairs[1].doc = "x y";
  pairs[1].summary_src_retained = "x.";
  pairs[1].summary_tgt = "晴";

  CorpusStats s = corpus_stats(pairs, Lang::En, Lang::Zh);
  CHECK(s.n_documents == 2);
  CHECK_THAT(s.avg_src_tokens, WithinAbs(4.5, 1e-12));       // (7 + 2) / 2
  CHECK_THAT(s.avg_ref_tokens_src, WithinAbs(2.5, 1e-12));   // (3 + 2) / 2
  CHECK_THAT(s.avg_ref_tokens_tgt, WithinAbs(1.5, 1e-12));   // (2 + 1) / 2
  CHECK_THAT(s.avg_sentences, WithinAbs(1.5, 1e-12));        // (2 + 1) / 2
  CHECK_THAT(s.avg_tokens_per_sentence, WithinAbs(3.0, 1e-12));  // 9 / 3
  CHECK_THROWS_AS(corpus_stats({}, Lang::En, Lang::Zh), std::invalid_argument);
}

TEST_CASE("hash split is deterministic, disjoint, and size-exact", "[corpus]") {
  std::vector<ClsPair> pairs(10);
  for (int i = 0; i < 10; ++i) pairs[static_cast<std::size_t>(i)].id = "p" + std::to_string(i);

  CorpusSplit s1 = split_corpus(pairs, 2, 3);
  CorpusSplit s2 = split_corpus(pairs, 2, 3);
  CHECK(s1.train.size() == 5);
  CHECK(s1.valid.size() == 2);
  CHECK(s1.test.size() == 3);

  std::set<std::string> all;
  for (const auto& p : s1.train) all.insert(p.id);
  for (const auto& p : s1.valid) all.insert(p.id);
  for (const auto& p : s1.test) all.insert(p.id);
  CHECK(all.size() == 10);

  for (std::size_t i = 0; i < s1.valid.size(); ++i) CHECK(s1.valid[i].id == s2.valid[i].id);
  for (std::size_t i = 0; i < s1.test.size(); ++i) CHECK(s1.test[i].id == s2.test[i].id);
  CHECK_THROWS_AS(split_corpus(pairs, 5, 5), std::invalid_argument);
}

TEST_CASE("http translator posts, caches, and authenticates", "[corpus][http]") {
  static int hits = 0;
  static std::string seen_auth;
  hits = 0;
  seen_auth.clear();

  httplib::Server server;
  server.Post("/translate", [](const httplib::Request& req, httplib::Response& res) {
    ++hits;
    seen_auth = req.get_header_value("Authorization");
    auto body = nlohmann::json::parse(req.body);
    std::string text = body.at("text").get<std::string>();
    nlohmann::json out{{"translation", "[" + body.at("tgt").get<std::string>() + "]" + text}};
    res.set_content(out.dump(), "application/json");
  });
  int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread listener([&]() { server.listen_after_bind(); });
  server.wait_until_ready();

  std::string cache = tmp_file("clsum_test_http_cache.jsonl");
  std::filesystem::remove(cache);
  setenv("CLSUM_HTTP_AUTH", "Bearer sesame", 1);

  {
    HttpTranslator::Options opts;
    opts.url = "http://127.0.0.1:" + std::to_string(port) + "/translate";
    opts.cache_path = cache;
    HttpTranslator t(opts);
    CHECK(t.translate("hello", Lang::En, Lang::Zh) == "[zh]hello");
    CHECK(t.translate("hello", Lang::En, Lang::Zh) == "[zh]hello");
    CHECK(hits == 1);  // second call served from memory
    CHECK(seen_auth == "Bearer sesame");
    CHECK(t.translate("hello", Lang::Zh, Lang::En) == "[en]hello");
    CHECK(hits == 2);  // direction is part of the cache key
  }
  {
    HttpTranslator::Options opts;
    opts.url = "http://127.0.0.1:" + std::to_string(port) + "/translate";
    opts.cache_path = cache;
    HttpTranslator t(opts);
    CHECK(t.cache_size() == 2);  // reloaded from disk
    CHECK(t.translate("hello", Lang::En, Lang::Zh) == "[zh]hello");
    CHECK(hits == 2);  // no new request
  }
  unsetenv("CLSUM_HTTP_AUTH");

  server.stop();
  listener.join();
}

TEST_CASE("http translator reports failures after retries", "[corpus][http]") {
  httplib::Server server;
  server.Post("/translate", [](const httplib::Request&, httplib::Response& res) {
    res.status = 500;
    res.set_content("boom", "text/plain");
  });
  int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread listener([&]() { server.listen_after_bind(); });
  server.wait_until_ready();

  HttpTranslator::Options opts;
  opts.url = "http://127.0.0.1:" + std::to_string(port) + "/translate";
  opts.max_retries = 1;
  HttpTranslator t(opts);
  CHECK_THROWS_AS(t.translate("x", Lang::En, Lang::Zh), std::runtime_error);

  server.stop();
  listener.join();
}

TEST_CASE("translator specs parse or reject cleanly", "[corpus]") {
  CHECK(dynamic_cast<IdentityTranslator*>(make_translator("identity").get()) != nullptr);
  CHECK(dynamic_cast<NoiseTranslator*>(make_translator("noise:5:0.25").get()) != nullptr);
  CHECK(make_translator("http://127.0.0.1:9/x") != nullptr);
  CHECK_THROWS_AS(make_translator("noise:oops"), std::exception);
  CHECK_THROWS_AS(make_translator("smoke-signals"), std::invalid_argument);
}
