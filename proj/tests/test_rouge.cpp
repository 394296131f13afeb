#include <catch2/catch_amalgamated.hpp>

#include "clsum/rouge.hpp"

using namespace clsum;
using Catch::Matchers::WithinAbs;

TEST_CASE("unigram and bigram overlap on a small pair", "[rouge]") {
  auto cand = rouge_tokens("the cat sat", RougeUnit::EnWord);
  auto ref = rouge_tokens("the cat ate", RougeUnit::EnWord);

  Score r1 = rouge_n_f1(cand, ref, 1);
  CHECK_THAT(r1.precision, WithinAbs(2.0 / 3.0, 1e-12));
  CHECK_THAT(r1.recall, WithinAbs(2.0 / 3.0, 1e-12));
  CHECK_THAT(r1.f1, WithinAbs(2.0 / 3.0, 1e-12));

  Score r2 = rouge_n_f1(cand, ref, 2);
  CHECK_THAT(r2.f1, WithinAbs(0.5, 1e-12));

  Score rl = rouge_l_f1(cand, ref);
  CHECK_THAT(rl.f1, WithinAbs(2.0 / 3.0, 1e-12));
}

TEST_CASE("clipped counts stop a repeated candidate token from inflating overlap", "[rouge]") {
  auto cand = rouge_tokens("the the the the", RougeUnit::EnWord);
  auto ref = rouge_tokens("the cat", RougeUnit::EnWord);
  Score r1 = rouge_n_f1(cand, ref, 1);
  // Overlap is clipped to one "the": precision 1/4, recall 1/2.
  CHECK_THAT(r1.precision, WithinAbs(0.25, 1e-12));
  CHECK_THAT(r1.recall, WithinAbs(0.5, 1e-12));
  CHECK_THAT(r1.f1, WithinAbs(2 * 0.25 * 0.5 / 0.75, 1e-12));
}

TEST_CASE("empty sides give zero instead of dividing by zero", "[rouge]") {
  std::vector<std::string> none;
  auto some = rouge_tokens("a b", RougeUnit::EnWord);
  CHECK(rouge_n_f1(none, some, 1).f1 == 0.0);
  CHECK(rouge_n_f1(some, none, 1).f1 == 0.0);
  CHECK(rouge_n_f1(none, none, 2).f1 == 0.0);
  CHECK(rouge_l_f1(none, some).f1 == 0.0);
  // One-token sequences have no bigrams at all.
  auto single = rouge_tokens("a", RougeUnit::EnWord);
  CHECK(rouge_n_f1(single, single, 2).f1 == 0.0);
  CHECK_THROWS_AS(rouge_n_f1(some, some, 0), std::invalid_argument);
}

TEST_CASE("identical texts score one across the suite", "[rouge]") {
  RougeScore s = rouge_suite("a b c d", "a b c d", RougeUnit::EnWord);
  CHECK_THAT(s.r1.f1, WithinAbs(1.0, 1e-12));
  CHECK_THAT(s.r2.f1, WithinAbs(1.0, 1e-12));
  CHECK_THAT(s.rl.f1, WithinAbs(1.0, 1e-12));
}

TEST_CASE("subsequence metric rewards order that bigrams miss", "[rouge]") {
  // Common subsequence "a b c" spans a gap; no shared bigram exists.
  auto cand = rouge_tokens("a x b y c", RougeUnit::EnWord);
  auto ref = rouge_tokens("a b q c", RougeUnit::EnWord);
  CHECK(rouge_n_f1(cand, ref, 2).f1 == 0.0);
  Score rl = rouge_l_f1(cand, ref);
  CHECK_THAT(rl.precision, WithinAbs(3.0 / 5.0, 1e-12));
  CHECK_THAT(rl.recall, WithinAbs(3.0 / 4.0, 1e-12));
  CHECK_THAT(rl.f1, WithinAbs(2 * (3.0 / 5.0) * (3.0 / 4.0) / (3.0 / 5.0 + 3.0 / 4.0), 1e-12));
}

TEST_CASE("chinese text is scored on characters", "[rouge]") {
  CHECK(rouge_unit_for(Lang::Zh) == RougeUnit::ZhChar);
  CHECK(rouge_unit_for(Lang::En) == RougeUnit::EnWord);
  auto cand = rouge_tokens("今天下雨", RougeUnit::ZhChar);
  REQUIRE(cand.size() == 4);
  RougeScore s = rouge_suite("今天下雨", "今天晴天", RougeUnit::ZhChar);
  // Unigram overlap: 今, 天, 天 clipped to ref counts -> 今(1) + 天(2->min(1,2)=1)... cand has one 天.
  // cand counts: 今1 天1 下1 雨1; ref counts: 今1 天2 晴1. overlap = 2.
  CHECK_THAT(s.r1.f1, WithinAbs(0.5, 1e-12));
  // Shared bigram: 今天 only.
  CHECK_THAT(s.r2.f1, WithinAbs(1.0 / 3.0, 1e-12));
}

TEST_CASE("english rouge tokens are lowercased words without punctuation splits lost", "[rouge]") {
  auto toks = rouge_tokens("The CAT ate.", RougeUnit::EnWord);
  REQUIRE(toks == std::vector<std::string>{"the", "cat", "ate", "."});
}
