#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "clsum/corpus.hpp"
#include "clsum/decode.hpp"
#include "clsum/rouge.hpp"

namespace clsum {

// Percentile bootstrap over the mean. The resampler is pinned to
// std::mt19937_64 with modulo index draws because that sequence is fixed by
// the standard, so results are reproducible across compilers and checkable
// against independent reimplementations.
inline std::pair<double, double> bootstrap_ci(const std::vector<double>& scores,
                                              std::size_t resamples = 1000,
                                              double confidence = 0.95,
                                              std::uint64_t seed = 0) {
  if (scores.empty()) throw std::invalid_argument("bootstrap_ci: no scores");
  if (resamples == 0) throw std::invalid_argument("bootstrap_ci: resamples must be >= 1");
  if (confidence <= 0.0 || confidence >= 1.0)
    throw std::invalid_argument("bootstrap_ci: confidence must be in (0,1)");
  std::size_t n = scores.size();
  std::mt19937_64 eng(seed);
  std::vector<double> means(resamples);
  for (std::size_t r = 0; r < resamples; ++r) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += scores[eng() % n];
    means[r] = sum / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  auto percentile = [&](double q) {
    double pos = q * static_cast<double>(resamples - 1);
    std::size_t lo = static_cast<std::size_t>(pos);
    double frac = pos - static_cast<double>(lo);
    if (lo + 1 >= resamples) return means[resamples - 1];
    return means[lo] * (1.0 - frac) + means[lo + 1] * frac;
  };
  double alpha = 1.0 - confidence;
  return {percentile(alpha / 2.0), percentile(1.0 - alpha / 2.0)};
}

struct MetricSummary {
  double mean = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

struct EvalConfig {
  RougeUnit unit = RougeUnit::EnWord;
  std::size_t resamples = 1000;
  double confidence = 0.95;
  std::uint64_t seed = 0;
};

struct EvalReport {
  std::vector<std::pair<std::string, RougeScore>> per_doc;  // sorted by id
  MetricSummary r1, r2, rl;
  EvalConfig config;

  std::string table() const {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(4);
    os << "metric    mean     ci-low   ci-high\n";
    auto row = [&](const char* name, const MetricSummary& m) {
      os << name << "   " << m.mean << "   " << m.lower << "   " << m.upper << '\n';
    };
    row("rouge-1", r1);
    row("rouge-2", r2);
    row("rouge-l", rl);
    os << "documents " << per_doc.size() << '\n';
    return os.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["documents"] = per_doc.size();
    j["unit"] = config.unit == RougeUnit::EnWord ? "en-word" : "zh-char";
    j["resamples"] = config.resamples;
    j["confidence"] = config.confidence;
    j["seed"] = config.seed;
    auto metric = [](const MetricSummary& m) {
      return nlohmann::json{{"mean", m.mean}, {"ci_low", m.lower}, {"ci_high", m.upper}};
    };
    j["rouge1_f1"] = metric(r1);
    j["rouge2_f1"] = metric(r2);
    j["rougel_f1"] = metric(rl);
    return j;
  }
};

// Scores each output against the reference with the same id; id sets must
// match exactly. Documents are sorted by id before resampling so the CI does
// not depend on file order.
inline EvalReport evaluate(const std::vector<OutputPair>& outputs,
                           const std::vector<ClsPair>& refs, const EvalConfig& cfg) {
  std::unordered_map<std::string, const ClsPair*> by_id;
  for (const auto& r : refs) by_id[r.id] = &r;
  std::vector<std::string> missing, extra;
  for (const auto& o : outputs)
    if (!by_id.count(o.id)) extra.push_back(o.id);
  {
    std::unordered_map<std::string, bool> covered;
    for (const auto& o : outputs) covered[o.id] = true;
    for (const auto& r : refs)
      if (!covered.count(r.id)) missing.push_back(r.id);
  }
  if (!missing.empty() || !extra.empty()) {
    std::string msg = "evaluate: id mismatch;";
    auto list = [&](const char* label, const std::vector<std::string>& ids) {
      if (ids.empty()) return;
      msg += std::string(" ") + label + ":";
      for (std::size_t i = 0; i < ids.size() && i < 5; ++i) msg += " " + ids[i];
      if (ids.size() > 5) msg += " (+" + std::to_string(ids.size() - 5) + " more)";
    };
    list("outputs without reference", extra);
    list("references without output", missing);
    throw std::runtime_error(msg);
  }
  if (outputs.empty()) throw std::invalid_argument("evaluate: no documents");

  EvalReport report;
  report.config = cfg;
  for (const auto& o : outputs) {
    const ClsPair& ref = *by_id.at(o.id);
    report.per_doc.emplace_back(o.id, rouge_suite(o.summary, ref.summary_tgt, cfg.unit));
  }
  std::sort(report.per_doc.begin(), report.per_doc.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  auto summarize = [&](auto pick) {
    std::vector<double> scores;
    scores.reserve(report.per_doc.size());
    for (const auto& [id, s] : report.per_doc) scores.push_back(pick(s));
    MetricSummary m;
    for (double v : scores) m.mean += v;
    m.mean /= static_cast<double>(scores.size());
    auto [lo, hi] = bootstrap_ci(scores, cfg.resamples, cfg.confidence, cfg.seed);
    m.lower = lo;
    m.upper = hi;
    return m;
  };
  report.r1 = summarize([](const RougeScore& s) { return s.r1.f1; });
  report.r2 = summarize([](const RougeScore& s) { return s.r2.f1; });
  report.rl = summarize([](const RougeScore& s) { return s.rl.f1; });
  return report;
}

}  // namespace clsum
