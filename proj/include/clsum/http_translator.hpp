#pragma once

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_map>

#include <httplib.h>
#include <json.hpp>

#include "clsum/corpus.hpp"

namespace clsum {

// Client for a JSON translation endpoint: POST {"text","src","tgt"} and the
// server answers {"translation": "..."}. Responses are cached on disk keyed
// by (text, src, tgt) so reruns do not re-issue requests, and consecutive
// requests are spaced by a configurable interval. Credentials are never
// taken from flags or config files: the Authorization header value is read
// from the environment variable named in `auth_env`.
class HttpTranslator final : public Translator {
 public:
  struct Options {
    std::string url;                        // http://host:port/path
    std::string auth_env = "CLSUM_HTTP_AUTH";
    std::string cache_path;                 // empty disables the cache
    double min_interval_s = 0.0;
    int max_retries = 2;
    int timeout_s = 30;
  };

  explicit HttpTranslator(Options opts) : opts_(std::move(opts)) {
    parse_url(opts_.url);
    if (!opts_.cache_path.empty()) load_cache();
    if (const char* v = std::getenv(opts_.auth_env.c_str()); v && *v) auth_value_ = v;
  }

  std::string translate(const std::string& text, Lang src, Lang tgt) override {
    std::string key = cache_key(text, src, tgt);
    {
      std::lock_guard<std::mutex> lock(mu_);
      auto it = cache_.find(key);
      if (it != cache_.end()) return it->second;
    }
    std::string translation = request(text, src, tgt);
    std::lock_guard<std::mutex> lock(mu_);
    auto [it, inserted] = cache_.emplace(key, translation);
    if (inserted && !opts_.cache_path.empty()) append_cache(text, src, tgt, translation);
    return it->second;
  }

  std::size_t cache_size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return cache_.size();
  }

 private:
  void parse_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos || url.compare(0, scheme_end, "http") != 0)
      throw std::invalid_argument("HttpTranslator: url must start with http:// (" + url + ")");
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
      base_ = url;
      path_ = "/";
    } else {
      base_ = url.substr(0, path_start);
      path_ = url.substr(path_start);
    }
  }

  static std::string cache_key(const std::string& text, Lang src, Lang tgt) {
    return lang_name(src) + "\x1f" + lang_name(tgt) + "\x1f" + text;
  }

  void load_cache() {
    std::ifstream in(opts_.cache_path, std::ios::binary);
    if (!in) return;  // first run: no cache yet
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded()) continue;  // tolerate a torn final line
      if (!j.contains("text") || !j.contains("src") || !j.contains("tgt") ||
          !j.contains("translation"))
        continue;
      std::string key = j["src"].get<std::string>() + "\x1f" + j["tgt"].get<std::string>() +
                        "\x1f" + j["text"].get<std::string>();
      cache_.emplace(std::move(key), j["translation"].get<std::string>());
    }
  }

  void append_cache(const std::string& text, Lang src, Lang tgt, const std::string& translation) {
    std::ofstream out(opts_.cache_path, std::ios::binary | std::ios::app);
    if (!out) return;
    nlohmann::json j;
    j["src"] = lang_name(src);
    j["tgt"] = lang_name(tgt);
    j["text"] = text;
    j["translation"] = translation;
    out << j.dump() << '\n';
  }

  void rate_limit() {
    if (opts_.min_interval_s <= 0) return;
    std::unique_lock<std::mutex> lock(rate_mu_);
    auto now = std::chrono::steady_clock::now();
    auto interval = std::chrono::duration<double>(opts_.min_interval_s);
    if (last_request_.time_since_epoch().count() != 0) {
      auto ready = last_request_ + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                       interval);
      if (now < ready) {
        std::this_thread::sleep_for(ready - now);
        now = std::chrono::steady_clock::now();
      }
    }
    last_request_ = now;
  }

  std::string request(const std::string& text, Lang src, Lang tgt) {
    nlohmann::json body;
    body["text"] = text;
    body["src"] = lang_name(src);
    body["tgt"] = lang_name(tgt);
    std::string payload = body.dump();
    std::string last_error;
    for (int attempt = 0; attempt <= opts_.max_retries; ++attempt) {
      rate_limit();
      httplib::Client cli(base_);
      cli.set_connection_timeout(opts_.timeout_s);
      cli.set_read_timeout(opts_.timeout_s);
      httplib::Headers headers;
      if (!auth_value_.empty()) headers.emplace("Authorization", auth_value_);
      auto res = cli.Post(path_, headers, payload, "application/json");
      if (!res) {
        last_error = "connection failed: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status != 200) {
        last_error = "status " + std::to_string(res->status);
        continue;
      }
      nlohmann::json j = nlohmann::json::parse(res->body, nullptr, false);
      if (j.is_discarded() || !j.contains("translation") || !j["translation"].is_string())
        throw std::runtime_error("HttpTranslator: malformed response body");
      return j["translation"].get<std::string>();
    }
    throw std::runtime_error("HttpTranslator: request failed after " +
                             std::to_string(opts_.max_retries + 1) + " attempts (" + last_error +
                             ")");
  }

  Options opts_;
  std::string base_, path_, auth_value_;
  std::unordered_map<std::string, std::string> cache_;
  mutable std::mutex mu_;
  std::mutex rate_mu_;
  std::chrono::steady_clock::time_point last_request_{};
};

// Builds a translator from a spec string: "identity", "noise:<seed>:<p>",
// or "http:<url>" (url passed verbatim, including its own "http://").
inline std::unique_ptr<Translator> make_translator(const std::string& spec,
                                                   const std::string& cache_path = "") {
  if (spec == "identity") return std::make_unique<IdentityTranslator>();
  if (spec.rfind("noise:", 0) == 0) {
    std::string rest = spec.substr(6);
    auto colon = rest.find(':');
    if (colon == std::string::npos)
      throw std::invalid_argument("translator spec: expected noise:<seed>:<p>");
    std::uint64_t seed = std::stoull(rest.substr(0, colon));
    double p = std::stod(rest.substr(colon + 1));
    return std::make_unique<NoiseTranslator>(seed, p);
  }
  if (spec.rfind("http://", 0) == 0 || spec.rfind("http:", 0) == 0) {
    HttpTranslator::Options opts;
    opts.url = spec.rfind("http://", 0) == 0 ? spec : spec.substr(5);
    opts.cache_path = cache_path;
    return std::make_unique<HttpTranslator>(opts);
  }
  throw std::invalid_argument("unknown translator spec: " + spec +
                              " (expected identity | noise:<seed>:<p> | http:<url>)");
}

}  // namespace clsum
