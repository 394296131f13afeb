#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace clsum {

// Deterministic RNG used everywhere seeds appear in the public API.
// mt19937_64 has a standardized output sequence, so runs reproduce across
// platforms and standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next() { return eng_(); }

  // uniform in [0, 1)
  double uniform() { return (eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n). Modulo bias is negligible for n << 2^64.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
    return eng_() % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
};

// Run fn(i) for i in [0, n) on up to `threads` workers. Callers write
// results into pre-sized slots; the first exception is rethrown after all
// workers drain. threads <= 1 degrades to a plain loop.
template <typename Fn>
inline void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  auto worker = [&]() {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  std::size_t workers = std::min(threads, n);
  pool.reserve(workers);
  for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Exact rational, used where a threshold like 2/3 must compare without
// floating-point rounding at the boundary.
struct Fraction {
  long long num = 2;
  long long den = 3;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }

  // "2/3" or a plain decimal like "0.66" (decimal parsed at 1e-9 resolution).
  static Fraction parse(const std::string& text) {
    auto slash = text.find('/');
    Fraction f;
    if (slash != std::string::npos) {
      f.num = std::stoll(text.substr(0, slash));
      f.den = std::stoll(text.substr(slash + 1));
    } else {
      f.num = static_cast<long long>(std::llround(std::stod(text) * 1e9));
      f.den = 1000000000ll;
    }
    if (f.den <= 0) throw std::invalid_argument("Fraction: denominator must be positive");
    return f;
  }

  std::string str() const { return std::to_string(num) + "/" + std::to_string(den); }
};

}  // namespace clsum
