#pragma once

#include <algorithm>
#include <atomic>
#include <compare>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <type_traits>
#include <vector>

#include <json.hpp>

namespace lemmaforge {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input. `line()` is 1-based, 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Well-formed input that breaks a dataset invariant (duplicate id, ...).
class IntegrityError : public Error {
 public:
  IntegrityError(const std::string& what, std::size_t line = 0);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A caller broke an operation precondition.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// A backend could not be reached or launched. Never a proof verdict.
class InfrastructureError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Ratio: exact non-negative-denominator rational over int64.
// ---------------------------------------------------------------------------

class Ratio {
 public:
  constexpr Ratio() = default;
  Ratio(std::int64_t num, std::int64_t den);

  std::int64_t num() const noexcept { return num_; }
  std::int64_t den() const noexcept { return den_; }
  double to_double() const noexcept {
    return static_cast<double>(num_) / static_cast<double>(den_);
  }
  std::string to_string() const;

  /// Parses "p/q", an integer, or a finite decimal such as "0.25".
  static Ratio parse(std::string_view text);

  friend bool operator==(const Ratio& a, const Ratio& b) noexcept {
    return a.num_ == b.num_ && a.den_ == b.den_;
  }
  friend std::strong_ordering operator<=>(const Ratio& a, const Ratio& b) noexcept {
    const __int128 lhs = static_cast<__int128>(a.num_) * b.den_;
    const __int128 rhs = static_cast<__int128>(b.num_) * a.den_;
    if (lhs < rhs) return std::strong_ordering::less;
    if (lhs > rhs) return std::strong_ordering::greater;
    return std::strong_ordering::equal;
  }

 private:
  std::int64_t num_ = 0;
  std::int64_t den_ = 1;
};

// ---------------------------------------------------------------------------
// Seeding. Every random choice in the pipeline draws from an mt19937_64
// seeded by derive_seed(run seed, stable tag), so results do not depend on
// processing order or thread scheduling.
// ---------------------------------------------------------------------------

std::uint64_t fnv1a64(std::string_view data) noexcept;
std::uint64_t splitmix64(std::uint64_t x) noexcept;
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) noexcept;

/// Uniform index in [0, n). n must be > 0.
std::size_t uniform_index(std::mt19937_64& rng, std::size_t n);

std::string hex64(std::uint64_t v);

// ---------------------------------------------------------------------------
// Bounded fan-out. Runs fn over every item with at most `pool_size` calls in
// flight. Results keep input order. The first exception thrown by fn is
// rethrown after all workers have joined.
// ---------------------------------------------------------------------------

template <class T, class F>
auto parallel_map(std::span<const T> items, std::size_t pool_size, F&& fn)
    -> std::vector<std::invoke_result_t<F&, const T&>> {
  using R = std::invoke_result_t<F&, const T&>;
  std::vector<std::optional<R>> slots(items.size());
  if (items.empty()) return {};
  const std::size_t workers = std::clamp<std::size_t>(pool_size, 1, items.size());

  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;

  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= items.size()) return;
      try {
        slots[i].emplace(fn(items[i]));
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };

  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(work);
  }
  if (first_error) std::rethrow_exception(first_error);

  std::vector<R> out;
  out.reserve(slots.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

// ---------------------------------------------------------------------------
// Line-delimited JSON
// ---------------------------------------------------------------------------

/// Calls fn(record, line_number) for every non-blank line.
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const json&, std::size_t)>& fn);

/// One compact record per line, keys sorted, trailing newline.
void write_jsonl(const std::filesystem::path& path, std::span<const json> records);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

// ---------------------------------------------------------------------------
// Text helpers
// ---------------------------------------------------------------------------

std::string trim(std::string_view s);
std::string collapse_whitespace(std::string_view s);
std::vector<std::string> split_lines(std::string_view s);
/// CRLF and lone CR become LF.
std::string normalize_newlines(std::string_view s);
/// Number of UTF-8 code points.
std::size_t utf8_length(std::string_view s) noexcept;

}  // namespace lemmaforge
