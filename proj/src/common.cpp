#include "lemmaforge/common.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

namespace lemmaforge {

ParseError::ParseError(const std::string& what, std::size_t line)
    : Error(line ? fmt::format("line {}: {}", line, what) : what), line_(line) {}

IntegrityError::IntegrityError(const std::string& what, std::size_t line)
    : Error(line ? fmt::format("line {}: {}", line, what) : what), line_(line) {}

Ratio::Ratio(std::int64_t num, std::int64_t den) {
  if (den == 0) throw ContractViolation("ratio with zero denominator");
  if (den < 0) {
    num = -num;
    den = -den;
  }
  const std::int64_t g = std::gcd(num, den);
  num_ = g ? num / g : num;
  den_ = g ? den / g : den;
}

std::string Ratio::to_string() const {
  if (den_ == 1) return std::to_string(num_);
  return fmt::format("{}/{}", num_, den_);
}

namespace {

std::int64_t parse_int(std::string_view s, std::string_view whole) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
    throw ParseError(fmt::format("not a rational number: '{}'", whole));
  return v;
}

}  // namespace

Ratio Ratio::parse(std::string_view text) {
  const std::string t = trim(text);
  std::string_view s = t;
  if (auto slash = s.find('/'); slash != std::string_view::npos) {
    return Ratio(parse_int(trim(s.substr(0, slash)), text),
                 parse_int(trim(s.substr(slash + 1)), text));
  }
  if (auto dot = s.find('.'); dot != std::string_view::npos) {
    const bool negative = !s.empty() && s.front() == '-';
    std::string_view int_part = s.substr(negative ? 1 : 0, dot - (negative ? 1 : 0));
    std::string_view frac = s.substr(dot + 1);
    if (frac.size() > 12) throw ParseError(fmt::format("too many decimals: '{}'", text));
    std::int64_t scale = 1;
    for (std::size_t i = 0; i < frac.size(); ++i) scale *= 10;
    const std::int64_t ip = int_part.empty() ? 0 : parse_int(int_part, text);
    const std::int64_t fp = frac.empty() ? 0 : parse_int(frac, text);
    const std::int64_t num = ip * scale + fp;
    return Ratio(negative ? -num : num, scale);
  }
  return Ratio(parse_int(s, text), 1);
}

std::uint64_t fnv1a64(std::string_view data) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) noexcept {
  return splitmix64(splitmix64(base) ^ fnv1a64(tag));
}

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  if (n == 0) throw ContractViolation("uniform_index over an empty range");
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(rng);
}

std::string hex64(std::uint64_t v) { return fmt::format("{:016x}", v); }

void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const json&, std::size_t)>& fn) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open '{}'", path.string()));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(fmt::format("{}: malformed record ({})", path.string(), e.what()),
                       line_no);
    }
    if (!record.is_object())
      throw ParseError(fmt::format("{}: record is not an object", path.string()), line_no);
    fn(record, line_no);
  }
}

void write_jsonl(const std::filesystem::path& path, std::span<const json> records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
  for (const auto& r : records) out << r.dump() << '\n';
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(fmt::format("cannot open '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

std::string trim(std::string_view s) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return std::string(s);
}

std::string collapse_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(c));
  }
  return out;
}

std::vector<std::string> split_lines(std::string_view s) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t nl = s.find('\n', start);
    if (nl == std::string_view::npos) {
      lines.emplace_back(s.substr(start));
      break;
    }
    lines.emplace_back(s.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

std::string normalize_newlines(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\r') {
      out.push_back('\n');
      if (i + 1 < s.size() && s[i + 1] == '\n') ++i;
    } else {
      out.push_back(s[i]);
    }
  }
  return out;
}

std::size_t utf8_length(std::string_view s) noexcept {
  std::size_t n = 0;
  for (unsigned char c : s)
    if ((c & 0xC0) != 0x80) ++n;
  return n;
}

}  // namespace lemmaforge
