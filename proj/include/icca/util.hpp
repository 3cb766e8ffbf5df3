#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace icca {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad configuration, CLI usage, or malformed config files.
struct ConfigError : Error {
  using Error::Error;
};

// A referenced file is missing, unreadable, or undecodable.
struct LoadError : Error {
  using Error::Error;
};

// Malformed record inside an otherwise readable file.
struct ParseError : Error {
  using Error::Error;
};

// An API was called outside its contract.
struct ContractError : Error {
  using Error::Error;
};

// A request exceeds an agent's declared limits.
struct CapabilityError : Error {
  using Error::Error;
};

// An agent failed mid-run (transport failure, exhausted playbook, ...).
struct AgentError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Deterministic hashing and random streams.
//
// Reproducibility contract: every random draw in the library goes through
// Rng, which wraps std::mt19937_64 (engine output is pinned by the standard)
// and avoids std::*_distribution (whose output is not).
// ---------------------------------------------------------------------------

constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// One master seed per run; per-trial streams are derived by hashing the
// interaction id and trial index so interactions never share a stream.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view scope,
                                 std::uint64_t index = 0, std::uint64_t purpose = 0) {
  std::uint64_t h = splitmix64(master ^ fnv1a64(scope));
  h = splitmix64(h ^ (index * 0x9e3779b97f4a7c15ull));
  return splitmix64(h ^ purpose);
}

// Purpose tags keep independent random streams from colliding when they are
// derived from the same (master seed, interaction, trial) triple.
namespace seed_purpose {
inline constexpr std::uint64_t kLabels = 1;
inline constexpr std::uint64_t kMislead = 2;
inline constexpr std::uint64_t kSchedule = 3;
inline constexpr std::uint64_t kMessage = 4;
inline constexpr std::uint64_t kBootstrap = 5;
}  // namespace seed_purpose

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, n). Modulo bias is < 2^-57 for any n that fits here.
  std::size_t bounded(std::size_t n) {
    return n == 0 ? 0 : static_cast<std::size_t>(next() % n);
  }

  double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

 private:
  std::mt19937_64 engine_;
};

template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::swap(items[i - 1], items[rng.bounded(i)]);
  }
}

inline std::vector<int> random_permutation(int n, Rng& rng) {
  std::vector<int> perm(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
  shuffle(perm, rng);
  return perm;
}

// ---------------------------------------------------------------------------
// Small string helpers.
// ---------------------------------------------------------------------------

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t start = i;
    while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i > start) out.emplace_back(s.substr(start, i - start));
  }
  return out;
}

inline std::vector<std::string> split_lines(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t nl = s.find('\n', start);
    std::size_t end = nl == std::string_view::npos ? s.size() : nl;
    if (end > start && s[end - 1] == '\r') --end;  // tolerate CRLF input
    if (nl == std::string_view::npos) {
      out.emplace_back(s.substr(start, end - start));
      break;
    }
    out.emplace_back(s.substr(start, end - start));
    start = nl + 1;
  }
  return out;
}

inline bool contains_word(std::string_view text, std::string_view word) {
  auto is_word_char = [](unsigned char c) { return std::isalnum(c) != 0; };
  std::size_t pos = 0;
  while ((pos = text.find(word, pos)) != std::string_view::npos) {
    bool left_ok = pos == 0 || !is_word_char(static_cast<unsigned char>(text[pos - 1]));
    std::size_t end = pos + word.size();
    bool right_ok = end >= text.size() || !is_word_char(static_cast<unsigned char>(text[end]));
    if (left_ok && right_ok) return true;
    ++pos;
  }
  return false;
}

// Fixed-notation-free double formatting, stable across runs.
inline std::string format_double(double v, int significant = 10) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", significant, v);
  return buf;
}

// ---------------------------------------------------------------------------
// Files.
// ---------------------------------------------------------------------------

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_text_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot open file for writing: " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw LoadError("write failed: " + path.string());
}

inline std::string base64_encode(std::span<const std::uint8_t> data) {
  static constexpr char alphabet[] =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((data.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= data.size(); i += 3) {
    std::uint32_t n = (static_cast<std::uint32_t>(data[i]) << 16) |
                      (static_cast<std::uint32_t>(data[i + 1]) << 8) |
                      static_cast<std::uint32_t>(data[i + 2]);
    out.push_back(alphabet[(n >> 18) & 63]);
    out.push_back(alphabet[(n >> 12) & 63]);
    out.push_back(alphabet[(n >> 6) & 63]);
    out.push_back(alphabet[n & 63]);
  }
  if (i + 1 == data.size()) {
    std::uint32_t n = static_cast<std::uint32_t>(data[i]) << 16;
    out.push_back(alphabet[(n >> 18) & 63]);
    out.push_back(alphabet[(n >> 12) & 63]);
    out += "==";
  } else if (i + 2 == data.size()) {
    std::uint32_t n = (static_cast<std::uint32_t>(data[i]) << 16) |
                      (static_cast<std::uint32_t>(data[i + 1]) << 8);
    out.push_back(alphabet[(n >> 18) & 63]);
    out.push_back(alphabet[(n >> 12) & 63]);
    out.push_back(alphabet[(n >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

}  // namespace icca
