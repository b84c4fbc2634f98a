#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace mmagent {

using json = nlohmann::json;

// Error classes map onto CLI exit codes (see cli.hpp).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- strings --------------------------------------------------------------

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
std::string collapse_whitespace(std::string_view s);
/// trim + ASCII casefold + whitespace collapse; the answer-matching fast path.
std::string normalize_answer(std::string_view s);
bool contains_ci(std::string_view haystack, std::string_view needle);
bool starts_with(std::string_view s, std::string_view prefix);
bool is_blank(std::string_view s);
std::vector<std::string> split_lines(std::string_view s);
std::size_t count_words(std::string_view s);
std::string replace_all(std::string s, std::string_view from, std::string_view to);
/// Replaces every case-insensitive occurrence of `needle`.
std::string replace_all_ci(std::string_view s, std::string_view needle, std::string_view with);
std::string first_sentence(std::string_view s, std::size_t max_len = 200);

/// Fallback token counter: ceil(chars / 4).
int estimate_tokens(std::string_view s);

/// Finds the first balanced JSON object in free text (models like to wrap
/// replies in prose or fences) and parses it.
std::optional<json> extract_json_object(std::string_view text);

/// Compact dump that replaces invalid UTF-8 instead of throwing; model output
/// is arbitrary bytes.
std::string dump_json(const json& j);

// ---- randomness -----------------------------------------------------------

/// SplitMix64 step, used to derive independent per-item seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// Unbiased draw in [0, bound) from a 64-bit engine output stream. Used instead
/// of std::uniform_int_distribution so sequences are identical across
/// standard libraries.
template <class Engine>
std::uint64_t bounded_draw(Engine& rng, std::uint64_t bound) {
  if (bound <= 1) return 0;
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % bound;
}

template <class T, class Engine>
void fisher_yates(std::span<T> items, Engine& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = bounded_draw(rng, i);
    std::swap(items[i - 1], items[j]);
  }
}

// ---- files ----------------------------------------------------------------

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);
/// Reads a JSONL file; blank lines are skipped. Throws DataError on bad lines
/// unless `bad_lines` is given, in which case their line numbers are collected.
std::vector<json> read_jsonl(const std::filesystem::path& path,
                             std::vector<std::size_t>* bad_lines = nullptr);
void write_jsonl(const std::filesystem::path& path, std::span<const json> rows);
void append_jsonl(const std::filesystem::path& path, const json& row);

/// True when `rel` stays inside its root: relative, no `..` escaping.
bool is_contained_relative(const std::filesystem::path& rel);

// ---- encoding / hashing ---------------------------------------------------

std::string base64_encode(std::string_view bytes);
/// Throws DataError on malformed input.
std::string base64_decode(std::string_view text);
std::string sha256_hex(std::string_view bytes);

// ---- logging --------------------------------------------------------------

enum class LogLevel { Debug, Info, Warn, Error, Off };
void set_log_level(LogLevel level);
void log(LogLevel level, std::string_view msg);
inline void log_info(std::string_view m) { log(LogLevel::Info, m); }
inline void log_warn(std::string_view m) { log(LogLevel::Warn, m); }

}  // namespace mmagent
