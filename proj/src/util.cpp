#include "mmagent/util.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>

#include <openssl/evp.h>
#include <openssl/sha.h>

namespace mmagent {

namespace {

bool is_space(unsigned char c) { return std::isspace(c) != 0; }

std::atomic<LogLevel> g_log_level{LogLevel::Warn};
std::mutex g_log_mutex;

}  // namespace

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && is_space(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string collapse_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char c : s) {
    if (is_space(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

std::string normalize_answer(std::string_view s) { return collapse_whitespace(to_lower(trim(s))); }

bool contains_ci(std::string_view haystack, std::string_view needle) {
  if (needle.empty()) return true;
  auto it = std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end(),
                        [](char a, char b) {
                          return std::tolower(static_cast<unsigned char>(a)) ==
                                 std::tolower(static_cast<unsigned char>(b));
                        });
  return it != haystack.end();
}

bool starts_with(std::string_view s, std::string_view prefix) {
  return s.size() >= prefix.size() && s.substr(0, prefix.size()) == prefix;
}

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return is_space(static_cast<unsigned char>(c)); });
}

std::vector<std::string> split_lines(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto nl = s.find('\n', start);
    if (nl == std::string_view::npos) {
      if (start < s.size()) out.emplace_back(s.substr(start));
      break;
    }
    out.emplace_back(s.substr(start, nl - start));
    start = nl + 1;
  }
  return out;
}

std::size_t count_words(std::string_view s) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : s) {
    if (is_space(static_cast<unsigned char>(c))) {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++n;
    }
  }
  return n;
}

std::string replace_all(std::string s, std::string_view from, std::string_view to) {
  if (from.empty()) return s;
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
  return s;
}

std::string replace_all_ci(std::string_view s, std::string_view needle, std::string_view with) {
  if (needle.empty()) return std::string(s);
  const std::string ls = to_lower(s);
  const std::string ln = to_lower(needle);
  std::string out;
  std::size_t pos = 0;
  while (true) {
    auto hit = ls.find(ln, pos);
    if (hit == std::string::npos) break;
    out.append(s.substr(pos, hit - pos));
    out.append(with);
    pos = hit + ln.size();
  }
  out.append(s.substr(pos));
  return out;
}

std::string first_sentence(std::string_view s, std::size_t max_len) {
  std::string t = collapse_whitespace(s);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if ((t[i] == '.' || t[i] == '!' || t[i] == '?') && (i + 1 == t.size() || t[i + 1] == ' ')) {
      t.resize(i + 1);
      break;
    }
  }
  if (t.size() > max_len) {
    t.resize(max_len);
    t += "...";
  }
  return t;
}

int estimate_tokens(std::string_view s) { return static_cast<int>((s.size() + 3) / 4); }

std::optional<json> extract_json_object(std::string_view text) {
  for (std::size_t start = text.find('{'); start != std::string_view::npos;
       start = text.find('{', start + 1)) {
    int depth = 0;
    bool in_str = false, esc = false;
    for (std::size_t i = start; i < text.size(); ++i) {
      char c = text[i];
      if (in_str) {
        if (esc) esc = false;
        else if (c == '\\') esc = true;
        else if (c == '"') in_str = false;
        continue;
      }
      if (c == '"') in_str = true;
      else if (c == '{') ++depth;
      else if (c == '}' && --depth == 0) {
        auto parsed = json::parse(text.substr(start, i - start + 1), nullptr, false);
        if (!parsed.is_discarded() && parsed.is_object()) return parsed;
        break;
      }
    }
  }
  return std::nullopt;
}

std::string dump_json(const json& j) { return j.dump(-1, ' ', false, json::error_handler_t::replace); }

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

std::vector<json> read_jsonl(const std::filesystem::path& path, std::vector<std::size_t>* bad_lines) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<json> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (is_blank(line)) continue;
    auto row = json::parse(line, nullptr, false);
    if (row.is_discarded()) {
      if (!bad_lines) throw DataError(path.string() + ":" + std::to_string(lineno) + ": invalid JSON");
      bad_lines->push_back(lineno);
      continue;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_jsonl(const std::filesystem::path& path, std::span<const json> rows) {
  std::string buf;
  for (const auto& row : rows) {
    buf += dump_json(row);
    buf += '\n';
  }
  write_file(path, buf);
}

void append_jsonl(const std::filesystem::path& path, const json& row) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw DataError("cannot append to " + path.string());
  out << dump_json(row) << '\n';
  out.flush();
}

bool is_contained_relative(const std::filesystem::path& rel) {
  if (rel.empty() || rel.is_absolute() || rel.has_root_name() || rel.has_root_directory()) return false;
  int depth = 0;
  for (const auto& part : rel.lexically_normal()) {
    if (part == "..") {
      if (--depth < 0) return false;
    } else if (part != "." && !part.empty()) {
      ++depth;
    }
  }
  return true;
}

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                          reinterpret_cast<const unsigned char*>(bytes.data()),
                          static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string base64_decode(std::string_view text) {
  std::string clean;
  for (char c : text)
    if (!std::isspace(static_cast<unsigned char>(c))) clean += c;
  if (clean.size() % 4 != 0) throw DataError("base64 input length is not a multiple of 4");
  std::string out(3 * clean.size() / 4, '\0');
  int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                          reinterpret_cast<const unsigned char*>(clean.data()), static_cast<int>(clean.size()));
  if (n < 0) throw DataError("invalid base64 input");
  std::size_t pad = 0;
  if (!clean.empty() && clean.back() == '=') ++pad;
  if (clean.size() > 1 && clean[clean.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * SHA256_DIGEST_LENGTH);
  for (unsigned char b : digest) {
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 0xF]);
  }
  return out;
}

void set_log_level(LogLevel level) { g_log_level = level; }

void log(LogLevel level, std::string_view msg) {
  if (level < g_log_level.load()) return;
  static constexpr const char* kNames[] = {"debug", "info", "warn", "error", ""};
  std::lock_guard lock(g_log_mutex);
  std::cerr << "[" << kNames[static_cast<int>(level)] << "] " << msg << '\n';
}

}  // namespace mmagent
