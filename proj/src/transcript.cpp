#include "mmagent/transcript.hpp"

#include <chrono>
#include <ctime>
#include <mutex>

namespace mmagent::toolbox {

namespace {

std::string utc_timestamp() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

std::string_view transcript_mode_str(TranscriptMode m) {
  switch (m) {
    case TranscriptMode::Off: return "off";
    case TranscriptMode::Record: return "record";
    case TranscriptMode::Replay: return "replay";
  }
  return "off";
}

TranscriptMode transcript_mode_from_str(std::string_view s) {
  if (s == "off") return TranscriptMode::Off;
  if (s == "record") return TranscriptMode::Record;
  if (s == "replay") return TranscriptMode::Replay;
  throw ConfigError("unknown transcript mode: " + std::string(s));
}

TranscriptCache::TranscriptCache(std::filesystem::path path, TranscriptMode mode)
    : path_(std::move(path)), mode_(mode) {
  if (mode_ == TranscriptMode::Off) return;
  if (!std::filesystem::exists(path_)) {
    if (mode_ == TranscriptMode::Replay) throw ConfigError("transcript not found: " + path_.string());
    return;
  }
  std::vector<std::size_t> bad;
  for (auto& row : read_jsonl(path_, &bad)) {
    if (!row.is_object() || !row.contains("tool") || !row.contains("args_canonical")) continue;
    entries_[{row["tool"].get<std::string>(), row["args_canonical"].get<std::string>()}] =
        std::move(row["response"]);
  }
  for (auto n : bad) log_warn("transcript " + path_.string() + ": skipping bad line " + std::to_string(n));
}

std::optional<json> TranscriptCache::lookup(const std::string& tool, const std::string& args_canonical) const {
  std::shared_lock lock(mu_);
  auto it = entries_.find({tool, args_canonical});
  if (it == entries_.end()) return std::nullopt;
  return std::optional<json>(std::in_place, it->second);
}

json TranscriptCache::require(const std::string& tool, const std::string& args_canonical) const {
  auto hit = lookup(tool, args_canonical);
  if (!hit) throw TranscriptMiss("transcript miss for " + tool + " " + args_canonical);
  return *hit;
}

void TranscriptCache::record(const std::string& tool, const std::string& args_canonical, const json& response) {
  if (mode_ != TranscriptMode::Record) return;
  json row = {{"tool", tool}, {"args_canonical", args_canonical}, {"response", response},
              {"timestamp", utc_timestamp()}};
  std::unique_lock lock(mu_);
  entries_[{tool, args_canonical}] = response;
  append_jsonl(path_, row);
}

std::size_t TranscriptCache::size() const {
  std::shared_lock lock(mu_);
  return entries_.size();
}

}  // namespace mmagent::toolbox
