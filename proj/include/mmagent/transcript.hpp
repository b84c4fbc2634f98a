#pragma once

// Append-only record of tool responses, keyed by (tool, canonical arguments).
// Replay mode serves only from the record and fails on a miss.

#include <filesystem>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>

#include "mmagent/util.hpp"

namespace mmagent::toolbox {

enum class TranscriptMode { Off, Record, Replay };

std::string_view transcript_mode_str(TranscriptMode m);
TranscriptMode transcript_mode_from_str(std::string_view s);

class TranscriptMiss : public DataError {
 public:
  using DataError::DataError;
};

class TranscriptCache {
 public:
  /// Loads existing lines from `path` when it exists. Later lines for the
  /// same key win.
  TranscriptCache(std::filesystem::path path, TranscriptMode mode);

  TranscriptMode mode() const { return mode_; }
  const std::filesystem::path& path() const { return path_; }

  std::optional<json> lookup(const std::string& tool, const std::string& args_canonical) const;
  /// Like lookup, but throws TranscriptMiss.
  json require(const std::string& tool, const std::string& args_canonical) const;
  /// Appends {tool, args_canonical, response, timestamp}. No-op unless recording.
  void record(const std::string& tool, const std::string& args_canonical, const json& response);

  std::size_t size() const;

 private:
  std::filesystem::path path_;
  TranscriptMode mode_;
  mutable std::shared_mutex mu_;
  std::map<std::pair<std::string, std::string>, json> entries_;
};

}  // namespace mmagent::toolbox
