#pragma once

// Sequential benchmark runs with per-query timing, turn and token accounting.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mmagent/orchestrator.hpp"

namespace mmagent::evalbench {

/// Monotonic seconds. The virtual clock only moves when advanced, by the
/// latencies the endpoints report.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual double now() = 0;
  virtual void advance(double seconds) = 0;
};

class SteadyClock : public Clock {
 public:
  double now() override;
  void advance(double) override {}
};

class VirtualClock : public Clock {
 public:
  double now() override { return t_; }
  void advance(double seconds) override { t_ += seconds; }

 private:
  double t_ = 0.0;
};

enum class EvalMode { Direct, Search };

std::string_view eval_mode_str(EvalMode m);
EvalMode eval_mode_from_str(std::string_view s);  // throws ConfigError
orchestrator::Mode episode_mode(EvalMode m);

struct EvalRecord {
  std::string id;
  EvalMode mode = EvalMode::Direct;
  double start_s = 0.0;
  double end_s = 0.0;
  double model_time_s = 0.0;
  double tool_time_s = 0.0;
  int turns = 0;
  int answer_tokens = 0;
  int total_tokens = 0;
  std::optional<std::string> final_answer;
  std::optional<bool> correct;
  std::string termination;
  std::string error;  // non-empty marks an error record
  std::vector<std::string> flags;  // "max-length", "token-estimate"

  double wall_time_s() const { return end_s - start_s; }
  bool is_error() const { return !error.empty(); }
  bool has_flag(std::string_view f) const;
};

json to_json(const EvalRecord& r);
EvalRecord eval_record_from_json(const json& j);

std::vector<EvalRecord> read_records(const std::filesystem::path& path);

/// Seeded subsample of llround(fraction * n) distinct indices, returned in
/// dataset order.
std::vector<std::size_t> sample_indices(std::size_t n, double fraction, std::uint64_t seed);

std::vector<orchestrator::Task> load_dataset(const std::filesystem::path& path);

struct BenchConfig {
  EvalMode mode = EvalMode::Direct;
  std::optional<double> sample_fraction;
  std::uint64_t seed = 0;
  orchestrator::EpisodeConfig episode;
  std::filesystem::path out;  // records JSONL, appended after every query
  bool resume = true;
};

/// Builds the record of one finished episode.
EvalRecord make_record(const orchestrator::Trajectory& t, EvalMode mode, double start_s, double end_s,
                       llm::ChatEndpoint* judge);

/// Runs the (sampled) tasks one after another. Ids already present in the
/// output file are not run again; their stored records are returned.
std::vector<EvalRecord> run_benchmark(const std::vector<orchestrator::Task>& tasks, const BenchConfig& cfg,
                                      llm::ChatEndpoint& model, toolbox::ToolRegistry& tools, llm::ChatEndpoint* judge,
                                      Clock& clock);

class EmptyMetrics : public DataError {
 public:
  using DataError::DataError;
};

struct Metrics {
  std::size_t n = 0;  // non-error records
  std::size_t n_errors = 0;
  std::size_t n_judged = 0;
  double mean_wall_s = 0.0;
  double mean_model_s = 0.0;
  double mean_tool_s = 0.0;
  double mean_tokens = 0.0;
  double mean_answer_tokens = 0.0;
  double mean_turns = 0.0;
  double tps = 0.0;        // total tokens / total wall time, tool time included
  double model_tps = 0.0;  // total tokens / total model time
  std::optional<double> accuracy;
  std::size_t n_max_length = 0;
  bool tokens_estimated = false;
};

/// Pure fold over the non-error records; throws EmptyMetrics when none.
Metrics compute_metrics(const std::vector<EvalRecord>& records);

std::string metrics_table(const Metrics& m, const std::string& label);
std::string metrics_csv_header();
std::string metrics_csv_row(const Metrics& m, const std::string& label);

}  // namespace mmagent::evalbench
