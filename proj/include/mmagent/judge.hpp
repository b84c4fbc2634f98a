#pragma once

// Judge-model calls shared by rollout agreement, curation and evaluation.

#include <string>
#include <string_view>

#include "mmagent/llm.hpp"

namespace mmagent::judge {

enum class Verdict { Positive, Negative, Pending };

struct JudgeResult {
  Verdict verdict = Verdict::Pending;
  std::string raw;         // judge reply, or the error text when Pending
  bool fast_path = false;  // decided without a model call
};

/// Reads the first word of a reply; `positive`/`negative` are the two allowed
/// words. Anything else is Pending.
Verdict parse_verdict(std::string_view reply, std::string_view positive, std::string_view negative);

/// Normalized exact match first; otherwise asks the judge. A missing judge or
/// an endpoint failure yields Pending, never a pass.
JudgeResult judge_answer(const std::string& question, const std::string& gold, const std::string& answer,
                         llm::ChatEndpoint* judge);

JudgeResult judge_consistency(const std::string& think, const std::string& answer, llm::ChatEndpoint* judge);

/// Asks a vision judge whether `image_path` supports `think`.
JudgeResult judge_step(const std::string& image_path, int step, const std::string& think,
                       llm::ChatEndpoint* vlm);

}  // namespace mmagent::judge
