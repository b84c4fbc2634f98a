#pragma once

// Prompt fixtures. Judge and generator prompts are versioned: any edit changes
// pipeline_version(), which is stamped into every stored verdict.

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mmagent/protocol.hpp"

namespace mmagent::prompts {

/// Tool-use system prompt listing exactly `tools`. With all four tools this is
/// the DeepResearch prompt.
std::string tool_system_prompt(const std::vector<protocol::ToolName>& tools);
std::string planner_system_prompt();
std::string direct_system_prompt();
/// Non-think prompt used for general VQA records in the SFT mix.
std::string general_nonthink_prompt();

extern const std::string_view kAnswerJudge;
extern const std::string_view kConsistencyJudge;
extern const std::string_view kStepJudge;
extern const std::string_view kSummarizer;
extern const std::string_view kSeedQuestion;
extern const std::string_view kSeedRetrySuffix;
extern const std::string_view kUniqueness;
extern const std::string_view kRelation;
extern const std::string_view kRewrite;
extern const std::string_view kChecker;
extern const std::string_view kVisualRewrite;

/// "v1-<hash>" over all versioned templates.
const std::string& pipeline_version();

/// Substitutes {key} placeholders.
std::string fill(std::string_view tmpl, const std::map<std::string, std::string>& vars);

}  // namespace mmagent::prompts
