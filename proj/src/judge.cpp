#include "mmagent/judge.hpp"

#include <cctype>

#include "mmagent/prompts.hpp"

namespace mmagent::judge {

namespace {

JudgeResult ask(llm::ChatEndpoint* endpoint, llm::ChatMessage msg, std::string_view pos, std::string_view neg) {
  JudgeResult out;
  if (!endpoint) {
    out.raw = "no judge endpoint configured";
    return out;
  }
  llm::ChatRequest req;
  req.temperature = 0.0;
  req.messages.push_back(std::move(msg));
  try {
    auto resp = endpoint->complete(req);
    out.raw = resp.content;
    out.verdict = parse_verdict(resp.content, pos, neg);
  } catch (const llm::EndpointError& e) {
    out.raw = std::string("endpoint error: ") + e.what();
    out.verdict = Verdict::Pending;
  } catch (const DataError& e) {
    out.raw = std::string("judge input error: ") + e.what();
    out.verdict = Verdict::Pending;
  }
  return out;
}

}  // namespace

Verdict parse_verdict(std::string_view reply, std::string_view positive, std::string_view negative) {
  std::string t = trim(reply);
  std::string word;
  for (char c : t) {
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') word.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    else if (!word.empty()) break;
  }
  if (word == positive) return Verdict::Positive;
  if (word == negative) return Verdict::Negative;
  return Verdict::Pending;
}

JudgeResult judge_answer(const std::string& question, const std::string& gold, const std::string& answer,
                         llm::ChatEndpoint* judge) {
  if (normalize_answer(gold) == normalize_answer(answer)) return {Verdict::Positive, "exact match", true};
  llm::ChatMessage msg{"user",
                       prompts::fill(prompts::kAnswerJudge, {{"question", question}, {"gold", gold}, {"answer", answer}}),
                       {}};
  return ask(judge, std::move(msg), "AGREE", "DISAGREE");
}

JudgeResult judge_consistency(const std::string& think, const std::string& answer, llm::ChatEndpoint* judge) {
  llm::ChatMessage msg{"user", prompts::fill(prompts::kConsistencyJudge, {{"think", think}, {"answer", answer}}), {}};
  return ask(judge, std::move(msg), "CONSISTENT", "INCONSISTENT");
}

JudgeResult judge_step(const std::string& image_path, int step, const std::string& think, llm::ChatEndpoint* vlm) {
  llm::ChatMessage msg{"user",
                       prompts::fill(prompts::kStepJudge, {{"step", std::to_string(step)}, {"think", think}}),
                       {image_path}};
  return ask(vlm, std::move(msg), "SUPPORTED", "CONTRADICTED");
}

}  // namespace mmagent::judge
