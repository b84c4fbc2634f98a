#include <algorithm>
#include <cctype>
#include <regex>

#include "mmagent/querygen.hpp"

namespace mmagent::querygen {

namespace {

// Value after "KEY: " up to the end of its line; TEXT runs to the reply line.
std::string field(const std::string& prompt, const std::string& key) {
  const std::string tag = key + ": ";
  auto pos = starts_with(prompt, tag) ? 0 : prompt.find("\n" + tag);
  if (pos == std::string::npos) return "";
  pos += (pos == 0 ? 0 : 1) + tag.size();
  auto end = key == "TEXT" ? prompt.find("\nReply as JSON", pos) : prompt.find('\n', pos);
  return trim(prompt.substr(pos, end == std::string::npos ? std::string::npos : end - pos));
}

std::string reply_for(const std::string& prompt) {
  if (starts_with(prompt, "Write one factual question")) {
    static const std::regex year(R"(\b(1[0-9]{3}|20[0-9]{2})\b)");
    const auto text = field(prompt, "TEXT");
    std::smatch m;
    if (!std::regex_search(text, m, year)) return "I cannot find a suitable fact.";
    return dump_json({{"question", "In which year did the defining event of " + field(prompt, "ENTITY") + " take place?"},
                      {"answer", m[1].str()}});
  }
  if (starts_with(prompt, "Classify the answer")) {
    const auto a = field(prompt, "ANSWER");
    const bool concrete = std::any_of(a.begin(), a.end(), [](char c) {
      return std::isdigit(static_cast<unsigned char>(c)) || std::isupper(static_cast<unsigned char>(c));
    });
    return dump_json({{"category", concrete ? "concrete_unique" : "generic"}});
  }
  if (starts_with(prompt, "From the text, extract")) return dump_json({{"relation", "connected to"}, {"property", ""}});
  if (starts_with(prompt, "Check the question-answer pair"))
    return dump_json({{"unique", true}, {"interpretable", true}});
  if (starts_with(prompt, "Rewrite the question")) {
    const auto q = field(prompt, "QUESTION");
    const auto entity = field(prompt, "ENTITY");
    const bool visual = prompt.find("attached picture") != std::string::npos;
    const std::string ref = visual ? "the subject of this picture" : "the entity connected to " + field(prompt, "TARGET");
    auto out = replace_all_ci(q, entity, ref);
    if (visual) return dump_json({{"question", out}});
    return dump_json({{"question", out}, {"valid", contains_ci(q, entity)}});
  }
  return "";
}

}  // namespace

llm::ChatResponse OfflineWalkModel::complete(const llm::ChatRequest& req) {
  llm::ChatResponse resp;
  if (!req.messages.empty()) resp.content = reply_for(req.messages.back().content);
  resp.finish_reason = "stop";
  return resp;
}

}  // namespace mmagent::querygen
