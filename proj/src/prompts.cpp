#include "mmagent/prompts.hpp"

#include "mmagent/util.hpp"

namespace mmagent::prompts {

using protocol::ToolName;

namespace {

std::string_view tool_description(ToolName t) {
  switch (t) {
    case ToolName::ImageSearch:
      return "image_search: reverse image search. Each listed image is sent to a visual search engine and the "
             "matching pages come back.";
    case ToolName::TextSearch:
      return "text_search: web search. Each query runs against a search engine and returns ranked results with "
             "snippets.";
    case ToolName::WebVisit:
      return "web_visit: page reader. Each URL is downloaded and its main text returned, condensed when long.";
    case ToolName::Code:
      return "code: Python execution. Put Python inside <code>...</code> to transform images (crop, resize, rotate, "
             "adjust color, denoise, sharpen) and look at the output.";
  }
  return "";
}

std::string_view tool_format_option(ToolName t) {
  switch (t) {
    case ToolName::ImageSearch:
      return R"(- <think>...</think><tool_call>{"name": "image_search", "arguments": {"image_paths": ["crop_1.png", "image_1.png"]}}</tool_call>)";
    case ToolName::TextSearch:
      return R"(- <think>...</think><tool_call>{"name": "text_search", "arguments": {"queries": ["first query", "second query"]}}</tool_call>)";
    case ToolName::WebVisit:
      return R"(- <think>...</think><tool_call>{"name": "web_visit", "arguments": {"urls": ["https://example.com/a", "https://example.com/b"]}}</tool_call>)";
    case ToolName::Code:
      return R"(- <think>...</think><tool_call>{"name": "code", "arguments": {"code": "python source"}}</tool_call>)";
  }
  return "";
}

constexpr std::string_view kPlannerPrompt =
    R"(You turn a question, possibly with an image, into an executable step-by-step plan.

Return a JSON array and nothing else: no surrounding text, no markdown fences. Each element is an object with exactly these keys:
"description": what the step does, stated precisely.
"tool_name": the tool the step uses.
"parameters": the tool arguments as a JSON object; {} for steps without a tool.

Tools and their parameters:
image_search {"image_path": "<path>"}: find out what an image shows.
text_search {"query": "<query>"}: retrieve facts from a search engine.
web_visit {"url": "<URL>"}: read a page to pull out or confirm details.
none {}: reasoning, comparison or summarizing without a tool.

A step that needs the output of an earlier step names it with a bracketed placeholder such as [Name found in Step 2], in its description and in its parameters alike. Only earlier steps may be referenced.

Plan size: 2 to 10 steps. The last step uses "none" and checks or concludes the answer.

Valid tool_name values (must match exactly): "image_search", "text_search", "web_visit", "none".

Sample element:
{"description": "Run a reverse image search on the photo to find the building's name.", "tool_name": "image_search", "parameters": {"image_path": "photo_1.png"}})";

}  // namespace

std::string tool_system_prompt(const std::vector<ToolName>& tools) {
  std::string out = "Use the attached image to answer the question. Available tools:\n\n";
  int n = 0;
  for (auto t : tools) out += std::to_string(++n) + ". " + std::string(tool_description(t)) + "\n";
  out += "\nTool output (search hits, page text, code results) comes back wrapped in "
         "<observation>...</observation>.\n";
  out += "Each reply takes exactly one of these forms:\n";
  for (auto t : tools) out += std::string(tool_format_option(t)) + "\n";
  out += "- <think>...</think><answer>final answer</answer>\n\n";
  out += "Every reply must begin with your reasoning inside <think>...</think>.";
  return out;
}

std::string planner_system_prompt() { return std::string(kPlannerPrompt); }

std::string direct_system_prompt() {
  return "Use the attached image and your own knowledge to answer the question. No tools are available.\n"
         "Reply format:\n- <think>...</think><answer>final answer</answer>\n\n"
         "Every reply must begin with your reasoning inside <think>...</think>.";
}

std::string general_nonthink_prompt() { return "Use the attached image to answer the question. Give the answer directly."; }

const std::string_view kAnswerJudge =
    R"(You are grading a question-answering system. Decide whether the candidate answer agrees with the ground-truth answer. Paraphrases, equivalent units and extra supporting detail count as agreement; a different or contradicting fact does not.

Question: {question}
Ground-truth answer: {gold}
Candidate answer: {answer}

Reply with exactly one word: AGREE or DISAGREE.)";

const std::string_view kConsistencyJudge =
    R"(Compare the final reasoning of an assistant with the answer it gave. Decide whether the answer follows from and agrees with the reasoning.

Final reasoning: {think}
Answer: {answer}

Reply with exactly one word: CONSISTENT or INCONSISTENT.)";

const std::string_view kStepJudge =
    R"(The attached image was produced by an image operation. The assistant then wrote the reasoning below about it. Does the image actually show what the reasoning claims? A blank, empty or unrelated image contradicts any claim of having found the object.

Step: {step}
Reasoning: {think}

Reply with exactly one word: SUPPORTED or CONTRADICTED.)";

const std::string_view kSummarizer =
    R"(Summarize the following web page. Keep the facts, names, numbers and dates; drop navigation, ads and boilerplate. Reply with the summary only.

URL: {url}

CONTENT:
{content})";

const std::string_view kSeedQuestion =
    R"(Write one factual question about the entity below whose answer is a short, uniquely verifiable fact stated in the text. The question must mention the entity by name. The answer must be at most {max_words} words.
ENTITY: {entity}
TEXT: {intro}
Reply as JSON: {"question": "...", "answer": "..."})";

const std::string_view kSeedRetrySuffix =
    "\nYour previous answer was too long. The answer must be at most {max_words} words.";

const std::string_view kUniqueness =
    R"(Classify the answer below into one category: concrete_unique (a single concrete identifiable referent), generic (a generic term), platform_or_outlet (a platform, website or media outlet), abstract_concept, ambiguous.
ANSWER: {answer}
Reply as JSON: {"category": "..."})";

const std::string_view kRelation =
    R"(From the text, extract how CURRENT relates to TARGET as a concise relation phrase, and a short summary of the distinctive properties of TARGET.
CURRENT: {current}
TARGET: {target}
TEXT: {context}
Reply as JSON: {"relation": "...", "property": "..."})";

const std::string_view kRewrite =
    R"(Rewrite the question so that it no longer names ENTITY. Refer to ENTITY indirectly through its relation to TARGET, optionally adding a short descriptive clue. Keep the answer unchanged. If the relation and clue do not identify ENTITY uniquely, set "valid" to false.
QUESTION: {question}
ENTITY: {entity}
RELATION: {relation}
TARGET: {target}
CLUE: {property}
Reply as JSON: {"question": "...", "valid": true})";

const std::string_view kChecker =
    R"(Check the question-answer pair. "unique": the answer is the only correct answer to the question. "interpretable": the question is clear and answerable.
QUESTION: {question}
ANSWER: {answer}
Reply as JSON: {"unique": true, "interpretable": true})";

const std::string_view kVisualRewrite =
    R"(Rewrite the question so that ENTITY is referred to through the attached picture, for example "the person in this picture". Do not mention ENTITY by name. Keep the answer unchanged.
QUESTION: {question}
ENTITY: {entity}
PROPERTIES: {property}
Reply as JSON: {"question": "..."})";

const std::string& pipeline_version() {
  static const std::string kVersion = [] {
    std::string all;
    for (auto p : {kAnswerJudge, kConsistencyJudge, kStepJudge, kSummarizer, kSeedQuestion, kSeedRetrySuffix,
                   kUniqueness, kRelation, kRewrite, kChecker, kVisualRewrite}) {
      all += p;
      all += '\x1f';
    }
    return "v1-" + sha256_hex(all).substr(0, 8);
  }();
  return kVersion;
}

std::string fill(std::string_view tmpl, const std::map<std::string, std::string>& vars) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      auto close = tmpl.find('}', i);
      if (close != std::string_view::npos) {
        auto it = vars.find(std::string(tmpl.substr(i + 1, close - i - 1)));
        if (it != vars.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out += tmpl[i++];
  }
  return out;
}

}  // namespace mmagent::prompts
