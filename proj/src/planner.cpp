#include "mmagent/planner.hpp"

#include <algorithm>
#include <cctype>
#include <regex>

#include "mmagent/code_ops.hpp"

namespace mmagent::planner {

namespace {

constexpr int kMinSteps = 2;
constexpr int kMaxSteps = 10;

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

char lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

[[noreturn]] void fail(PlanErrorKind k, int step, const std::string& msg) {
  std::string prefix = std::string(plan_error_str(k));
  if (step > 0) prefix += " at step " + std::to_string(step);
  throw PlanError(k, step, prefix + ": " + msg);
}

PlanStep step_from_json(const json& j, int index) {
  if (!j.is_object()) fail(PlanErrorKind::BadStepShape, index, "step is not an object");
  for (const auto& [k, _] : j.items())
    if (k != "description" && k != "tool_name" && k != "parameters") fail(PlanErrorKind::BadStepShape, index, "unknown key " + k);
  for (const char* k : {"description", "tool_name", "parameters"})
    if (!j.contains(k)) fail(PlanErrorKind::BadStepShape, index, std::string("missing key ") + k);
  if (!j["description"].is_string() || is_blank(j["description"].get_ref<const std::string&>()))
    fail(PlanErrorKind::BadStepShape, index, "description must be a non-empty string");
  if (!j["tool_name"].is_string()) fail(PlanErrorKind::BadStepShape, index, "tool_name must be a string");
  if (!j["parameters"].is_object()) fail(PlanErrorKind::BadStepShape, index, "parameters must be an object");
  const auto& name = j["tool_name"].get_ref<const std::string&>();
  auto tool = plan_tool_from_str(name);
  if (!tool) fail(PlanErrorKind::UnknownTool, index, "tool_name \"" + name + "\"");
  PlanStep s;
  s.index = index;
  s.description = j["description"].get<std::string>();
  s.tool = *tool;
  s.parameters = j["parameters"];
  return s;
}

// Bracket spans that mention "step" as a word.
const std::regex& step_word_re() {
  static const std::regex re(R"(\bstep\b)", std::regex::icase);
  return re;
}

const std::regex& step_ref_re() {
  static const std::regex re(R"(\bstep\s+([0-9]{1,6})\b)", std::regex::icase);
  return re;
}

void scan_field(const std::string& text, int host_step, const std::string& field, std::vector<Placeholder>& out) {
  std::size_t pos = 0;
  while ((pos = text.find('[', pos)) != std::string::npos) {
    const auto close = text.find(']', pos + 1);
    const auto next_open = text.find('[', pos + 1);
    if (close == std::string::npos || (next_open != std::string::npos && next_open < close)) {
      const auto end = next_open == std::string::npos ? text.size() : next_open;
      const std::string tail = text.substr(pos + 1, end - pos - 1);
      if (std::regex_search(tail, step_word_re()))
        fail(PlanErrorKind::MalformedPlaceholder, host_step, "unclosed step reference in " + field);
      pos = end;
      continue;
    }
    const std::string inner = text.substr(pos + 1, close - pos - 1);
    const auto words = std::distance(std::sregex_iterator(inner.begin(), inner.end(), step_word_re()), std::sregex_iterator());
    if (words > 0) {
      std::smatch m;
      const auto refs = std::distance(std::sregex_iterator(inner.begin(), inner.end(), step_ref_re()), std::sregex_iterator());
      if (words != 1 || refs != 1 || !std::regex_search(inner, m, step_ref_re()))
        fail(PlanErrorKind::MalformedPlaceholder, host_step, "\"[" + inner + "]\" in " + field);
      Placeholder p;
      p.raw = text.substr(pos, close - pos + 1);
      p.referenced_step = std::stoi(m[1].str());
      p.host_step = host_step;
      p.host_field = field;
      p.offset = pos;
      out.push_back(std::move(p));
    }
    pos = close + 1;
  }
}

std::string sanitize_free_text(std::string s) {
  std::replace(s.begin(), s.end(), '[', '(');
  std::replace(s.begin(), s.end(), ']', ')');
  return s;
}

std::string capitalize(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

std::string lower_str(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = lower(c);
  return out;
}

// Text a step's value may have been copied from: the entries answering it.
std::string observation_text(const protocol::Observation& obs, const std::string& value) {
  bool grouped = false;
  for (const auto& e : obs.entries) {
    if (const auto* s = std::get_if<protocol::SearchEntry>(&e); s && s->group == value) grouped = true;
  }
  std::string out;
  for (const auto& e : obs.entries) {
    if (const auto* s = std::get_if<protocol::SearchEntry>(&e)) {
      if (grouped && s->group != value) continue;
      out += s->title + "\n" + s->link + "\n" + s->snippet + "\n" + s->image + "\n";
    } else if (const auto* p = std::get_if<protocol::PageEntry>(&e)) {
      out += p->content + "\n";
    } else if (const auto* c = std::get_if<protocol::CodeEntry>(&e)) {
      out += c->stdout_text + "\n";
    }
  }
  return out;
}

struct Draft {
  PlanTool tool;
  std::string value;
  std::string code_description;
  std::string source;  // lowercased observation text this step produced
};

std::string step_description(const Draft& d, const std::string& value) {
  switch (d.tool) {
    case PlanTool::ImageSearch: return "Run a reverse image search on " + value + " to identify its subject.";
    case PlanTool::TextSearch: return "Search for: " + value;
    case PlanTool::WebVisit: return "Visit " + value + " and extract the relevant details.";
    case PlanTool::None: return d.code_description;
  }
  return d.code_description;
}

}  // namespace

std::string_view plan_tool_str(PlanTool t) {
  switch (t) {
    case PlanTool::ImageSearch: return "image_search";
    case PlanTool::TextSearch: return "text_search";
    case PlanTool::WebVisit: return "web_visit";
    case PlanTool::None: return "none";
  }
  return "none";
}

std::optional<PlanTool> plan_tool_from_str(std::string_view s) {
  for (auto t : {PlanTool::ImageSearch, PlanTool::TextSearch, PlanTool::WebVisit, PlanTool::None})
    if (plan_tool_str(t) == s) return t;
  return std::nullopt;
}

std::string_view plan_tool_param(PlanTool t) {
  switch (t) {
    case PlanTool::ImageSearch: return "image_path";
    case PlanTool::TextSearch: return "query";
    case PlanTool::WebVisit: return "url";
    case PlanTool::None: return "";
  }
  return "";
}

std::string_view plan_error_str(PlanErrorKind k) {
  switch (k) {
    case PlanErrorKind::NotJsonArray: return "NotJsonArray";
    case PlanErrorKind::BadStepShape: return "BadStepShape";
    case PlanErrorKind::UnknownTool: return "UnknownTool";
    case PlanErrorKind::ExtraProse: return "ExtraProse";
    case PlanErrorKind::MalformedPlaceholder: return "MalformedPlaceholder";
    case PlanErrorKind::ForwardReference: return "ForwardReference";
    case PlanErrorKind::MissingFinalReasoningStep: return "MissingFinalReasoningStep";
    case PlanErrorKind::StepCountOutOfRange: return "StepCountOutOfRange";
    case PlanErrorKind::ToolParamMismatch: return "ToolParamMismatch";
    case PlanErrorKind::UnmappableTurn: return "UnmappableTurn";
  }
  return "";
}

Plan parse_plan(std::string_view text) {
  const std::string body = trim(text);
  json arr = json::parse(body, nullptr, false);
  if (arr.is_discarded()) {
    const auto open = body.find('[');
    const auto close = body.rfind(']');
    if (open != std::string::npos && close != std::string::npos && close > open) {
      json inner = json::parse(body.substr(open, close - open + 1), nullptr, false);
      if (!inner.is_discarded() && inner.is_array())
        fail(PlanErrorKind::ExtraProse, 0, "text outside the JSON array");
    }
    fail(PlanErrorKind::NotJsonArray, 0, "output is not valid JSON");
  }
  if (!arr.is_array()) fail(PlanErrorKind::NotJsonArray, 0, "top-level value is not an array");
  Plan plan;
  int index = 0;
  for (const auto& j : arr) plan.steps.push_back(step_from_json(j, ++index));
  return plan;
}

std::string serialize_plan(const Plan& p) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& s : p.steps) {
    nlohmann::ordered_json o;
    o["description"] = s.description;
    o["tool_name"] = plan_tool_str(s.tool);
    o["parameters"] = nlohmann::ordered_json::parse(s.parameters.dump());
    arr.push_back(std::move(o));
  }
  return arr.dump(-1, ' ', false, nlohmann::ordered_json::error_handler_t::replace);
}

std::vector<Placeholder> extract_placeholders(const Plan& plan) {
  std::vector<Placeholder> out;
  for (const auto& s : plan.steps) {
    scan_field(s.description, s.index, "description", out);
    for (const auto& [k, v] : s.parameters.items())
      if (v.is_string()) scan_field(v.get_ref<const std::string&>(), s.index, "parameters." + k, out);
  }
  return out;
}

DependencyGraph validate_plan(const Plan& plan, const ValidateOptions& opt) {
  const int n = static_cast<int>(plan.steps.size());
  if (opt.strict_step_bound ? (n < kMinSteps || n > kMaxSteps) : n < 1)
    fail(PlanErrorKind::StepCountOutOfRange, 0, std::to_string(n) + " steps");
  for (const auto& s : plan.steps) {
    const auto key = plan_tool_param(s.tool);
    if (s.tool == PlanTool::None) {
      if (!s.parameters.empty()) fail(PlanErrorKind::ToolParamMismatch, s.index, "none step takes no parameters");
      continue;
    }
    if (s.parameters.size() != 1 || !s.parameters.contains(key))
      fail(PlanErrorKind::ToolParamMismatch, s.index,
           std::string(plan_tool_str(s.tool)) + " takes exactly {\"" + std::string(key) + "\"}");
    const auto& v = s.parameters[std::string(key)];
    if (!v.is_string() || is_blank(v.get_ref<const std::string&>()))
      fail(PlanErrorKind::ToolParamMismatch, s.index, std::string(key) + " must be a non-empty string");
  }
  if (plan.steps.back().tool != PlanTool::None)
    fail(PlanErrorKind::MissingFinalReasoningStep, n, "last step must use tool_name none");

  DependencyGraph g;
  for (const auto& p : extract_placeholders(plan)) {
    if (p.referenced_step < 1)
      fail(PlanErrorKind::MalformedPlaceholder, p.host_step, p.raw + " references no step");
    if (p.referenced_step >= p.host_step)
      fail(PlanErrorKind::ForwardReference, p.host_step,
           p.raw + " in step " + std::to_string(p.host_step) + " is not an earlier step");
    g.edges.emplace_back(p.host_step, p.referenced_step);
  }
  std::sort(g.edges.begin(), g.edges.end());
  g.edges.erase(std::unique(g.edges.begin(), g.edges.end()), g.edges.end());

  // Kahn with the lowest ready index first; backward edges make this the step order.
  std::vector<int> indeg(static_cast<std::size_t>(n) + 1, 0);
  for (const auto& [j, i] : g.edges) indeg[static_cast<std::size_t>(j)]++;
  std::vector<bool> done(static_cast<std::size_t>(n) + 1, false);
  for (int round = 0; round < n; ++round) {
    int pick = 0;
    for (int s = 1; s <= n && !pick; ++s)
      if (!done[static_cast<std::size_t>(s)] && indeg[static_cast<std::size_t>(s)] == 0) pick = s;
    done[static_cast<std::size_t>(pick)] = true;
    g.order.push_back(pick);
    for (const auto& [j, i] : g.edges)
      if (i == pick) indeg[static_cast<std::size_t>(j)]--;
  }
  return g;
}

std::pair<std::size_t, std::size_t> longest_common_span(std::string_view value, std::string_view source) {
  const std::size_t n = value.size(), m = source.size();
  if (n == 0 || m == 0) return {0, 0};
  // best_end[i]: longest common substring ending at value[i].
  std::vector<std::size_t> best_end(n, 0), prev(m + 1, 0), cur(m + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const char a = lower(value[i]);
    for (std::size_t j = 0; j < m; ++j) {
      cur[j + 1] = (a == lower(source[j]) && a != '\x01') ? prev[j] + 1 : 0;
      best_end[i] = std::max(best_end[i], cur[j + 1]);
    }
    std::swap(prev, cur);
  }
  std::pair<std::size_t, std::size_t> best{0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    if (best_end[i] == 0) continue;
    std::size_t a = i + 1 - best_end[i], b = i + 1;
    while (a < b && !(is_alnum(value[a]) && (a == 0 || !is_alnum(value[a - 1])))) ++a;
    while (b > a && !(is_alnum(value[b - 1]) && (b == n || !is_alnum(value[b])))) --b;
    if (b - a > best.second) best = {a, b - a};
  }
  return best;
}

Plan trajectory_to_plan(const orchestrator::Trajectory& t, const ConvertOptions& opt) {
  std::vector<Draft> drafts;
  const auto hist = t.history();
  for (const auto* turn : hist) {
    const auto* call = turn->seg.tool_call();
    if (!call) continue;
    if (call->name == protocol::ToolName::Code) {
      if (opt.strict)
        fail(PlanErrorKind::UnmappableTurn, static_cast<int>(drafts.size()) + 1, "code turn has no planner tool");
      Draft d{PlanTool::None, "", "", ""};
      d.code_description =
          capitalize(code_ops::describe_operations(code_ops::detect_operations(call->code))) + " to inspect the relevant region.";
      if (turn->observation) d.source = lower_str(observation_text(*turn->observation, ""));
      drafts.push_back(std::move(d));
      continue;
    }
    PlanTool tool = call->name == protocol::ToolName::ImageSearch ? PlanTool::ImageSearch
                    : call->name == protocol::ToolName::TextSearch ? PlanTool::TextSearch
                                                                   : PlanTool::WebVisit;
    for (const auto& v : call->values) {
      Draft d{tool, v, "", ""};
      if (turn->observation) d.source = lower_str(observation_text(*turn->observation, v));
      drafts.push_back(std::move(d));
    }
  }

  const std::string question = lower_str(t.task.question);
  Plan plan;
  for (std::size_t k = 0; k < drafts.size(); ++k) {
    const auto& d = drafts[k];
    PlanStep step;
    step.index = static_cast<int>(k) + 1;
    step.tool = d.tool;
    if (d.tool == PlanTool::None) {
      step.description = d.code_description;
      plan.steps.push_back(std::move(step));
      continue;
    }
    // Masked copy: inserted placeholders never match again.
    std::string value = d.value, masked = d.value;
    for (int round = 0; round < 8; ++round) {
      std::size_t best_step = 0, best_off = 0, best_len = 0;
      for (std::size_t s = 0; s < k; ++s) {
        auto [off, len] = longest_common_span(masked, drafts[s].source);
        if (len < opt.min_match_chars || len <= best_len) continue;
        if (question.find(lower_str(std::string_view(masked).substr(off, len))) != std::string::npos) continue;
        best_step = s + 1, best_off = off, best_len = len;
      }
      if (best_len == 0) break;
      const std::string ph = "[Result from Step " + std::to_string(best_step) + "]";
      value.replace(best_off, best_len, ph);
      masked.replace(best_off, best_len, std::string(ph.size(), '\x01'));
    }
    step.parameters = json::object({{std::string(plan_tool_param(d.tool)), value}});
    step.description = step_description(d, value);
    plan.steps.push_back(std::move(step));
  }

  PlanStep last;
  last.index = static_cast<int>(plan.steps.size()) + 1;
  last.tool = PlanTool::None;
  last.description = "Reason over the gathered results and verify the final answer.";
  if (!hist.empty() && !is_blank(hist.back()->seg.think))
    last.description += " " + sanitize_free_text(first_sentence(hist.back()->seg.think));
  plan.steps.push_back(std::move(last));

  validate_plan(plan);
  return plan;
}

curation::PlanSample make_plan_sample(const orchestrator::Trajectory& t, const ConvertOptions& opt) {
  return {t.task, serialize_plan(trajectory_to_plan(t, opt))};
}

void write_plan_samples(const std::filesystem::path& path, const std::vector<curation::PlanSample>& samples) {
  std::vector<json> rows;
  rows.reserve(samples.size());
  for (const auto& s : samples)
    rows.push_back({{"id", s.task.id}, {"question", s.task.question}, {"images", s.task.images},
                    {"source", s.task.source}, {"plan_canonical_json", s.plan_json}});
  write_jsonl(path, rows);
}

std::vector<curation::PlanSample> read_plan_samples(const std::filesystem::path& path) {
  std::vector<curation::PlanSample> out;
  for (const auto& row : read_jsonl(path)) {
    try {
      curation::PlanSample s;
      s.task = orchestrator::task_from_json(row);
      s.plan_json = row.at("plan_canonical_json").get<std::string>();
      out.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw DataError(std::string("bad plan sample: ") + e.what());
    }
  }
  return out;
}

}  // namespace mmagent::planner
