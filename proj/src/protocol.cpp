#include "mmagent/protocol.hpp"

#include <array>
#include <set>
#include <stdexcept>

namespace mmagent::protocol {

namespace {

enum class SpanKind { ToolCall, Answer, Code };

struct TagPair {
  SpanKind kind;
  std::string_view open;
  std::string_view close;
};

constexpr std::array<TagPair, 3> kActionTags = {{
    {SpanKind::ToolCall, kToolCallOpen, kToolCallClose},
    {SpanKind::Answer, kAnswerOpen, kAnswerClose},
    {SpanKind::Code, kCodeOpen, kCodeClose},
}};

struct Opener {
  std::size_t pos = std::string_view::npos;
  const TagPair* tag = nullptr;
};

Opener earliest_opener(std::string_view text, std::size_t from) {
  Opener best;
  for (const auto& tag : kActionTags) {
    auto p = text.find(tag.open, from);
    if (p < best.pos) {
      best.pos = p;
      best.tag = &tag;
    }
  }
  return best;
}

TurnSegments malformed(std::string_view raw, std::string think, MalformedReason r, std::string detail) {
  TurnSegments seg;
  seg.raw = std::string(raw);
  seg.think = std::move(think);
  seg.action = Malformed{r, std::move(detail)};
  return seg;
}

// Code blocks often arrive wrapped in markdown fences; keep only the body.
std::string strip_code_fences(std::string code) {
  std::string t = trim(code);
  if (!starts_with(t, "```")) return t;
  auto nl = t.find('\n');
  if (nl == std::string::npos) return t;
  auto end = t.rfind("```");
  if (end == std::string::npos || end <= nl) return trim(t.substr(nl + 1));
  return trim(t.substr(nl + 1, end - nl - 1));
}

Action parse_tool_payload(std::string_view payload) {
  auto j = json::parse(payload, nullptr, false);
  if (j.is_discarded()) return Malformed{MalformedReason::BadJson, "payload is not valid JSON"};
  if (!j.is_object()) return Malformed{MalformedReason::BadJson, "payload is not a JSON object"};
  for (const auto& [key, _] : j.items()) {
    if (key != "name" && key != "arguments")
      return Malformed{MalformedReason::BadJson, "unexpected key '" + key + "'"};
  }
  if (!j.contains("name") || !j["name"].is_string())
    return Malformed{MalformedReason::BadJson, "missing string 'name'"};
  const auto name = j["name"].get<std::string>();
  auto tool = tool_from_str(name);
  if (!tool) return Malformed{MalformedReason::UnknownTool, "unknown tool '" + name + "'"};
  if (!j.contains("arguments") || !j["arguments"].is_object())
    return Malformed{MalformedReason::BadArgKeys, "missing 'arguments' object"};
  const auto& args = j["arguments"];
  const std::string key(tool_arg_key(*tool));
  if (args.size() != 1 || !args.contains(key))
    return Malformed{MalformedReason::BadArgKeys, name + " expects exactly '" + key + "'"};
  ToolCall call;
  call.name = *tool;
  const auto& v = args[key];
  if (*tool == ToolName::Code) {
    if (!v.is_string()) return Malformed{MalformedReason::BadArgKeys, "'code' must be a string"};
    call.code = v.get<std::string>();
  } else {
    if (!v.is_array()) return Malformed{MalformedReason::BadArgKeys, "'" + key + "' must be a list"};
    for (const auto& item : v) {
      if (!item.is_string())
        return Malformed{MalformedReason::BadArgKeys, "'" + key + "' must hold strings"};
      call.values.push_back(item.get<std::string>());
    }
  }
  if (auto why = validate_tool_call(call)) return Malformed{MalformedReason::BadArgKeys, *why};
  return call;
}

}  // namespace

std::string_view tool_name_str(ToolName t) {
  switch (t) {
    case ToolName::ImageSearch: return "image_search";
    case ToolName::TextSearch: return "text_search";
    case ToolName::WebVisit: return "web_visit";
    case ToolName::Code: return "code";
  }
  return "";
}

std::optional<ToolName> tool_from_str(std::string_view s) {
  for (auto t : kAllTools)
    if (tool_name_str(t) == s) return t;
  return std::nullopt;
}

std::string_view tool_arg_key(ToolName t) {
  switch (t) {
    case ToolName::ImageSearch: return "image_paths";
    case ToolName::TextSearch: return "queries";
    case ToolName::WebVisit: return "urls";
    case ToolName::Code: return "code";
  }
  return "";
}

std::string_view malformed_reason_str(MalformedReason r) {
  switch (r) {
    case MalformedReason::MissingThink: return "MissingThink";
    case MalformedReason::MultipleActions: return "MultipleActions";
    case MalformedReason::BadJson: return "BadJson";
    case MalformedReason::UnknownTool: return "UnknownTool";
    case MalformedReason::BadArgKeys: return "BadArgKeys";
    case MalformedReason::MissingAction: return "MissingAction";
  }
  return "";
}

std::optional<MalformedReason> malformed_reason_from_str(std::string_view s) {
  for (auto r : {MalformedReason::MissingThink, MalformedReason::MultipleActions, MalformedReason::BadJson,
                 MalformedReason::UnknownTool, MalformedReason::BadArgKeys, MalformedReason::MissingAction})
    if (malformed_reason_str(r) == s) return r;
  return std::nullopt;
}

std::optional<std::string> validate_tool_call(const ToolCall& call) {
  if (call.name == ToolName::Code) {
    if (is_blank(call.code)) return "code must be non-empty";
    if (!call.values.empty()) return "code tool takes no list arguments";
    return std::nullopt;
  }
  if (call.values.empty()) return std::string(tool_arg_key(call.name)) + " must be non-empty";
  if (!call.code.empty()) return "only the code tool takes code";
  return std::nullopt;
}

TurnSegments parse_turn(std::string_view text) {
  const auto think_open = text.find(kThinkOpen);
  const auto first_action = earliest_opener(text, 0);
  if (think_open == std::string_view::npos)
    return malformed(text, "", MalformedReason::MissingThink, "no think-span");
  if (first_action.pos < think_open)
    return malformed(text, "", MalformedReason::MissingThink, "action precedes think-span");
  const auto think_close = text.find(kThinkClose, think_open + kThinkOpen.size());
  if (think_close == std::string_view::npos)
    return malformed(text, "", MalformedReason::MissingThink, "unterminated think-span");
  std::string think = trim(text.substr(think_open + kThinkOpen.size(), think_close - think_open - kThinkOpen.size()));
  if (think.empty()) return malformed(text, "", MalformedReason::MissingThink, "empty think-span");

  struct Span {
    const TagPair* tag;
    std::string_view body;
    bool closed;
  };
  std::vector<Span> spans;
  std::size_t pos = think_close + kThinkClose.size();
  while (true) {
    auto op = earliest_opener(text, pos);
    if (op.pos == std::string_view::npos) break;
    const auto body_start = op.pos + op.tag->open.size();
    const auto close = text.find(op.tag->close, body_start);
    if (close == std::string_view::npos) {
      spans.push_back({op.tag, text.substr(body_start), false});
      break;
    }
    spans.push_back({op.tag, text.substr(body_start, close - body_start), true});
    pos = close + op.tag->close.size();
  }

  if (spans.size() >= 2)
    return malformed(text, think, MalformedReason::MultipleActions,
                     std::to_string(spans.size()) + " actions in one turn");
  if (spans.empty() || !spans[0].closed) {
    std::string detail = spans.empty() ? "no action after think-span"
                                       : "unterminated " + std::string(spans[0].tag->open);
    return malformed(text, think, MalformedReason::MissingAction, detail);
  }

  TurnSegments seg;
  seg.raw = std::string(text);
  seg.think = std::move(think);
  const auto& span = spans[0];
  switch (span.tag->kind) {
    case SpanKind::Answer:
      seg.action = FinalAnswer{trim(span.body)};
      break;
    case SpanKind::Code: {
      ToolCall call;
      call.name = ToolName::Code;
      call.code = strip_code_fences(std::string(span.body));
      if (call.code.empty())
        seg.action = Malformed{MalformedReason::BadArgKeys, "empty code block"};
      else
        seg.action = std::move(call);
      break;
    }
    case SpanKind::ToolCall:
      seg.action = parse_tool_payload(span.body);
      break;
  }
  return seg;
}

std::string tool_call_json(const ToolCall& call) {
  auto quote = [](const std::string& s) {
    // "</" is escaped so a payload can never contain a closing tag.
    return replace_all(dump_json(json(s)), "</", "<\\/");
  };
  std::string out = "{\"name\": ";
  out += quote(std::string(tool_name_str(call.name)));
  out += ", \"arguments\": {\"";
  out += tool_arg_key(call.name);
  out += "\": ";
  if (call.name == ToolName::Code) {
    out += quote(call.code);
  } else {
    out += "[";
    for (std::size_t i = 0; i < call.values.size(); ++i) {
      if (i) out += ", ";
      out += quote(call.values[i]);
    }
    out += "]";
  }
  out += "}}";
  return out;
}

std::string serialize_turn(const TurnSegments& seg) {
  if (seg.is_malformed()) throw std::invalid_argument("cannot serialize a malformed turn");
  std::string out;
  out += kThinkOpen;
  out += seg.think;
  out += kThinkClose;
  if (const auto* ans = seg.answer()) {
    out += kAnswerOpen;
    out += ans->text;
    out += kAnswerClose;
  } else if (const auto* call = seg.tool_call()) {
    out += kToolCallOpen;
    out += tool_call_json(*call);
    out += kToolCallClose;
  }
  return out;
}

StopDecision detect_stop(std::string_view buffer) {
  const auto think_open = buffer.find(kThinkOpen);
  const auto first_action = earliest_opener(buffer, 0);
  std::size_t start = 0;
  if (think_open != std::string_view::npos && think_open < first_action.pos) {
    const auto think_close = buffer.find(kThinkClose, think_open + kThinkOpen.size());
    if (think_close == std::string_view::npos) return {};
    start = think_close + kThinkClose.size();
  }
  const auto op = earliest_opener(buffer, start);
  if (op.pos == std::string_view::npos) return {};
  const auto close = buffer.find(op.tag->close, op.pos + op.tag->open.size());
  if (close == std::string_view::npos) return {};
  const auto kind = op.tag->kind == SpanKind::Answer ? StopDecision::Kind::StopAtAnswer
                                                     : StopDecision::Kind::StopAtToolCall;
  return {kind, close + op.tag->close.size()};
}

// ---- observations -----------------------------------------------------------

bool Observation::has_error() const {
  for (const auto& e : entries) {
    if (std::holds_alternative<ErrorEntry>(e)) return true;
    if (const auto* c = std::get_if<CodeEntry>(&e); c && c->exit_status != 0) return true;
  }
  return false;
}

const CodeEntry* Observation::code() const {
  for (const auto& e : entries)
    if (const auto* c = std::get_if<CodeEntry>(&e)) return c;
  return nullptr;
}

namespace {

const std::string* entry_group(const ObservationEntry& e) {
  if (const auto* s = std::get_if<SearchEntry>(&e)) return &s->group;
  if (const auto* s = std::get_if<ErrorEntry>(&e)) return &s->group;
  return nullptr;
}

std::string render_code(const CodeEntry& c) {
  std::vector<std::string> parts;
  if (!is_blank(c.stdout_text)) parts.push_back(trim(c.stdout_text));
  if (c.exit_status != 0) {
    if (!is_blank(c.stderr_text)) parts.push_back("stderr: " + trim(c.stderr_text));
    parts.push_back("exit status: " + std::to_string(c.exit_status) + (c.timed_out ? " (timeout)" : ""));
  }
  for (std::size_t i = 0; i < c.produced_images.size(); ++i)
    parts.push_back("<sub-image " + std::to_string(c.first_image_number + static_cast<int>(i)) + ">");
  if (parts.empty()) return "(no output)";
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += '\n';
    out += parts[i];
  }
  return out;
}

}  // namespace

std::string render_observation(const Observation& obs) {
  std::string body;
  if (obs.entries.empty()) {
    body = kNoResultsSentinel;
  } else {
    std::set<std::string> groups;
    for (const auto& e : obs.entries)
      if (const auto* g = entry_group(e); g && !g->empty()) groups.insert(*g);
    const bool show_groups = groups.size() > 1;
    const std::string* last_group = nullptr;
    int n = 0;
    for (const auto& e : obs.entries) {
      std::string block;
      const auto* g = entry_group(e);
      if (show_groups && g && (!last_group || *last_group != *g)) {
        block += "Results for \"" + *g + "\":\n";
        last_group = g;
      }
      if (const auto* s = std::get_if<SearchEntry>(&e)) {
        block += std::to_string(++n) + ". " + s->title + "\nlink: " + s->link;
        if (!s->image.empty()) block += "\nimage: " + s->image;
        if (!s->snippet.empty()) block += "\ntext: " + s->snippet;
      } else if (const auto* p = std::get_if<PageEntry>(&e)) {
        block += std::to_string(++n) + ". " + p->url + "\n" + (p->was_summarized ? "summary: " : "content: ") +
                 p->content;
      } else if (const auto* er = std::get_if<ErrorEntry>(&e)) {
        block += std::to_string(++n) + ". error: " + er->message;
      } else if (const auto* c = std::get_if<CodeEntry>(&e)) {
        block += render_code(*c);
      }
      if (!body.empty()) body += "\n\n";
      body += block;
    }
  }
  std::string out;
  out += kObservationOpen;
  out += '\n';
  out += body;
  out += '\n';
  out += kObservationClose;
  return out;
}

// ---- JSON storage -----------------------------------------------------------

json to_json(const ToolCall& call) {
  json args = json::object();
  if (call.name == ToolName::Code)
    args["code"] = call.code;
  else
    args[std::string(tool_arg_key(call.name))] = call.values;
  return json{{"name", tool_name_str(call.name)}, {"arguments", args}};
}

ToolCall tool_call_from_json(const json& j) {
  auto tool = tool_from_str(j.at("name").get<std::string>());
  if (!tool) throw DataError("unknown tool in stored record: " + j.at("name").dump());
  ToolCall call;
  call.name = *tool;
  const auto& args = j.at("arguments");
  if (call.name == ToolName::Code)
    call.code = args.at("code").get<std::string>();
  else
    call.values = args.at(std::string(tool_arg_key(call.name))).get<std::vector<std::string>>();
  return call;
}

json to_json(const TurnSegments& seg) {
  json action;
  if (const auto* call = seg.tool_call()) {
    action = to_json(*call);
    action["type"] = "tool_call";
  } else if (const auto* ans = seg.answer()) {
    action = {{"type", "answer"}, {"text", ans->text}};
  } else {
    const auto& m = std::get<Malformed>(seg.action);
    action = {{"type", "malformed"}, {"reason", malformed_reason_str(m.reason)}, {"detail", m.detail}};
  }
  return json{{"think", seg.think}, {"action", action}, {"raw", seg.raw}};
}

TurnSegments turn_from_json(const json& j) {
  TurnSegments seg;
  seg.think = j.at("think").get<std::string>();
  seg.raw = j.value("raw", "");
  const auto& a = j.at("action");
  const auto type = a.at("type").get<std::string>();
  if (type == "tool_call") {
    seg.action = tool_call_from_json(a);
  } else if (type == "answer") {
    seg.action = FinalAnswer{a.at("text").get<std::string>()};
  } else if (type == "malformed") {
    auto r = malformed_reason_from_str(a.at("reason").get<std::string>());
    if (!r) throw DataError("unknown malformed reason: " + a.at("reason").dump());
    seg.action = Malformed{*r, a.value("detail", "")};
  } else {
    throw DataError("unknown action type: " + type);
  }
  return seg;
}

json to_json(const Observation& obs) {
  json entries = json::array();
  for (const auto& e : obs.entries) {
    if (const auto* s = std::get_if<SearchEntry>(&e)) {
      entries.push_back({{"type", "search"}, {"title", s->title}, {"link", s->link}, {"snippet", s->snippet},
                         {"image", s->image}, {"group", s->group}});
    } else if (const auto* p = std::get_if<PageEntry>(&e)) {
      entries.push_back({{"type", "page"}, {"url", p->url}, {"content", p->content},
                         {"was_summarized", p->was_summarized}, {"was_truncated", p->was_truncated},
                         {"raw_length", p->raw_length}});
    } else if (const auto* c = std::get_if<CodeEntry>(&e)) {
      entries.push_back({{"type", "code"}, {"stdout", c->stdout_text}, {"stderr", c->stderr_text},
                         {"exit_status", c->exit_status}, {"produced_images", c->produced_images},
                         {"first_image_number", c->first_image_number}, {"wall_time_s", c->wall_time_s},
                         {"timed_out", c->timed_out}});
    } else if (const auto* er = std::get_if<ErrorEntry>(&e)) {
      entries.push_back({{"type", "error"}, {"message", er->message}, {"group", er->group}});
    }
  }
  return json{{"entries", entries}};
}

Observation observation_from_json(const json& j) {
  Observation obs;
  for (const auto& e : j.at("entries")) {
    const auto type = e.at("type").get<std::string>();
    if (type == "search") {
      obs.entries.emplace_back(SearchEntry{e.value("title", ""), e.value("link", ""), e.value("snippet", ""),
                                           e.value("image", ""), e.value("group", "")});
    } else if (type == "page") {
      obs.entries.emplace_back(PageEntry{e.value("url", ""), e.value("content", ""),
                                         e.value("was_summarized", false), e.value("was_truncated", false),
                                         e.value("raw_length", std::size_t{0})});
    } else if (type == "code") {
      CodeEntry c;
      c.stdout_text = e.value("stdout", "");
      c.stderr_text = e.value("stderr", "");
      c.exit_status = e.value("exit_status", 0);
      c.produced_images = e.value("produced_images", std::vector<std::string>{});
      c.first_image_number = e.value("first_image_number", 1);
      c.wall_time_s = e.value("wall_time_s", 0.0);
      c.timed_out = e.value("timed_out", false);
      obs.entries.emplace_back(std::move(c));
    } else if (type == "error") {
      obs.entries.emplace_back(ErrorEntry{e.value("message", ""), e.value("group", "")});
    } else {
      throw DataError("unknown observation entry type: " + type);
    }
  }
  return obs;
}

}  // namespace mmagent::protocol
