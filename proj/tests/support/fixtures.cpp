#include "support/fixtures.hpp"

#include <unistd.h>

#include <algorithm>
#include <random>

#include "mmagent/sandbox_client.hpp"

namespace mmagent::fixtures {

using protocol::CodeEntry;
using protocol::Observation;
using orchestrator::Trajectory;
using orchestrator::Turn;

fs::path temp_dir(const std::string& tag) {
  static int counter = 0;
  auto dir = fs::temp_directory_path() /
             ("mmagent-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// ---- traces ---------------------------------------------------------------------

std::vector<TraceTurn> split_trace(std::string_view dialogue) {
  std::vector<TraceTurn> out;
  std::size_t pos = 0;
  while (pos < dialogue.size()) {
    const auto open = dialogue.find(protocol::kObservationOpen, pos);
    const auto turn_text = dialogue.substr(pos, open == std::string_view::npos ? std::string_view::npos : open - pos);
    if (!is_blank(turn_text)) out.push_back({protocol::parse_turn(trim(turn_text)), std::nullopt});
    if (open == std::string_view::npos) break;
    const auto body_start = open + protocol::kObservationOpen.size();
    const auto close = dialogue.find(protocol::kObservationClose, body_start);
    const auto body = dialogue.substr(body_start, close == std::string_view::npos ? std::string_view::npos : close - body_start);
    if (!out.empty()) out.back().observation = trim(body);
    if (close == std::string_view::npos) break;
    pos = close + protocol::kObservationClose.size();
  }
  return out;
}

namespace {

std::string crop_code(const std::string& src, const std::string& out, const std::string& box) {
  return "from PIL import Image\n"
         "img = Image.open(\"" + src + "\")\n"
         "width, height = img.size\n"
         "box = " + box + "\n"
         "img.crop(box).save(\"" + out + "\")\n"
         "print(\"" + out + "\")\n";
}

std::string tool_call(std::string_view name, std::string_view key, const std::string& value) {
  json j = {{"name", name}, {"arguments", {{key, json::array({value})}}}};
  return "<tool_call>" + j.dump() + "</tool_call>";
}

}  // namespace

std::string crop_navigation_trace() {
  std::string s;
  s += "<think>The street panorama is wide and the dog is not visible at full size. The middle band has the most "
       "pedestrians, so I will crop it first.</think>\n<code>\n" +
       crop_code("image_1.png", "crop_1.png", "(int(width * 0.4), int(height * 0.6), int(width * 0.7), int(height * 0.9))") +
       "</code>\n";
  s += "<observation>\ncrop_1.png\n<sub-image 1>\n</observation>\n";
  s += "<think>The middle band shows a crowd but no dog. The walkway on the left side is next.</think>\n<code>\n" +
       crop_code("image_1.png", "crop_2.png", "(0, int(height * 0.5), int(width * 0.3), height)") + "</code>\n";
  s += "<observation>\ncrop_2.png\n<sub-image 2>\n</observation>\n";
  s += "<think>Parked cars and people, still no dog. The right sidewalk is the last busy area.</think>\n<code>\n" +
       crop_code("image_1.png", "crop_3.png", "(int(width * 0.7), int(height * 0.5), width, height)") + "</code>\n";
  s += "<observation>\ncrop_3.png\n<sub-image 3>\n</observation>\n";
  s += "<think>A small dog walks beside a pedestrian on the right sidewalk and its coat is white.</think>\n"
       "<answer>White</answer>\n";
  return s;
}

std::string geolocation_search_trace() {
  std::string s;
  s += "<think>Tiled roofs, timber beams and a hotel sign in front of modern towers. A reverse image search should "
       "name the building.</think>\n" +
       tool_call("image_search", "image_paths", "image_1.png") + "\n";
  s += "<observation>\n1. Riverside Heritage Inn (Old Guild Hall)\nlink: https://example.org/inn\n"
       "image: https://example.org/inn.jpg\n\n2. Old Town Scenic Walk\nlink: https://example.org/walk\n"
       "image: https://example.org/walk.jpg\n</observation>\n";
  s += "<think>The matches point to the Riverside Heritage Inn. A text search will give its address.</think>\n" +
       tool_call("text_search", "queries", "Riverside Heritage Inn location") + "\n";
  s += "<observation>\n1. Riverside Heritage Inn\nlink: https://example.org/inn-address\n"
       "text: 12 Harbour Road, Old Town District, Port Alder\n</observation>\n";
  s += "<think>The address places the inn in the Old Town District of Port Alder.</think>\n"
       "<answer>Old Town District, Port Alder</answer>\n";
  return s;
}

std::string interleaved_trace() {
  std::string s;
  s += "<think>The watch in the centre is small. Cropping it first will make the model easier to identify.</think>\n"
       "<code>\n" +
       crop_code("image_1.png", "crop_1.png", "(int(width * 0.3), int(height * 0.2), int(width * 0.7), int(height * 0.8))") +
       "</code>\n";
  s += "<observation>\ncrop_1.png\n<sub-image 1>\n</observation>\n";
  s += "<think>The crop shows the watch face clearly. A reverse image search on the crop should give the model."
       "</think>\n" +
       tool_call("image_search", "image_paths", "crop_1.png") + "\n";
  s += "<observation>\n1. Brightline Trail 2 outdoor smartwatch\nlink: https://example.org/trail2\n"
       "image: https://example.org/trail2.jpg\n</observation>\n";
  s += "<think>It is a Brightline Trail 2. Now I need what a fivefold crown press does.</think>\n" +
       tool_call("text_search", "queries", "Brightline Trail 2 press crown five times") + "\n";
  s += "<observation>\n1. Brightline Trail 2 safety features\nlink: https://example.org/trail2-sos\n"
       "text: Pressing the crown five times starts an emergency call.\n</observation>\n";
  s += "<think>Five quick presses of the crown start an emergency call.</think>\n"
       "<answer>It starts an emergency SOS call.</answer>\n";
  return s;
}

std::string reference_plan_json() {
  json plan = json::array();
  auto step = [&](const std::string& d, const std::string& tool, json params) {
    plan.push_back({{"description", d}, {"tool_name", tool}, {"parameters", std::move(params)}});
  };
  step("Identify the player in the photo with a reverse image search.", "image_search",
       {{"image_path", "image_1.png"}});
  step("Find the team the identified player currently plays for.", "text_search",
       {{"query", "[Player identified in Step 1] current team"}});
  step("Look up the season record of that team.", "text_search",
       {{"query", "[Team from Step 2] 2025 championship win rate"}});
  step("Open a statistics page to confirm the win rate.", "web_visit",
       {{"url", "[Statistics URL from Step 3]"}});
  step("Compute the win rate from the gathered results.", "none", json::object());
  return plan.dump(2);
}

// ---- plan mutations -------------------------------------------------------------

namespace {

json plan_step(const std::string& d, const std::string& tool, json params) {
  return {{"description", d}, {"tool_name", tool}, {"parameters", std::move(params)}};
}

json tool_step(std::mt19937_64& rng, int index, std::vector<int> refs) {
  static const char* tools[] = {"image_search", "text_search", "web_visit"};
  const std::string tool = tools[index == 1 ? 0 : 1 + bounded_draw(rng, 2)];
  std::string value = tool == "image_search" ? "image_1.png" : tool == "web_visit" ? "https://example.org/page" : "query";
  for (int r : refs) value += " [Finding from Step " + std::to_string(r) + "]";
  const char* key = tool == "image_search" ? "image_path" : tool == "web_visit" ? "url" : "query";
  return plan_step("Gather evidence for step " + std::to_string(index) + ".", tool, {{key, value}});
}

}  // namespace

json random_valid_plan(std::mt19937_64& rng, std::set<std::pair<int, int>>& edges) {
  const int n = 2 + static_cast<int>(bounded_draw(rng, 9));
  json plan = json::array();
  for (int i = 1; i < n; ++i) {
    std::vector<int> refs;
    if (i > 1)
      for (int r = 1; r < i; ++r)
        if (bounded_draw(rng, 3) == 0) {
          refs.push_back(r);
          edges.insert({i, r});
        }
    plan.push_back(tool_step(rng, i, refs));
  }
  std::string closing = "Combine the results";
  if (n > 1 && bounded_draw(rng, 2) == 0) {
    const int r = 1 + static_cast<int>(bounded_draw(rng, static_cast<std::uint64_t>(n - 1)));
    closing += " using [Answer from Step " + std::to_string(r) + "]";
    edges.insert({n, r});
  }
  plan.push_back(plan_step(closing + ".", "none", json::object()));
  return plan;
}

PlanMutation mutate_plan(const json& base, std::mt19937_64& rng) {
  json plan = base;
  const int n = static_cast<int>(plan.size());
  using K = planner::PlanErrorKind;
  switch (bounded_draw(rng, 7)) {
    case 0: {
      const int host = 1 + static_cast<int>(bounded_draw(rng, static_cast<std::uint64_t>(n)));
      const int ref = host + static_cast<int>(bounded_draw(rng, static_cast<std::uint64_t>(n - host + 2)));
      auto& d = plan[host - 1]["description"];
      d = d.get<std::string>() + " Use [Output of Step " + std::to_string(ref) + "].";
      return {plan.dump(), K::ForwardReference, "forward_reference"};
    }
    case 1: {
      static const char* bad[] = {"browse", "Text_Search", "imagesearch", "search", "code", "text search", "NONE", ""};
      plan[bounded_draw(rng, static_cast<std::uint64_t>(n))]["tool_name"] = bad[bounded_draw(rng, 8)];
      return {plan.dump(), K::UnknownTool, "unknown_tool"};
    }
    case 2: {
      plan[n - 1] = plan_step("Search once more.", "text_search", {{"query", "final check"}});
      return {plan.dump(), K::MissingFinalReasoningStep, "missing_final_none"};
    }
    case 3: {
      const int extra = 11 - n + static_cast<int>(bounded_draw(rng, 5));
      json grown = json::array();
      for (int i = 0; i < n - 1; ++i) grown.push_back(plan[i]);
      for (int i = 0; i < extra; ++i)
        grown.push_back(plan_step("Extra lookup.", "text_search", {{"query", "extra " + std::to_string(i)}}));
      grown.push_back(plan[n - 1]);
      return {grown.dump(), K::StepCountOutOfRange, "too_many_steps"};
    }
    case 4: {
      static const char* prose[] = {"Here is the plan:\n", "Plan:\n```json\n", "Sure! "};
      static const char* tail[] = {"", "\n```", "\nLet me know if this helps."};
      const auto k = bounded_draw(rng, 3);
      return {prose[k] + plan.dump(2) + tail[k], K::ExtraProse, "extra_prose"};
    }
    case 5: {
      int host = 0;
      for (int i = 0; i < n; ++i)
        if (plan[i]["tool_name"] != "none") host = i;
      auto& params = plan[host]["parameters"];
      const auto key = params.begin().key();
      params["extra_" + key] = "x";
      return {plan.dump(), K::ToolParamMismatch, "param_mismatch"};
    }
    default: {
      const int host = 1 + static_cast<int>(bounded_draw(rng, static_cast<std::uint64_t>(n)));
      auto& d = plan[host - 1]["description"];
      d = d.get<std::string>() + " Then check [Result of Step 1";
      return {plan.dump(), K::MalformedPlaceholder, "unclosed_placeholder"};
    }
  }
}

// ---- toy encyclopedia ---------------------------------------------------------------

std::vector<std::string> toy_names(std::size_t n) {
  static const char* pre[] = {"Ald", "Bel", "Cor", "Dun", "Esk", "Fen", "Gal", "Hol", "Ivo", "Jar"};
  static const char* suf[] = {"mere", "vant", "wick", "holm", "stad", "gate", "ford", "moor", "dale", "burn"};
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n && i < 100; ++i) out.push_back(std::string(pre[i % 10]) + suf[i / 10]);
  return out;
}

std::vector<querygen::RawPage> toy_pages(std::size_t n, std::uint64_t seed) {
  const auto names = toy_names(n);
  std::mt19937_64 rng(seed);
  std::vector<querygen::RawPage> pages;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const int year = 1700 + static_cast<int>((i * 37) % 300);
    std::vector<std::size_t> targets;
    const auto k = 2 + bounded_draw(rng, 4);
    while (targets.size() < k) {
      auto t = bounded_draw(rng, names.size());
      if (t != i && std::find(targets.begin(), targets.end(), t) == targets.end()) targets.push_back(t);
    }
    std::string text = "'''" + names[i] + "''' is a fictional settlement founded in " + std::to_string(year) +
                       ". It trades with [[" + names[targets[0]] + "]] and [[" + names[targets[1]] + "|the " +
                       names[targets[1]] + " valley]].\n\n== History ==\n";
    for (std::size_t j = 0; j < targets.size(); ++j) {
      text += "Records mention [[" + names[targets[j]] + "]]";
      if (j % 2 == 0) text += " and again [[" + names[targets[j]] + "]]";
      text += ".\n";
    }
    pages.push_back({names[i], text, "", {}});
  }
  if (names.size() > 1) {
    pages.push_back({"Old " + names[0], "", names[0], {}});
    pages.push_back({"Upper " + names[1], "#REDIRECT [[" + names[1] + "]]", "", {}});
  }
  return pages;
}

// ---- curation corpus ---------------------------------------------------------------------

namespace {

Turn make_turn(const std::string& raw, std::optional<Observation> obs = std::nullopt) {
  Turn t;
  t.seg = protocol::parse_turn(raw);
  t.observation = std::move(obs);
  t.model_latency_s = 0.5;
  t.tool_latency_s = t.observation ? 0.1 : 0.0;
  t.completion_tokens = static_cast<int>(raw.size() / 4);
  t.prompt_tokens = 200;
  t.finish_reason = "stop";
  return t;
}

Observation code_obs(const std::string& stdout_text, int exit, std::vector<std::string> produced, int first,
                     const std::string& stderr_text = "") {
  CodeEntry c;
  c.stdout_text = stdout_text;
  c.stderr_text = stderr_text;
  c.exit_status = exit;
  c.produced_images = std::move(produced);
  c.first_image_number = first;
  c.wall_time_s = 0.1;
  return Observation{{c}};
}

}  // namespace

std::vector<Trajectory> curation_corpus(std::size_t n, std::uint64_t seed, const fs::path& workspace_root,
                                        InjectedDefects& d) {
  static const char* objects[] = {"red mug", "blue kettle", "green lamp", "silver clock", "wooden bowl"};
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  fisher_yates(std::span(order), rng);
  const std::size_t n_format = n * 5 / 100, n_answer = n * 10 / 100, n_blank = n * 5 / 100, n_sandbox = n * 10 / 100;
  enum Kind { Clean, Format, Answer, Blank, Sandbox };
  std::vector<Kind> kind(n, Clean);
  std::size_t at = 0;
  for (std::size_t i = 0; i < n_format; ++i) kind[order[at++]] = Format;
  for (std::size_t i = 0; i < n_answer; ++i) kind[order[at++]] = Answer;
  for (std::size_t i = 0; i < n_blank; ++i) kind[order[at++]] = Blank;
  for (std::size_t i = 0; i < n_sandbox; ++i) kind[order[at++]] = Sandbox;

  std::vector<Trajectory> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "cur-%03zu", i);
    Trajectory t;
    t.task.id = id;
    t.task.question = "Which object is on the table in scene " + std::to_string(i) + "?";
    const auto source_image = workspace_root / "sources" / (std::string(id) + ".png");
    write_file(source_image, toolbox::tiny_png());
    t.task.images = {source_image.string()};
    const std::string gold = objects[i % 5];
    t.task.gold = gold;
    t.task.source = "synthetic";
    t.mode = orchestrator::Mode::DeepResearch;
    t.seed = i;
    t.max_turns = 8;
    t.max_total_tokens = 32768;
    t.tools = {"image_search", "text_search", "web_visit", "code"};

    const auto ws = t.workspace(workspace_root);
    fs::create_directories(ws);
    write_file(ws / (std::string(id) + ".png"), toolbox::tiny_png());

    const std::string crop_name = kind[i] == Blank ? "blank_crop_1.png" : "crop_1.png";
    if (kind[i] == Sandbox) {
      t.turns.push_back(make_turn(
          "<think>I will crop the table area to see the object.</think><code>\nfrom PIL import Image\n"
          "img = Image.open(\"" + std::string(id) + ".png\")\nimgg.crop((10, 10, 200, 200)).save(\"crop_1.png\")\n</code>",
          code_obs("", 1, {}, 1, "NameError: name 'imgg' is not defined")));
    }
    const std::string intro = kind[i] == Sandbox ? "The previous run failed on a typo. I will run the crop again."
                                                 : "I will crop the table area to see the object.";
    t.turns.push_back(make_turn("<think>" + intro + "</think><code>\n" +
                                    crop_code(std::string(id) + ".png", crop_name, "(10, 10, 200, 200)") + "</code>",
                                code_obs(crop_name + "\n", 0, {crop_name}, 1)));
    write_file(ws / crop_name, toolbox::tiny_png());
    if (kind[i] == Format) {
      // Retried turn that skipped the reasoning block.
      auto bad = make_turn(i % 2 ? "<answer>" + gold + "</answer>" : "<think>Two actions at once.</think><answer>a</answer><answer>b</answer>");
      bad.discarded = true;
      t.turns.push_back(std::move(bad));
    }
    const std::string answer = kind[i] == Answer ? "wrong " + std::string(objects[(i + 1) % 5]) : gold;
    t.turns.push_back(make_turn("<think>The cropped view shows the " + answer + " on the table.</think><answer>" +
                                answer + "</answer>"));
    t.final_answer = answer;
    t.termination = orchestrator::Termination::Answered;

    switch (kind[i]) {
      case Clean: d.clean.insert(id); break;
      case Format: d.format.insert(id); break;
      case Answer: d.answer.insert(id); break;
      case Blank: d.blank_crop.insert(id); break;
      case Sandbox: d.sandbox_error.insert(id); break;
    }
    out.push_back(std::move(t));
  }
  return out;
}

llm::EndpointPtr corpus_judge() {
  return std::make_shared<llm::FunctionEndpoint>([](const llm::ChatRequest& req) {
    const auto text = llm::request_text(req);
    llm::ChatResponse r;
    r.latency_s = 0.01;
    r.finish_reason = "stop";
    if (const auto at = text.find("Candidate answer:"); at != std::string::npos) {
      const auto line = text.substr(at, text.find('\n', at) - at);
      r.content = contains_ci(line, "wrong") ? "DISAGREE" : "AGREE";
    } else {
      r.content = "CONSISTENT";
    }
    return r;
  });
}

llm::EndpointPtr corpus_vlm_judge() {
  return std::make_shared<llm::FunctionEndpoint>([](const llm::ChatRequest& req) {
    llm::ChatResponse r;
    r.latency_s = 0.01;
    r.finish_reason = "stop";
    bool blank = false;
    for (const auto& m : req.messages)
      for (const auto& img : m.images) blank = blank || starts_with(fs::path(img).filename().string(), "blank");
    r.content = blank ? "CONTRADICTED" : "SUPPORTED";
    return r;
  });
}

// ---- desk run -----------------------------------------------------------------------------

namespace {

json reply(const std::string& content, double latency) { return {{"content", content}, {"latency_s", latency}}; }

std::string slug(std::string s) {
  for (auto& c : s) c = c == ' ' ? '-' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

DeskFixture write_desk_fixture(const fs::path& dir) {
  DeskFixture f;
  f.dir = dir;
  fs::create_directories(dir / "images");
  static const char* landmarks[] = {"Velmora Clock Tower", "Ostrand Lighthouse", "Quillon Stone Bridge",
                                    "Marrow Hill Observatory", "Tessaly Opera House", "Brenner Salt Market",
                                    "Korvin Glass Pavilion"};
  static const char* cities[] = {"Port Velmora", "Ostrand Bay", "Quillon", "Marrowdale", "Tessaly", "Brennholt",
                                 "Korvin Falls"};
  static const char* colors[] = {"Blue", "Yellow", "Green", "Orange", "Purple"};

  json model = {{"rules", json::array()}, {"default", "<think>No script for this request.</think><answer>unknown</answer>"}};
  json search = {{"search", json::object()}, {"lens", json::object()}, {"images", json::object()}};
  json web = json::object();
  std::vector<json> task_rows;

  auto add_task = [&](int k, const std::string& question, const std::string& gold, const std::string& mode,
                      std::vector<json> replies) {
    char id[32];
    std::snprintf(id, sizeof(id), "desk-%02d", k);
    const auto image = dir / "images" / (std::string(id) + ".png");
    write_file(image, toolbox::tiny_png());
    json row = {{"id", id},
                {"question", std::string(id) + ": " + question},
                {"images", {image.string()}},
                {"gold", gold},
                {"source", "desk"}};
    if (!mode.empty()) row["mode"] = mode;
    task_rows.push_back(row);
    f.task_list.push_back(orchestrator::task_from_json(row));
    model["rules"].push_back({{"contains", {std::string(id) + ":"}}, {"replies", std::move(replies)}});
    return std::string(id);
  };

  int k = 1;
  // Think with images: crop then answer.
  for (int i = 0; i < 5; ++i, ++k) {
    const std::string color = colors[i];
    add_task(k, "What color is the small sign in the corner?", color, "general",
             {reply("<think>The sign is tiny at full size, so I will crop the corner.</think><code>\n" +
                        crop_code(std::string("desk-") + (k < 10 ? "0" : "") + std::to_string(k) + ".png", "crop_1.png",
                                  "(0, 0, width // 4, height // 4)") +
                        "</code>",
                    0.8),
              reply("<think>The crop shows the sign clearly; it is " + to_lower(color) + ".</think><answer>" + color +
                        "</answer>",
                    0.4)});
  }
  // Search: reverse image search, text search (one task also visits a page), answer.
  for (int i = 0; i < 7; ++i, ++k) {
    const std::string lm = landmarks[i], city = cities[i];
    char img[32];
    std::snprintf(img, sizeof(img), "desk-%02d.png", k);
    const std::string link = "https://example.org/" + slug(lm);
    search["lens"][img] = {{"visual_matches",
                            {{{"title", lm + " travel guide"}, {"link", link}, {"thumbnailUrl", link + ".jpg"}}}}};
    const std::string query = lm + " location";
    search["search"][query] = {
        {"organic", {{{"title", lm}, {"link", link + "/visit"}, {"snippet", lm + " stands in " + city + "."}}}}};
    std::vector<json> replies = {
        reply("<think>A landmark building. A reverse image search should name it.</think>" +
                  tool_call("image_search", "image_paths", img),
              0.7),
        reply("<think>The matches name the " + lm + ". I will search for its location.</think>" +
                  tool_call("text_search", "queries", query),
              0.6)};
    if (i == 0) {
      web[link + "/visit"] = "<html><body><h1>" + lm + "</h1><p>The " + lm + " is in " + city +
                             ".</p><script>var x = 1;</script></body></html>";
      replies.push_back(reply("<think>The snippet names " + city + ". I will open the page to confirm.</think>" +
                                  tool_call("web_visit", "urls", link + "/visit"),
                              0.5));
    }
    replies.push_back(reply("<think>The results place the " + lm + " in " + city + ".</think><answer>" + city +
                                "</answer>",
                            0.4));
    auto id = add_task(k, "In which city was this photo taken?", city, "", std::move(replies));
    if (i == 0) f.four_turn_task = id;
  }
  // Interleaved: crop, reverse image search on the crop, answer.
  search["lens"]["crop_1.png"] = {
      {"visual_matches",
       {{{"title", "Brightline Trail 2 outdoor smartwatch"}, {"link", "https://example.org/trail2"},
         {"thumbnailUrl", "https://example.org/trail2.jpg"}}}}};
  for (int i = 0; i < 4; ++i, ++k) {
    char img[32];
    std::snprintf(img, sizeof(img), "desk-%02d.png", k);
    add_task(k, "Which watch model is shown in the centre?", "Brightline Trail 2", "",
             {reply("<think>The watch is small; I will crop the centre first.</think><code>\n" +
                        crop_code(img, "crop_1.png", "(width // 4, height // 4, 3 * width // 4, 3 * height // 4)") +
                        "</code>",
                    0.8),
              reply("<think>The crop shows the watch face. A reverse image search on it should give the model."
                    "</think>" +
                        tool_call("image_search", "image_paths", "crop_1.png"),
                    0.6),
              reply("<think>The match is the Brightline Trail 2.</think><answer>Brightline Trail 2</answer>", 0.3)});
  }
  // Direct answers.
  for (int i = 0; i < 4; ++i, ++k) {
    const std::string n = std::to_string(i + 2);
    add_task(k, "How many chairs are in the picture?", n, "direct",
             {reply("<think>I can count the chairs directly: " + n + ".</think><answer>" + n + "</answer>", 0.3)});
  }

  json sandbox = {{"rules",
                   {{{"contains", {"crop_1.png"}},
                     {"stdout", "crop_1.png\n"},
                     {"write", {"crop_1.png"}},
                     {"exit_status", 0},
                     {"wall_time", 0.05}}}},
                  {"default", {{"stdout", ""}}}};
  json judge = {{"rules", {{{"contains", {"Ground-truth answer"}}, {"replies", {"AGREE"}}}}}, {"default", "CONSISTENT"}};
  json vlm = {{"rules", json::array()}, {"default", "SUPPORTED"}};

  write_file(dir / "model.json", model.dump(2));
  write_file(dir / "judge.json", judge.dump(2));
  write_file(dir / "vlm.json", vlm.dump(2));
  write_file(dir / "sandbox.json", sandbox.dump(2));
  write_file(dir / "search.json", search.dump(2));
  write_file(dir / "web.json", web.dump(2));
  write_jsonl(dir / "tasks.jsonl", task_rows);

  json cfg = {{"workspace_root", "ws"},
              {"seed", 11},
              {"endpoints",
               {{"model", {{"kind", "scripted"}, {"script", "model.json"}}},
                {"judge", {{"kind", "scripted"}, {"script", "judge.json"}}},
                {"vlm_judge", {{"kind", "scripted"}, {"script", "vlm.json"}}}}},
              {"search", {{"kind", "fixture"}, {"fixture", "search.json"}}},
              {"web", {{"kind", "fixture"}, {"fixture", "web.json"}}},
              {"sandbox", {{"kind", "scripted"}, {"script", "sandbox.json"}}},
              {"transcript", {{"path", "transcript.jsonl"}, {"mode", "record"}}},
              {"episode", {{"mode", "deep_research"}, {"max_turns", 8}, {"rollouts", 1}}}};
  f.config = dir / "config.json";
  write_file(f.config, cfg.dump(2));
  f.tasks = dir / "tasks.jsonl";
  return f;
}

// ---- trace rig -------------------------------------------------------------------

namespace {

std::vector<std::string> blocks(const std::string& body) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= body.size()) {
    auto next = body.find("\n\n", pos);
    out.push_back(body.substr(pos, next == std::string::npos ? std::string::npos : next - pos));
    if (next == std::string::npos) break;
    pos = next + 2;
  }
  return out;
}

json serper_from_rendered(const std::string& body) {
  json hits = json::array();
  for (const auto& block : blocks(body)) {
    json hit = json::object();
    for (const auto& line : split_lines(block)) {
      if (starts_with(line, "link: ")) hit["link"] = line.substr(6);
      else if (starts_with(line, "image: ")) hit["imageUrl"] = line.substr(7);
      else if (starts_with(line, "text: ")) hit["snippet"] = line.substr(6);
      else if (auto dot = line.find(". "); dot != std::string::npos) hit["title"] = line.substr(dot + 2);
    }
    hits.push_back(hit);
  }
  return {{"organic", hits}};
}

}  // namespace

TraceRig trace_rig(std::string_view trace, const fs::path& dir, std::shared_ptr<toolbox::TranscriptCache> transcript) {
  TraceRig rig;
  rig.turns = split_trace(trace);
  write_file(dir / "image_1.png", toolbox::tiny_png());
  rig.task.id = "trace";
  rig.task.question = "trace question";
  rig.task.images = {(dir / "image_1.png").string()};
  rig.episode.mode = orchestrator::Mode::DeepResearch;
  rig.episode.workspace_root = dir / "ws";

  json replies = json::array();
  json search = json::object(), lens = json::object();
  json sandbox_rules = json::array();
  for (const auto& t : rig.turns) {
    replies.push_back(t.seg.raw);
    const auto* call = t.seg.tool_call();
    if (!call || !t.observation) continue;
    if (call->name == protocol::ToolName::ImageSearch) {
      lens[fs::path(call->values.at(0)).filename().string()] = serper_from_rendered(*t.observation);
    } else if (call->name == protocol::ToolName::TextSearch) {
      search[call->values.at(0)] = serper_from_rendered(*t.observation);
    } else if (call->name == protocol::ToolName::Code) {
      std::string out;
      json write = json::array();
      for (const auto& line : split_lines(*t.observation)) {
        if (starts_with(line, "<sub-image")) continue;
        out += line + "\n";
        if (line.size() > 4 && line.compare(line.size() - 4, 4, ".png") == 0) write.push_back(line);
      }
      sandbox_rules.push_back({{"contains", {call->code}}, {"stdout", out}, {"write", write}});
    }
  }
  rig.model = std::make_shared<llm::ScriptedChatEndpoint>(
      json{{"rules", json::array({json{{"contains", {rig.task.question}}, {"replies", replies}}})}});
  auto provider = std::make_shared<toolbox::FixtureProvider>(json{{"search", search}, {"lens", lens}});
  auto sandbox = std::make_shared<toolbox::ScriptedSandbox>(json{{"rules", sandbox_rules}});
  rig.registry = std::make_shared<toolbox::ToolRegistry>(toolbox::ToolboxConfig{}, provider,
                                                         std::make_shared<toolbox::FixturePageFetcher>(json::object()),
                                                         sandbox, nullptr, transcript, rig.episode.workspace_root);
  return rig;
}

}  // namespace mmagent::fixtures
