#include <omp.h>

#include <algorithm>

#include "mmagent/prompts.hpp"
#include "mmagent/querygen.hpp"

namespace mmagent::querygen {

namespace {

struct Outage {
  std::string what;
};

// Parsed JSON object of the reply; nullopt when the reply has none.
std::optional<json> ask_json(llm::ChatEndpoint* ep, const std::string& prompt) {
  if (!ep) throw Outage{"no endpoint configured"};
  llm::ChatRequest req;
  req.temperature = 0.0;
  req.messages.push_back({"user", prompt, {}});
  try {
    return extract_json_object(ep->complete(req).content);
  } catch (const llm::EndpointError& e) {
    throw Outage{e.what()};
  }
}

std::string str_field(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_string()) return "";
  return trim(j[key].get<std::string>());
}

void reject(WalkRecord& r, RejectReason why, std::string detail) {
  r.status = WalkStatus::Rejected;
  r.reason = why;
  r.detail = std::move(detail);
}

void pend(WalkRecord& r, std::string detail) {
  r.status = WalkStatus::Pending;
  r.detail = std::move(detail);
}

const Node& node(const KnowledgeGraph& g, int id) { return g.nodes[static_cast<std::size_t>(id)]; }

bool names_in(const KnowledgeGraph& g, int id, const std::string& text) {
  const auto lower = to_lower(text);
  for (const auto& n : g.names(id))
    if (lower.find(n) != std::string::npos) return true;
  return false;
}

// Sentences of `text` that mention any of `names`, at most `limit`.
std::string mentioning_sentences(const std::string& text, const std::vector<std::string>& names, std::size_t limit) {
  std::string out;
  std::size_t found = 0, start = 0;
  const auto flat = collapse_whitespace(text);
  while (start < flat.size() && found < limit) {
    auto end = flat.find(". ", start);
    end = end == std::string::npos ? flat.size() : end + 1;
    auto sentence = flat.substr(start, end - start);
    const auto lower = to_lower(sentence);
    for (const auto& n : names) {
      if (lower.find(n) != std::string::npos) {
        out += trim(sentence) + " ";
        ++found;
        break;
      }
    }
    start = end + 1;
  }
  return trim(out);
}

}  // namespace

std::string_view walk_status_str(WalkStatus s) {
  switch (s) {
    case WalkStatus::Active: return "active";
    case WalkStatus::Accepted: return "accepted";
    case WalkStatus::Rejected: return "rejected";
    case WalkStatus::Pending: return "pending";
  }
  return "";
}

std::string_view reject_reason_str(RejectReason r) {
  switch (r) {
    case RejectReason::None: return "";
    case RejectReason::SeedFailure: return "SeedFailure";
    case RejectReason::AnswerTooLong: return "AnswerTooLong";
    case RejectReason::Ungrounded: return "Ungrounded";
    case RejectReason::NotUnique: return "NotUnique";
    case RejectReason::DeadEnd: return "DeadEnd";
    case RejectReason::ExtractionFailure: return "ExtractionFailure";
    case RejectReason::RewriteInvalid: return "RewriteInvalid";
    case RejectReason::ExclusionLeak: return "ExclusionLeak";
    case RejectReason::CheckerFail: return "CheckerFail";
  }
  return "";
}

json to_json(const WalkRecord& r, const KnowledgeGraph& g) {
  json path = json::array(), relations = json::array();
  for (int id : r.path) path.push_back(node(g, id).title);
  for (const auto& h : r.hops)
    relations.push_back({{"from", h.from}, {"to", h.to}, {"relation", h.relation}, {"property", h.property}});
  json j = {{"seed", r.seed},
            {"question", r.question},
            {"seed_question", r.seed_question},
            {"answer", r.answer},
            {"path", path},
            {"relations", relations},
            {"status", walk_status_str(r.status)},
            {"reason", reject_reason_str(r.reason)},
            {"detail", r.detail},
            {"uniqueness", r.uniqueness_category},
            {"depth", r.target_depth},
            {"resamples", r.resamples},
            {"rng_seed", r.rng_seed},
            {"flags", r.flags}};
  if (r.multimodal) {
    j["multimodal_question"] = r.multimodal->question;
    j["image_ref"] = r.multimodal->image_ref.empty() ? json(nullptr) : json(r.multimodal->image_ref);
    j["text_only"] = r.multimodal->text_only;
  }
  return j;
}

void rebuild_exclusion(WalkRecord& r, const KnowledgeGraph& g) {
  r.exclusion.clear();
  for (std::size_t i = 0; i < g.nodes.size(); ++i)
    if (g.pervasive[i])
      for (auto& n : g.names(static_cast<int>(i))) r.exclusion.insert(std::move(n));
  for (int id : r.path)
    for (auto& n : g.names(id)) r.exclusion.insert(std::move(n));
}

WalkRecord start_walk(const KnowledgeGraph& g, int node_id, std::uint64_t rng_seed) {
  WalkRecord r;
  r.seed = node(g, node_id).title;
  r.path = {node_id};
  r.rng_seed = rng_seed;
  rebuild_exclusion(r, g);
  return r;
}

void seed_question(WalkRecord& r, const KnowledgeGraph& g, llm::ChatEndpoint* qa, const WalkConfig& cfg) {
  const auto& n = node(g, r.path.front());
  if (is_blank(n.intro)) return reject(r, RejectReason::SeedFailure, "empty intro");
  const std::map<std::string, std::string> vars = {
      {"max_words", std::to_string(cfg.max_answer_words)}, {"entity", n.title}, {"intro", n.intro}};
  std::string prompt = prompts::fill(prompts::kSeedQuestion, vars);
  std::string question, answer;
  try {
    for (int attempt = 0; attempt < 2; ++attempt) {
      auto reply = ask_json(qa, prompt);
      question = reply ? str_field(*reply, "question") : "";
      answer = reply ? str_field(*reply, "answer") : "";
      if (question.empty() || answer.empty()) return reject(r, RejectReason::SeedFailure, "no question/answer in reply");
      if (count_words(answer) <= static_cast<std::size_t>(cfg.max_answer_words)) break;
      if (attempt == 1)
        return reject(r, RejectReason::AnswerTooLong, std::to_string(count_words(answer)) + " words");
      prompt += prompts::fill(prompts::kSeedRetrySuffix, vars);
    }
  } catch (const Outage& o) {
    return pend(r, "qa: " + o.what);
  }
  if (!names_in(g, r.path.front(), question)) return reject(r, RejectReason::SeedFailure, "question does not name the entity");
  if (cfg.require_grounded_answer && !contains_ci(n.body, answer) && !contains_ci(n.intro, answer))
    return reject(r, RejectReason::Ungrounded, "answer not found in the page");
  r.seed_question = question;
  r.question = question;
  r.answer = answer;
}

UniquenessResult uniqueness_check(const std::string& answer, llm::ChatEndpoint* evaluator) {
  UniquenessResult out;
  try {
    auto reply = ask_json(evaluator, prompts::fill(prompts::kUniqueness, {{"answer", answer}}));
    out.category = reply ? str_field(*reply, "category") : "";
  } catch (const Outage&) {
    return out;
  }
  static const std::set<std::string> known = {"concrete_unique", "generic", "platform_or_outlet", "abstract_concept",
                                              "ambiguous"};
  if (!known.count(out.category)) return out;
  out.verdict = out.category == "concrete_unique" ? Uniqueness::Pass : Uniqueness::Fail;
  return out;
}

void walk_step(WalkRecord& r, const KnowledgeGraph& g, std::mt19937_64& rng, llm::ChatEndpoint* extractor,
               const WalkConfig& cfg) {
  const int current = r.path.back();
  auto cands = g.out[static_cast<std::size_t>(current)];
  std::stable_sort(cands.begin(), cands.end(), [&](const Edge& a, const Edge& b) {
    return a.freq != b.freq ? a.freq > b.freq : node(g, a.target).title < node(g, b.target).title;
  });
  const auto window = std::min<std::size_t>(static_cast<std::size_t>(std::max(cfg.window, 1)), cands.size());
  fisher_yates(std::span(cands.data(), window), rng);

  std::optional<int> pick;
  for (const auto& e : cands) {
    if (g.pervasive[static_cast<std::size_t>(e.target)] || r.tried.count(e.target)) continue;
    if (std::find(r.path.begin(), r.path.end(), e.target) != r.path.end()) continue;
    bool excluded = false;
    for (const auto& n : g.names(e.target)) excluded = excluded || r.exclusion.count(n) > 0;
    if (excluded) continue;
    pick = e.target;
    break;
  }
  if (!pick) return reject(r, RejectReason::DeadEnd, "no eligible neighbour of " + node(g, current).title);

  const auto& cur = node(g, current);
  const auto& tgt = node(g, *pick);
  std::string context = mentioning_sentences(cur.body, g.names(*pick), 3);
  if (context.empty()) context = cur.intro;
  context += "\n" + first_sentence(tgt.intro, 400);
  std::string relation, property;
  try {
    auto reply = ask_json(extractor, prompts::fill(prompts::kRelation,
                                                   {{"current", cur.title}, {"target", tgt.title}, {"context", context}}));
    relation = reply ? str_field(*reply, "relation") : "";
    property = reply ? str_field(*reply, "property") : "";
  } catch (const Outage& o) {
    return pend(r, "extractor: " + o.what);
  }
  if (relation.empty()) return reject(r, RejectReason::ExtractionFailure, cur.title + " -> " + tgt.title);
  r.path.push_back(*pick);
  r.hops.push_back({cur.title, tgt.title, relation, property});
  for (auto& n : g.names(*pick)) r.exclusion.insert(std::move(n));
}

bool rewrite_question(WalkRecord& r, const KnowledgeGraph& g, llm::ChatEndpoint* rewriter) {
  const int entity = r.path[r.path.size() - 2];
  const int target = r.path.back();
  const auto& hop = r.hops.back();
  json reply;
  try {
    auto got = ask_json(rewriter, prompts::fill(prompts::kRewrite, {{"question", r.question},
                                                                    {"entity", node(g, entity).title},
                                                                    {"relation", hop.relation},
                                                                    {"target", node(g, target).title},
                                                                    {"property", hop.property}}));
    if (!got) return false;
    reply = std::move(*got);
  } catch (const Outage& o) {
    pend(r, "rewriter: " + o.what);
    return false;
  }
  if (reply.contains("valid") && reply["valid"].is_boolean() && !reply["valid"].get<bool>()) return false;
  auto q = str_field(reply, "question");
  if (q.empty() || q == r.question) return false;
  if (names_in(g, entity, q) || !names_in(g, target, q)) return false;
  r.question = q;
  return true;
}

std::optional<std::string> find_leak(const WalkRecord& r, const KnowledgeGraph& g) {
  const auto q = to_lower(r.question);
  std::set<std::string> anchor;
  if (!r.path.empty())
    for (auto& n : g.names(r.path.back())) anchor.insert(std::move(n));
  for (const auto& e : r.exclusion)
    if (!anchor.count(e) && q.find(e) != std::string::npos) return e;
  if (!r.answer.empty() && q.find(to_lower(r.answer)) != std::string::npos) return r.answer;
  return std::nullopt;
}

void validate_record(WalkRecord& r, const KnowledgeGraph& g, llm::ChatEndpoint* checker, const WalkConfig& cfg) {
  if (auto leak = find_leak(r, g)) return reject(r, RejectReason::ExclusionLeak, "question contains \"" + *leak + "\"");
  if (count_words(r.answer) > static_cast<std::size_t>(cfg.max_answer_words))
    return reject(r, RejectReason::AnswerTooLong, std::to_string(count_words(r.answer)) + " words");
  std::optional<json> reply;
  try {
    reply = ask_json(checker, prompts::fill(prompts::kChecker, {{"question", r.question}, {"answer", r.answer}}));
  } catch (const Outage& o) {
    return pend(r, "checker: " + o.what);
  }
  if (!reply || !(*reply).contains("unique") || !(*reply)["unique"].is_boolean() || !(*reply).contains("interpretable") ||
      !(*reply)["interpretable"].is_boolean())
    return pend(r, "checker reply unreadable");
  if (!(*reply)["unique"].get<bool>()) return reject(r, RejectReason::CheckerFail, "answer not unique");
  if (!(*reply)["interpretable"].get<bool>()) return reject(r, RejectReason::CheckerFail, "question not interpretable");
  r.status = WalkStatus::Accepted;
  r.detail.clear();
}

void reformulate_multimodal(WalkRecord& r, const KnowledgeGraph& g, const ImageSource& images,
                            llm::ChatEndpoint* rewriter, const WalkConfig& cfg) {
  const int anchor = r.path.back();
  const auto& ent = node(g, anchor);
  const std::string property = r.hops.empty() ? "" : r.hops.back().property;
  MultimodalQuery mq{r.question, "", ent.title, r.answer, true};
  auto text_only = [&](const std::string& flag) {
    r.flags.push_back(flag);
    r.multimodal = mq;
  };
  if (!images.provider) return text_only("no_image_provider");
  std::vector<toolbox::SearchHit> hits;
  try {
    hits = images.provider->images(trim(ent.title + " " + property), cfg.image_candidates);
  } catch (const toolbox::ProviderUnavailable& e) {
    log_warn(std::string("image search failed: ") + e.what());
    return text_only("image_search_failed");
  }
  std::string chosen;
  for (const auto& h : hits) {
    if (h.image.empty() || h.width < cfg.min_image_side || h.height < cfg.min_image_side) continue;
    if (images.fetch_ok && !images.fetch_ok(h.image)) continue;
    chosen = h.image;
    break;
  }
  if (chosen.empty()) return text_only("no_usable_image");
  std::string q;
  try {
    auto reply = ask_json(rewriter, prompts::fill(prompts::kVisualRewrite,
                                                  {{"question", r.question}, {"entity", ent.title}, {"property", property}}));
    q = reply ? str_field(*reply, "question") : "";
  } catch (const Outage&) {
    return text_only("visual_rewrite_failed");
  }
  if (q.empty() || names_in(g, anchor, q)) return text_only("visual_rewrite_failed");
  mq.question = q;
  mq.image_ref = chosen;
  mq.text_only = false;
  r.multimodal = mq;
}

WalkRecord run_walk(const KnowledgeGraph& g, int seed_node, std::uint64_t rng_seed, const WalkEndpoints& ep,
                    const WalkConfig& cfg, const ImageSource* images) {
  WalkRecord r = start_walk(g, seed_node, rng_seed);
  std::mt19937_64 rng(rng_seed);
  const auto span = static_cast<std::uint64_t>(std::max(cfg.max_depth - cfg.min_depth, 0)) + 1;
  r.target_depth = cfg.min_depth + static_cast<int>(bounded_draw(rng, span));

  seed_question(r, g, ep.qa, cfg);
  if (r.status != WalkStatus::Active) return r;
  auto u = uniqueness_check(r.answer, ep.evaluator);
  r.uniqueness_category = u.category;
  if (u.verdict == Uniqueness::Pending) {
    pend(r, "evaluator unavailable");
    return r;
  }
  if (u.verdict == Uniqueness::Fail) {
    reject(r, RejectReason::NotUnique, u.category);
    return r;
  }

  while (static_cast<int>(r.hops.size()) < r.target_depth) {
    walk_step(r, g, rng, ep.extractor, cfg);
    if (r.status != WalkStatus::Active) return r;
    if (rewrite_question(r, g, ep.rewriter)) continue;
    if (r.status != WalkStatus::Active) return r;
    // Invalid rewrite: drop the hop and resample a different target.
    r.tried.insert(r.path.back());
    r.path.pop_back();
    r.hops.pop_back();
    rebuild_exclusion(r, g);
    if (++r.resamples > cfg.max_resamples) {
      reject(r, RejectReason::RewriteInvalid, "rewrite invalid after " + std::to_string(cfg.max_resamples) + " resamples");
      return r;
    }
  }
  validate_record(r, g, ep.checker, cfg);
  if (r.status == WalkStatus::Accepted && cfg.multimodal)
    reformulate_multimodal(r, g, images ? *images : ImageSource{}, ep.rewriter, cfg);
  return r;
}

std::vector<WalkRecord> run_walks(const KnowledgeGraph& g, const std::vector<int>& seeds, const WalkEndpoints& ep,
                                  const WalkConfig& cfg, const ImageSource* images) {
  std::vector<WalkRecord> out(seeds.size());
  const auto n = static_cast<std::int64_t>(seeds.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    out[k] = run_walk(g, seeds[k], mix_seed(cfg.seed, k), ep, cfg, images);
  }
  return out;
}

std::vector<WalkRecord> run_walks_serial(const KnowledgeGraph& g, const std::vector<int>& seeds,
                                         const WalkEndpoints& ep, const WalkConfig& cfg,
                                         const ImageSource* images) {
  std::vector<WalkRecord> out;
  out.reserve(seeds.size());
  for (std::size_t k = 0; k < seeds.size(); ++k) out.push_back(run_walk(g, seeds[k], mix_seed(cfg.seed, k), ep, cfg, images));
  return out;
}

std::vector<int> sample_seed_nodes(const KnowledgeGraph& g, std::size_t n, std::uint64_t seed) {
  std::vector<int> pool;
  for (std::size_t i = 0; i < g.nodes.size(); ++i)
    if (!is_blank(g.nodes[i].intro) && !g.pervasive[i]) pool.push_back(static_cast<int>(i));
  std::vector<int> out;
  if (pool.empty()) return out;
  std::mt19937_64 rng(mix_seed(seed, 0x5eed));
  for (std::size_t i = 0; i < n; ++i) out.push_back(pool[bounded_draw(rng, pool.size())]);
  return out;
}

}  // namespace mmagent::querygen
