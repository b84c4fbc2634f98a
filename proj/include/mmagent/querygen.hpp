#pragma once

// Multi-hop query generation by constrained random walks over a local
// encyclopedia link graph.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "mmagent/llm.hpp"
#include "mmagent/search_provider.hpp"
#include "mmagent/util.hpp"

namespace mmagent::querygen {

// ---- graph -----------------------------------------------------------------------

/// One dump row: {"title", "text"} with [[Target]] / [[Target|label]] markup,
/// or a redirect ({"title", "redirect"} or text "#REDIRECT [[Target]]").
struct RawPage {
  std::string title;
  std::string text;
  std::string redirect;
  std::vector<std::string> aliases;
};

/// Canonical page title: trimmed, underscores as spaces, whitespace collapsed,
/// first letter upper-cased.
std::string normalize_title(std::string_view s);

/// Link targets in wikitext order (normalized, section anchors dropped).
std::vector<std::string> extract_links(std::string_view text);

/// Wikitext to plain text: links become their labels, bold/italic quotes go.
std::string strip_markup(std::string_view text);

/// Text before the first "== heading ==" line.
std::string lead_section(std::string_view text);

/// '''bold''' spans of the first lead paragraph.
std::vector<std::string> bold_lead_terms(std::string_view text);

/// Reads a JSONL dump; corrupt rows are skipped and reported in `warnings`.
std::vector<RawPage> read_dump(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr);
RawPage page_from_json(const json& j);  // throws DataError

struct Edge {
  int target = 0;
  int freq = 0;  // mentions on the source page
};

struct Node {
  std::string title;
  std::vector<std::string> aliases;
  std::string intro;  // plain text
  std::string body;   // plain text of the whole page
};

struct GraphOptions {
  double pervasive_fraction = 0.005;  // top share of pages by document frequency
};

struct KnowledgeGraph {
  std::vector<Node> nodes;
  std::vector<std::vector<Edge>> out;  // sorted by target id
  std::vector<int> doc_freq;           // number of pages linking to the node
  std::vector<bool> pervasive;
  std::vector<std::string> warnings;

  std::optional<int> find(std::string_view title) const;  // title or alias
  std::size_t edge_count() const;
  /// Title and aliases, lower-cased.
  std::vector<std::string> names(int node) const;

  std::map<std::string, int> index;  // normalized title -> node
  std::map<std::string, int> alias_index;  // lower-cased alias -> node
};

/// Link extraction runs per page in parallel (OpenMP); the serial variant is
/// the reference. Both give identical graphs.
KnowledgeGraph build_graph(const std::vector<RawPage>& pages, const GraphOptions& opt = {});
KnowledgeGraph build_graph_serial(const std::vector<RawPage>& pages, const GraphOptions& opt = {});

// ---- walks --------------------------------------------------------------------------

enum class WalkStatus { Active, Accepted, Rejected, Pending };
enum class RejectReason {
  None,
  SeedFailure,
  AnswerTooLong,
  Ungrounded,
  NotUnique,
  DeadEnd,
  ExtractionFailure,
  RewriteInvalid,
  ExclusionLeak,
  CheckerFail,
};

std::string_view walk_status_str(WalkStatus s);
std::string_view reject_reason_str(RejectReason r);

struct Hop {
  std::string from;
  std::string to;
  std::string relation;
  std::string property;
};

struct MultimodalQuery {
  std::string question;
  std::string image_ref;
  std::string entity;
  std::string answer;
  bool text_only = false;
};

struct WalkRecord {
  std::string seed;
  std::vector<int> path;  // node ids, seed first
  std::vector<Hop> hops;
  std::string seed_question;
  std::string question;
  std::string answer;                // fixed at seeding
  std::set<std::string> exclusion;   // lower-cased names, aliases, pervasive terms
  std::set<int> tried;               // targets dropped after invalid rewrites
  WalkStatus status = WalkStatus::Active;
  RejectReason reason = RejectReason::None;
  std::string detail;
  std::string uniqueness_category;
  int target_depth = 0;
  int resamples = 0;
  std::uint64_t rng_seed = 0;
  std::vector<std::string> flags;
  std::optional<MultimodalQuery> multimodal;
};

json to_json(const WalkRecord& r, const KnowledgeGraph& g);

struct WalkConfig {
  int window = 5;
  int min_depth = 2;
  int max_depth = 4;
  int max_answer_words = 6;
  int max_resamples = 3;
  bool require_grounded_answer = true;
  std::uint64_t seed = 0;
  bool multimodal = false;
  int min_image_side = 512;
  int image_candidates = 10;
};

/// Model roles. Null roles leave the walk Pending at the step that needs them.
struct WalkEndpoints {
  llm::ChatEndpoint* qa = nullptr;
  llm::ChatEndpoint* evaluator = nullptr;
  llm::ChatEndpoint* extractor = nullptr;
  llm::ChatEndpoint* rewriter = nullptr;
  llm::ChatEndpoint* checker = nullptr;
};

using ImageCheck = std::function<bool(const std::string& url)>;

struct ImageSource {
  toolbox::SearchProvider* provider = nullptr;
  ImageCheck fetch_ok;  // empty = accept every URL
};

/// Fresh record at `node` with the pervasive terms and seed names excluded.
WalkRecord start_walk(const KnowledgeGraph& g, int node, std::uint64_t rng_seed);
/// Rebuilds the exclusion set from the path and the pervasive terms.
void rebuild_exclusion(WalkRecord& r, const KnowledgeGraph& g);

void seed_question(WalkRecord& r, const KnowledgeGraph& g, llm::ChatEndpoint* qa, const WalkConfig& cfg);

enum class Uniqueness { Pass, Fail, Pending };
struct UniquenessResult {
  Uniqueness verdict = Uniqueness::Pending;
  std::string category;
};
UniquenessResult uniqueness_check(const std::string& answer, llm::ChatEndpoint* evaluator);

void walk_step(WalkRecord& r, const KnowledgeGraph& g, std::mt19937_64& rng, llm::ChatEndpoint* extractor,
               const WalkConfig& cfg);

/// Returns false when the rewrite is invalid (the caller resamples). Outages
/// set the record Pending.
bool rewrite_question(WalkRecord& r, const KnowledgeGraph& g, llm::ChatEndpoint* rewriter);

/// First excluded string (or the answer) found in the question; the current
/// anchor entity is exempt.
std::optional<std::string> find_leak(const WalkRecord& r, const KnowledgeGraph& g);

void validate_record(WalkRecord& r, const KnowledgeGraph& g, llm::ChatEndpoint* checker, const WalkConfig& cfg);

void reformulate_multimodal(WalkRecord& r, const KnowledgeGraph& g, const ImageSource& images,
                            llm::ChatEndpoint* rewriter, const WalkConfig& cfg);

/// Seed, uniqueness, hops with rewrites (resampling invalid ones), validation
/// and optional multimodal reformulation.
WalkRecord run_walk(const KnowledgeGraph& g, int seed_node, std::uint64_t rng_seed, const WalkEndpoints& ep,
                    const WalkConfig& cfg, const ImageSource* images = nullptr);

/// Walk i uses rng seed mix_seed(cfg.seed, i). The parallel variant runs walks
/// with OpenMP; both give identical records.
std::vector<WalkRecord> run_walks(const KnowledgeGraph& g, const std::vector<int>& seeds, const WalkEndpoints& ep,
                                  const WalkConfig& cfg, const ImageSource* images = nullptr);
std::vector<WalkRecord> run_walks_serial(const KnowledgeGraph& g, const std::vector<int>& seeds,
                                         const WalkEndpoints& ep, const WalkConfig& cfg,
                                         const ImageSource* images = nullptr);

/// `n` seed nodes with a lead section, drawn with replacement.
std::vector<int> sample_seed_nodes(const KnowledgeGraph& g, std::size_t n, std::uint64_t seed);

// ---- offline model ------------------------------------------------------------------

/// Deterministic stand-in for every walk role, driven by the prompt fields.
/// Seeds a year question from the lead, calls every answer with a digit or a
/// capital letter concrete, relates pages as "connected to", and rewrites by
/// name substitution. Used for dry runs and tests.
class OfflineWalkModel : public llm::ChatEndpoint {
 public:
  llm::ChatResponse complete(const llm::ChatRequest& req) override;
};

}  // namespace mmagent::querygen
