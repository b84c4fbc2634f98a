#include <omp.h>

#include <algorithm>
#include <cctype>

#include "mmagent/querygen.hpp"

namespace mmagent::querygen {

namespace {

bool is_heading(std::string_view line) {
  auto t = trim(line);
  return t.size() >= 4 && starts_with(t, "==") && t.substr(t.size() - 2) == "==";
}

std::string redirect_target(std::string_view text) {
  auto t = trim(text);
  if (!starts_with(to_lower(t.substr(0, std::min<std::size_t>(t.size(), 9))), "#redirect")) return "";
  auto links = extract_links(t);
  return links.empty() ? "" : links.front();
}

struct Parsed {
  std::vector<std::string> links;
  std::string intro;
  std::string body;
  std::vector<std::string> bold;
};

Parsed parse_page(const RawPage& p) {
  Parsed out;
  out.links = extract_links(p.text);
  out.intro = trim(strip_markup(lead_section(p.text)));
  out.body = strip_markup(p.text);
  out.bold = bold_lead_terms(p.text);
  return out;
}

KnowledgeGraph assemble(const std::vector<RawPage>& pages, const std::vector<Parsed>& parsed, const GraphOptions& opt) {
  KnowledgeGraph g;
  std::vector<std::size_t> content;
  std::vector<std::pair<std::string, std::string>> redirects;
  for (std::size_t i = 0; i < pages.size(); ++i) {
    const auto& p = pages[i];
    auto title = normalize_title(p.title);
    if (title.empty()) {
      g.warnings.push_back("page " + std::to_string(i) + ": empty title");
      continue;
    }
    auto redirect = p.redirect.empty() ? redirect_target(p.text) : normalize_title(p.redirect);
    if (!redirect.empty()) {
      redirects.emplace_back(title, redirect);
      continue;
    }
    if (g.index.count(title)) {
      g.warnings.push_back("page " + std::to_string(i) + ": duplicate title " + title);
      continue;
    }
    g.index[title] = static_cast<int>(g.nodes.size());
    Node n;
    n.title = title;
    n.intro = parsed[i].intro;
    n.body = parsed[i].body;
    g.nodes.push_back(std::move(n));
    content.push_back(i);
  }

  auto add_alias = [&](int node, const std::string& alias) {
    auto a = trim(alias);
    if (a.empty() || to_lower(a) == to_lower(g.nodes[static_cast<std::size_t>(node)].title)) return;
    auto& list = g.nodes[static_cast<std::size_t>(node)].aliases;
    if (std::find(list.begin(), list.end(), a) != list.end()) return;
    list.push_back(a);
    g.alias_index.emplace(to_lower(a), node);
  };
  for (std::size_t k = 0; k < content.size(); ++k) {
    const auto i = content[k];
    for (const auto& a : pages[i].aliases) add_alias(static_cast<int>(k), a);
    for (const auto& b : parsed[i].bold) add_alias(static_cast<int>(k), b);
  }
  for (const auto& [from, to] : redirects) {
    auto it = g.index.find(to);
    if (it == g.index.end()) {
      g.warnings.push_back("redirect " + from + " -> " + to + ": target missing");
      continue;
    }
    add_alias(it->second, from);
  }

  const std::map<std::string, std::string> redirect_map(redirects.begin(), redirects.end());
  auto resolve = [&](const std::string& t) -> std::optional<int> {
    if (auto it = g.index.find(t); it != g.index.end()) return it->second;
    if (auto r = redirect_map.find(t); r != redirect_map.end())
      if (auto it = g.index.find(r->second); it != g.index.end()) return it->second;
    return std::nullopt;
  };

  g.out.assign(g.nodes.size(), {});
  g.doc_freq.assign(g.nodes.size(), 0);
  for (std::size_t k = 0; k < content.size(); ++k) {
    std::map<int, int> counts;
    for (const auto& l : parsed[content[k]].links) {
      auto t = resolve(l);
      if (!t || *t == static_cast<int>(k)) continue;
      counts[*t]++;
    }
    for (const auto& [t, n] : counts) {
      g.out[k].push_back({t, n});
      g.doc_freq[static_cast<std::size_t>(t)]++;
    }
  }

  g.pervasive.assign(g.nodes.size(), false);
  const auto n_pervasive = static_cast<std::size_t>(opt.pervasive_fraction * static_cast<double>(g.nodes.size()));
  std::vector<int> order(g.nodes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const auto da = g.doc_freq[static_cast<std::size_t>(a)], db = g.doc_freq[static_cast<std::size_t>(b)];
    return da != db ? da > db : g.nodes[static_cast<std::size_t>(a)].title < g.nodes[static_cast<std::size_t>(b)].title;
  });
  for (std::size_t i = 0; i < n_pervasive && i < order.size(); ++i)
    if (g.doc_freq[static_cast<std::size_t>(order[i])] > 0) g.pervasive[static_cast<std::size_t>(order[i])] = true;
  for (const auto& w : g.warnings) log_warn("graph: " + w);
  return g;
}

}  // namespace

std::string normalize_title(std::string_view s) {
  std::string t = collapse_whitespace(replace_all(std::string(s), "_", " "));
  if (!t.empty()) t[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(t[0])));
  return t;
}

std::vector<std::string> extract_links(std::string_view text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while ((pos = text.find("[[", pos)) != std::string_view::npos) {
    const auto close = text.find("]]", pos + 2);
    if (close == std::string_view::npos) break;
    auto inner = text.substr(pos + 2, close - pos - 2);
    pos = close + 2;
    if (inner.find('[') != std::string_view::npos) continue;
    auto target = inner.substr(0, inner.find('|'));
    target = target.substr(0, target.find('#'));
    auto t = normalize_title(target);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

std::string strip_markup(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (text.compare(i, 2, "[[") == 0) {
      const auto close = text.find("]]", i + 2);
      if (close != std::string_view::npos) {
        auto inner = text.substr(i + 2, close - i - 2);
        const auto bar = inner.find('|');
        auto label = bar == std::string_view::npos ? inner.substr(0, inner.find('#')) : inner.substr(bar + 1);
        out += label;
        i = close + 2;
        continue;
      }
    }
    if (text[i] == '\'' && i + 1 < text.size() && text[i + 1] == '\'') {
      while (i < text.size() && text[i] == '\'') ++i;
      continue;
    }
    out += text[i++];
  }
  std::string cleaned;
  for (const auto& line : split_lines(out)) {
    if (is_heading(line)) continue;
    cleaned += line;
    cleaned += '\n';
  }
  return cleaned;
}

std::string lead_section(std::string_view text) {
  std::string out;
  for (const auto& line : split_lines(text)) {
    if (is_heading(line)) break;
    out += line;
    out += '\n';
  }
  return out;
}

std::vector<std::string> bold_lead_terms(std::string_view text) {
  auto lead = lead_section(text);
  auto para_end = lead.find("\n\n");
  std::string_view para(lead);
  if (para_end != std::string::npos) para = para.substr(0, para_end);
  std::vector<std::string> out;
  std::size_t pos = 0;
  while ((pos = para.find("'''", pos)) != std::string_view::npos) {
    const auto close = para.find("'''", pos + 3);
    if (close == std::string_view::npos) break;
    auto term = trim(strip_markup(para.substr(pos + 3, close - pos - 3)));
    if (!term.empty()) out.push_back(term);
    pos = close + 3;
  }
  return out;
}

RawPage page_from_json(const json& j) {
  if (!j.is_object() || !j.contains("title") || !j["title"].is_string())
    throw DataError("page without a string title");
  RawPage p;
  p.title = j["title"].get<std::string>();
  if (j.contains("redirect") && j["redirect"].is_string()) p.redirect = j["redirect"].get<std::string>();
  if (j.contains("text")) {
    if (!j["text"].is_string()) throw DataError("page " + p.title + ": text is not a string");
    p.text = j["text"].get<std::string>();
  } else if (p.redirect.empty()) {
    throw DataError("page " + p.title + ": no text");
  }
  if (j.contains("aliases")) {
    if (!j["aliases"].is_array()) throw DataError("page " + p.title + ": aliases is not an array");
    for (const auto& a : j["aliases"])
      if (a.is_string()) p.aliases.push_back(a.get<std::string>());
  }
  return p;
}

std::vector<RawPage> read_dump(const std::filesystem::path& path, std::vector<std::string>* warnings) {
  std::vector<std::size_t> bad;
  auto rows = read_jsonl(path, &bad);
  std::vector<RawPage> out;
  auto warn = [&](const std::string& w) {
    log_warn("dump: " + w);
    if (warnings) warnings->push_back(w);
  };
  for (auto n : bad) warn("line " + std::to_string(n) + ": not JSON");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    try {
      out.push_back(page_from_json(rows[i]));
    } catch (const DataError& e) {
      warn(std::string("skipping page: ") + e.what());
    }
  }
  return out;
}

std::optional<int> KnowledgeGraph::find(std::string_view title) const {
  if (auto it = index.find(normalize_title(title)); it != index.end()) return it->second;
  if (auto it = alias_index.find(to_lower(trim(title))); it != alias_index.end()) return it->second;
  return std::nullopt;
}

std::size_t KnowledgeGraph::edge_count() const {
  std::size_t n = 0;
  for (const auto& e : out) n += e.size();
  return n;
}

std::vector<std::string> KnowledgeGraph::names(int node) const {
  const auto& n = nodes[static_cast<std::size_t>(node)];
  std::vector<std::string> out{to_lower(n.title)};
  for (const auto& a : n.aliases) out.push_back(to_lower(a));
  return out;
}

KnowledgeGraph build_graph(const std::vector<RawPage>& pages, const GraphOptions& opt) {
  std::vector<Parsed> parsed(pages.size());
  const auto n = static_cast<std::int64_t>(pages.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::int64_t i = 0; i < n; ++i) parsed[static_cast<std::size_t>(i)] = parse_page(pages[static_cast<std::size_t>(i)]);
  return assemble(pages, parsed, opt);
}

KnowledgeGraph build_graph_serial(const std::vector<RawPage>& pages, const GraphOptions& opt) {
  std::vector<Parsed> parsed;
  parsed.reserve(pages.size());
  for (const auto& p : pages) parsed.push_back(parse_page(p));
  return assemble(pages, parsed, opt);
}

}  // namespace mmagent::querygen
