// SPDX-License-Identifier: Apache-2.0
#include "icpipe/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <numeric>
#include <regex>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "icpipe/error.hpp"
#include "icpipe/rng.hpp"

namespace icpipe {

json CleanReport::to_json() const {
  return json{{"urls", urls},
              {"references", references},
              {"page_numbers", page_numbers},
              {"headers_footers", headers_footers},
              {"figure_table_artifacts", figure_table_artifacts},
              {"nontext_chars", nontext_chars}};
}

CleanReport CleanReport::from_json(const json& j) {
  CleanReport r;
  r.urls = j.value("urls", 0u);
  r.references = j.value("references", 0u);
  r.page_numbers = j.value("page_numbers", 0u);
  r.headers_footers = j.value("headers_footers", 0u);
  r.figure_table_artifacts = j.value("figure_table_artifacts", 0u);
  r.nontext_chars = j.value("nontext_chars", 0u);
  return r;
}

json CleanDocument::to_json() const {
  return json{{"id", id}, {"text", text}, {"clean_report", clean_report.to_json()}};
}

CleanDocument CleanDocument::from_json(const json& j) {
  CleanDocument d;
  d.id = j.at("id").get<std::string>();
  d.text = j.at("text").get<std::string>();
  if (j.contains("clean_report")) d.clean_report = CleanReport::from_json(j["clean_report"]);
  return d;
}

// --- clean_text ----------------------------------------------------------

namespace {

bool is_page_number_line(const std::string& line) {
  std::string t = trim(line);
  if (t.empty()) return false;
  static const std::regex pat(R"(^(-\s*\d+\s*-|\d+|[Pp]age\s+\d+|[Pp]\.\s*\d+)$)");
  return std::regex_match(t, pat);
}

bool is_form_feed_line(const std::string& line) {
  bool saw_ff = false;
  for (char c : line) {
    if (c == '\f') saw_ff = true;
    else if (!std::isspace(static_cast<unsigned char>(c))) return false;
  }
  return saw_ff;
}

bool is_caption_line(const std::string& line) {
  static const std::regex pat(R"(^(figure|fig\.?|table)\s*\d+\s*[:.\-].*)",
                              std::regex::icase);
  return std::regex_match(trim(line), pat);
}

std::string heading_key(const std::string& line) {
  std::string t = trim(line);
  size_t b = 0;
  while (b < t.size() && (t[b] == '#' || t[b] == '*' || t[b] == '=')) ++b;
  t = trim(t.substr(b));
  while (!t.empty() && (t.back() == ':' || t.back() == '*' || t.back() == '=')) t.pop_back();
  return to_lower(trim(t));
}

}  // namespace

std::pair<std::string, CleanReport> clean_text(const std::string& raw, const CleanRules& rules) {
  CleanReport report;
  if (raw.empty()) return {"", report};

  std::vector<std::string> lines = split_lines(raw);

  // Reference-list truncation: last matching heading in the document tail.
  {
    size_t offset = 0;
    size_t cut = lines.size();
    size_t tail_start =
        static_cast<size_t>(static_cast<double>(raw.size()) * (1.0 - rules.tail_fraction));
    for (size_t i = 0; i < lines.size(); ++i) {
      std::string key = heading_key(lines[i]);
      if (offset >= tail_start) {
        for (const auto& h : rules.reference_headings) {
          if (key == to_lower(h)) cut = i;
        }
      }
      offset += lines[i].size() + 1;
    }
    if (cut < lines.size()) {
      lines.resize(cut);
      report.references += 1;
    }
  }

  // Page boundaries and the headers/footers that repeat next to them.
  std::vector<char> is_boundary(lines.size(), 0);
  for (size_t i = 0; i < lines.size(); ++i) {
    if (is_page_number_line(lines[i]) || is_form_feed_line(lines[i])) is_boundary[i] = 1;
  }
  std::map<std::string, int> adjacency;  // trimmed line content -> boundary adjacency count
  for (size_t i = 0; i < lines.size(); ++i) {
    if (!is_boundary[i]) continue;
    for (int d : {-1, 1}) {
      // nearest non-blank neighbor within two lines
      for (int step = 1; step <= 2; ++step) {
        long j = static_cast<long>(i) + d * step;
        if (j < 0 || j >= static_cast<long>(lines.size())) break;
        std::string t = trim(lines[static_cast<size_t>(j)]);
        if (t.empty()) continue;
        if (!is_boundary[static_cast<size_t>(j)]) adjacency[t] += 1;
        break;
      }
    }
  }
  std::set<std::string> header_footer_lines;
  for (const auto& [content, count] : adjacency) {
    if (count >= rules.header_footer_min_pages) header_footer_lines.insert(content);
  }

  std::vector<std::string> kept;
  kept.reserve(lines.size());
  for (size_t i = 0; i < lines.size(); ++i) {
    if (is_boundary[i]) {
      report.page_numbers += 1;
      continue;
    }
    if (is_caption_line(lines[i])) {
      report.figure_table_artifacts += 1;
      continue;
    }
    std::string t = trim(lines[i]);
    if (!t.empty() && header_footer_lines.count(t)) {
      report.headers_footers += 1;
      continue;
    }
    kept.push_back(lines[i]);
  }

  std::string text;
  for (size_t i = 0; i < kept.size(); ++i) {
    text += kept[i];
    if (i + 1 < kept.size()) text += '\n';
  }

  // URLs.
  {
    static const std::regex url_pat(R"((https?://[^\s]+|www\.[^\s]+))");
    std::string out;
    auto begin = std::sregex_iterator(text.begin(), text.end(), url_pat);
    auto end = std::sregex_iterator();
    size_t last = 0;
    for (auto it = begin; it != end; ++it) {
      report.urls += 1;
      out += text.substr(last, static_cast<size_t>(it->position()) - last);
      last = static_cast<size_t>(it->position() + it->length());
    }
    out += text.substr(last);
    text = std::move(out);
  }

  // Control characters and replacement-character garbles.
  {
    std::string out;
    out.reserve(text.size());
    for (size_t i = 0; i < text.size();) {
      unsigned char c = static_cast<unsigned char>(text[i]);
      if (i + 2 < text.size() && c == 0xEF && static_cast<unsigned char>(text[i + 1]) == 0xBF &&
          static_cast<unsigned char>(text[i + 2]) == 0xBD) {
        report.nontext_chars += 1;  // U+FFFD
        i += 3;
        continue;
      }
      if (c < 0x20 && c != '\n' && c != '\t') {
        report.nontext_chars += 1;
        ++i;
        continue;
      }
      out += static_cast<char>(c);
      ++i;
    }
    text = std::move(out);
  }

  // Whitespace normalization: tabs to spaces, single spaces, trailing space
  // stripped, at most two consecutive newlines, outer whitespace trimmed.
  {
    std::string out;
    out.reserve(text.size());
    int newline_run = 0;
    bool space_pending = false;
    for (char c : text) {
      if (c == '\t') c = ' ';
      if (c == ' ') {
        space_pending = true;
        continue;
      }
      if (c == '\n') {
        space_pending = false;  // drops trailing spaces
        if (newline_run < 2) out += '\n';
        ++newline_run;
        continue;
      }
      if (space_pending && !out.empty() && out.back() != '\n') out += ' ';
      space_pending = false;
      newline_run = 0;
      out += c;
    }
    // trim
    size_t b = out.find_first_not_of(" \n");
    size_t e = out.find_last_not_of(" \n");
    text = (b == std::string::npos) ? "" : out.substr(b, e - b + 1);
  }

  return {text, report};
}

// --- deduplication -------------------------------------------------------

namespace {

std::vector<std::string> lowercase_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur += static_cast<char>(std::tolower(c));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

struct UnionFind {
  std::vector<size_t> parent;
  explicit UnionFind(size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  size_t find(size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  // keeps the smaller index as root so "first occurrence wins" falls out
  bool unite(size_t a, size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (a > b) std::swap(a, b);
    parent[b] = a;
    return true;
  }
};

}  // namespace

std::vector<uint64_t> shingle_hashes(const std::string& text, int shingle_size) {
  std::vector<std::string> words = lowercase_words(text);
  std::vector<uint64_t> out;
  if (words.empty()) return out;
  size_t k = static_cast<size_t>(shingle_size);
  if (words.size() < k) k = words.size();
  for (size_t i = 0; i + k <= words.size(); ++i) {
    uint64_t h = 1469598103934665603ULL;
    for (size_t j = 0; j < k; ++j) {
      h = fnv1a64(words[i + j], h);
      h = fnv1a64("\x1f", h);
    }
    out.push_back(h);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<uint64_t> minhash_signature(const std::vector<uint64_t>& shingles,
                                        int num_permutations, uint64_t seed) {
  std::vector<uint64_t> sig(static_cast<size_t>(num_permutations), UINT64_MAX);
  if (shingles.empty()) return sig;
  Rng rng(seed);
  for (int p = 0; p < num_permutations; ++p) {
    uint64_t a = rng.next() | 1;  // odd multiplier
    uint64_t b = rng.next();
    uint64_t best = UINT64_MAX;
    for (uint64_t x : shingles) {
      uint64_t v = a * x + b;
      if (v < best) best = v;
    }
    sig[static_cast<size_t>(p)] = best;
  }
  return sig;
}

double minhash_estimate(const std::vector<uint64_t>& a, const std::vector<uint64_t>& b) {
  if (a.size() != b.size() || a.empty())
    throw PipelineError(Errc::internal, "signature size mismatch");
  size_t match = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i]) ++match;
  }
  return static_cast<double>(match) / static_cast<double>(a.size());
}

json DedupReport::to_json() const {
  return json{{"input_count", input_count},
              {"kept_count", kept_count},
              {"exact_duplicate_groups", exact_duplicate_groups},
              {"near_duplicate_groups", near_duplicate_groups},
              {"jaccard_threshold", jaccard_threshold}};
}

std::pair<std::vector<CleanDocument>, DedupReport> deduplicate(
    const std::vector<CleanDocument>& docs, const DedupParams& params) {
  if (params.jaccard_threshold <= 0 || params.jaccard_threshold > 1)
    throw PipelineError(Errc::config_error, "jaccard threshold must be in (0,1]");
  size_t n = docs.size();
  DedupReport report;
  report.input_count = n;
  report.jaccard_threshold = params.jaccard_threshold;

  UnionFind uf(n);

  // Exact duplicates by content hash.
  std::unordered_map<uint64_t, size_t> first_by_hash;
  std::unordered_set<uint64_t> exact_groups;
  for (size_t i = 0; i < n; ++i) {
    uint64_t h = fnv1a64(docs[i].text);
    auto [it, inserted] = first_by_hash.try_emplace(h, i);
    if (!inserted) {
      uf.unite(it->second, i);
      exact_groups.insert(h);
    }
  }
  report.exact_duplicate_groups = exact_groups.size();

  // Near duplicates: MinHash signatures, LSH banding for candidates.
  std::vector<std::vector<uint64_t>> sigs(n);
  std::vector<char> has_shingles(n, 0);
  for (size_t i = 0; i < n; ++i) {
    auto sh = shingle_hashes(docs[i].text, params.shingle_size);
    has_shingles[i] = !sh.empty();
    sigs[i] = minhash_signature(sh, params.num_permutations, params.seed);
  }
  int rows = params.num_permutations / params.bands;
  if (rows < 1) rows = 1;
  std::unordered_map<uint64_t, std::vector<size_t>> buckets;
  for (size_t i = 0; i < n; ++i) {
    if (!has_shingles[i]) continue;
    for (int band = 0; band * rows < params.num_permutations; ++band) {
      uint64_t h = fnv1a64_u64(static_cast<uint64_t>(band));
      for (int r = 0; r < rows && band * rows + r < params.num_permutations; ++r) {
        h = fnv1a64_u64(sigs[i][static_cast<size_t>(band * rows + r)], h);
      }
      buckets[h].push_back(i);
    }
  }
  std::set<std::pair<size_t, size_t>> candidates;
  for (const auto& [key, members] : buckets) {
    for (size_t a = 0; a < members.size(); ++a) {
      for (size_t b = a + 1; b < members.size(); ++b) {
        candidates.emplace(std::min(members[a], members[b]), std::max(members[a], members[b]));
      }
    }
  }
  size_t near_unions = 0;
  for (const auto& [a, b] : candidates) {
    if (minhash_estimate(sigs[a], sigs[b]) >= params.jaccard_threshold) {
      if (uf.unite(a, b)) ++near_unions;
    }
  }
  // Count multi-member groups that required a near-dup union.
  if (near_unions > 0) {
    std::unordered_map<size_t, size_t> group_size;
    for (size_t i = 0; i < n; ++i) group_size[uf.find(i)] += 1;
    size_t exact_only = 0;
    // groups explained entirely by exact hashing
    std::unordered_map<uint64_t, size_t> hash_count;
    for (const auto& d : docs) hash_count[fnv1a64(d.text)] += 1;
    std::unordered_set<size_t> seen_roots;
    for (size_t i = 0; i < n; ++i) {
      size_t root = uf.find(i);
      if (!seen_roots.insert(root).second) continue;
      if (group_size[root] < 2) continue;
      if (hash_count[fnv1a64(docs[i].text)] == group_size[root]) ++exact_only;
    }
    size_t multi = 0;
    for (const auto& [root, sz] : group_size) {
      if (sz >= 2) ++multi;
    }
    report.near_duplicate_groups = multi - exact_only;
  }

  std::vector<CleanDocument> kept;
  for (size_t i = 0; i < n; ++i) {
    if (uf.find(i) == i) kept.push_back(docs[i]);
  }
  report.kept_count = kept.size();
  return {std::move(kept), report};
}

// --- code normalization --------------------------------------------------

namespace {

std::string expand_tabs(const std::string& line, int tabstop = 4) {
  std::string out;
  for (char c : line) {
    if (c == '\t') {
      do {
        out += ' ';
      } while (out.size() % static_cast<size_t>(tabstop) != 0);
    } else {
      out += c;
    }
  }
  return out;
}

size_t leading_spaces(const std::string& line) {
  size_t i = 0;
  while (i < line.size() && line[i] == ' ') ++i;
  return i;
}

std::string rstrip(const std::string& line) {
  size_t e = line.find_last_not_of(" \t");
  return e == std::string::npos ? "" : line.substr(0, e + 1);
}

void reindent_block(std::vector<std::string>& block, int unit) {
  for (auto& line : block) line = rstrip(expand_tabs(line));
  std::set<size_t> widths;
  for (const auto& line : block) {
    if (!line.empty()) widths.insert(leading_spaces(line));
  }
  if (widths.empty()) return;
  size_t base = (*widths.begin() / static_cast<size_t>(unit)) * static_cast<size_t>(unit);
  std::map<size_t, size_t> target;
  size_t rank = 0;
  for (size_t w : widths) target[w] = base + (rank++) * static_cast<size_t>(unit);
  for (auto& line : block) {
    if (line.empty()) continue;
    size_t w = leading_spaces(line);
    line = std::string(target[w], ' ') + line.substr(w);
  }
}

bool is_fence(const std::string& line) {
  std::string t = trim(line);
  return starts_with(t, "```") || starts_with(t, "~~~");
}

}  // namespace

CodeNormResult normalize_code_blocks(const CleanDocument& doc,
                                     std::optional<std::string> /*language_hint*/,
                                     int indent_unit) {
  CodeNormResult result;
  result.doc = doc;
  std::vector<std::string> lines = split_lines(doc.text);
  std::vector<std::string> out;
  out.reserve(lines.size());

  size_t i = 0;
  while (i < lines.size()) {
    if (is_fence(lines[i])) {
      size_t close = i + 1;
      while (close < lines.size() && !is_fence(lines[close])) ++close;
      if (close == lines.size()) {
        // unterminated fence: flag and pass the tail through untouched
        result.unbalanced_fence = true;
        for (; i < lines.size(); ++i) out.push_back(lines[i]);
        break;
      }
      out.push_back(lines[i]);
      std::vector<std::string> block(lines.begin() + static_cast<long>(i) + 1,
                                     lines.begin() + static_cast<long>(close));
      reindent_block(block, indent_unit);
      for (auto& b : block) out.push_back(std::move(b));
      out.push_back(lines[close]);
      result.blocks_normalized += 1;
      i = close + 1;
      continue;
    }
    // heuristic block: >=3 consecutive non-blank lines indented >= 4 spaces
    size_t j = i;
    while (j < lines.size() && !trim(lines[j]).empty() &&
           leading_spaces(expand_tabs(lines[j])) >= 4 && !is_fence(lines[j])) {
      ++j;
    }
    if (j - i >= 3) {
      std::vector<std::string> block(lines.begin() + static_cast<long>(i),
                                     lines.begin() + static_cast<long>(j));
      reindent_block(block, indent_unit);
      for (auto& b : block) out.push_back(std::move(b));
      result.blocks_normalized += 1;
      i = j;
      continue;
    }
    out.push_back(lines[i]);
    ++i;
  }

  std::string text;
  for (size_t k = 0; k < out.size(); ++k) {
    text += out[k];
    if (k + 1 < out.size()) text += '\n';
  }
  result.doc.text = std::move(text);
  return result;
}

// --- mix planning --------------------------------------------------------

json MixPlan::to_json() const {
  json entries_j = json::array();
  for (const auto& e : entries) {
    entries_j.push_back(json{{"data_type", e.data_type},
                             {"original_tokens", e.original_tokens},
                             {"repeat", e.repeat},
                             {"training_tokens", e.training_tokens},
                             {"ratio", e.ratio}});
  }
  return json{{"entries", entries_j}, {"schedule", schedule}};
}

MixPlan plan_mix(const std::vector<MixSource>& sources, size_t schedule_length) {
  if (sources.empty()) throw PipelineError(Errc::empty_sources, "no mix sources given");
  MixPlan plan;
  double total = 0;
  for (const auto& s : sources) {
    if (s.original_tokens <= 0)
      throw PipelineError(Errc::config_error, "original_tokens must be > 0");
    if (s.repeat < 1) throw PipelineError(Errc::config_error, "repeat must be >= 1");
    MixPlanEntry e;
    e.data_type = s.data_type;
    e.original_tokens = s.original_tokens;
    e.repeat = s.repeat;
    e.training_tokens = s.original_tokens * s.repeat;
    total += e.training_tokens;
    plan.entries.push_back(e);
  }
  for (auto& e : plan.entries) e.ratio = e.training_tokens / total;

  // Credit scheduler: at every step emit the source with the largest
  // deficit against its exact ratio. Any window tracks the ratios to
  // within a couple of samples.
  std::vector<double> credit(plan.entries.size(), 0.0);
  plan.schedule.reserve(schedule_length);
  for (size_t step = 0; step < schedule_length; ++step) {
    size_t best = 0;
    for (size_t i = 0; i < plan.entries.size(); ++i) {
      credit[i] += plan.entries[i].ratio;
      if (credit[i] > credit[best]) best = i;
    }
    credit[best] -= 1.0;
    plan.schedule.push_back(best);
  }
  return plan;
}

// --- token counting ------------------------------------------------------

size_t count_tokens_default(const std::string& text) {
  size_t count = 0;
  bool in_token = false;
  for (unsigned char c : text) {
    bool tok = !std::isspace(c) && !std::ispunct(c);
    if (tok && !in_token) ++count;
    in_token = tok;
  }
  return count;
}

size_t count_tokens(const std::string& text, const TokenCounter& counter) {
  if (counter) return counter(text);
  return count_tokens_default(text);
}

TokenCounter vocab_token_counter(const std::filesystem::path& vocab_file) {
  auto vocab = std::make_shared<std::unordered_set<std::string>>();
  size_t max_len = 1;
  for (const auto& line : split_lines(read_file(vocab_file))) {
    if (line.empty()) continue;
    vocab->insert(line);
    max_len = std::max(max_len, line.size());
  }
  return [vocab, max_len](const std::string& text) -> size_t {
    size_t count = 0;
    size_t pos = 0;
    while (pos < text.size()) {
      if (std::isspace(static_cast<unsigned char>(text[pos]))) {
        ++pos;
        continue;
      }
      size_t len = std::min(max_len, text.size() - pos);
      for (; len > 1; --len) {
        if (vocab->count(text.substr(pos, len))) break;
      }
      ++count;
      pos += len;
    }
    return count;
  };
}

// --- manifest ------------------------------------------------------------

namespace {

const std::set<std::string> kSourceKinds = {"textbook", "paper", "code", "manual", "webpage"};
const std::set<std::string> kDomainTags = {"digital",   "analog",     "rf_circuit",
                                           "power_device", "soc",     "eda",
                                           "rf_antenna", "cim",       "fabrication",
                                           "neural_networks", "general"};

}  // namespace

std::vector<RawDocument> load_manifest(const std::filesystem::path& manifest) {
  auto rows = read_jsonl(manifest);
  std::filesystem::path base = manifest.parent_path();
  std::vector<RawDocument> docs;
  std::set<std::string> ids;
  size_t lineno = 0;
  for (const auto& row : rows) {
    ++lineno;
    RawDocument d;
    try {
      d.id = row.at("id").get<std::string>();
      d.source_kind = row.at("source_kind").get<std::string>();
      d.domain_tag = row.at("domain_tag").get<std::string>();
      std::filesystem::path p = row.at("path").get<std::string>();
      if (p.is_relative()) p = base / p;
      d.text = read_file(p);
    } catch (const json::exception& e) {
      throw PipelineError(Errc::schema_violation,
                          manifest.string() + " line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!ids.insert(d.id).second)
      throw PipelineError(Errc::schema_violation, "duplicate document id " + d.id);
    if (!kSourceKinds.count(d.source_kind))
      throw PipelineError(Errc::schema_violation, "unknown source_kind " + d.source_kind);
    if (!kDomainTags.count(d.domain_tag))
      throw PipelineError(Errc::schema_violation, "unknown domain_tag " + d.domain_tag);
    if (d.text.empty())
      throw PipelineError(Errc::schema_violation, "document " + d.id + " is empty");
    if (row.contains("metadata")) d.metadata = row["metadata"];
    docs.push_back(std::move(d));
  }
  return docs;
}

}  // namespace icpipe
