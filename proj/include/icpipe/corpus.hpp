// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "icpipe/util.hpp"

namespace icpipe {

// --- documents -----------------------------------------------------------

struct RawDocument {
  std::string id;
  std::string source_kind;  // textbook | paper | code | manual | webpage
  std::string domain_tag;
  std::string text;
  json metadata;
};

struct CleanReport {
  size_t urls = 0;
  size_t references = 0;
  size_t page_numbers = 0;
  size_t headers_footers = 0;
  size_t figure_table_artifacts = 0;
  size_t nontext_chars = 0;

  json to_json() const;
  static CleanReport from_json(const json& j);
  bool all_zero() const {
    return urls == 0 && references == 0 && page_numbers == 0 && headers_footers == 0 &&
           figure_table_artifacts == 0 && nontext_chars == 0;
  }
};

struct CleanDocument {
  std::string id;
  std::string text;
  CleanReport clean_report;

  json to_json() const;
  static CleanDocument from_json(const json& j);
};

struct CleanRules {
  // A heading from this list in the final tail_fraction of the document
  // truncates the rest (reference-list removal).
  std::vector<std::string> reference_headings = {"references", "bibliography"};
  double tail_fraction = 0.2;
  // A line is a header/footer if it sits next to >= this many page boundaries.
  int header_footer_min_pages = 3;
};

// --- operations ----------------------------------------------------------

std::pair<std::string, CleanReport> clean_text(const std::string& raw,
                                               const CleanRules& rules = {});

struct DedupParams {
  double jaccard_threshold = 0.85;
  uint64_t seed = 7;
  int num_permutations = 128;
  int shingle_size = 5;  // words per shingle
  int bands = 16;        // LSH bands over the signature
};

struct DedupReport {
  size_t input_count = 0;
  size_t kept_count = 0;
  size_t exact_duplicate_groups = 0;
  size_t near_duplicate_groups = 0;
  double jaccard_threshold = 0;

  json to_json() const;
};

std::pair<std::vector<CleanDocument>, DedupReport> deduplicate(
    const std::vector<CleanDocument>& docs, const DedupParams& params = {});

// Building blocks, exposed so tests can check MinHash estimates against
// exact Jaccard over the same shingle definition.
std::vector<uint64_t> shingle_hashes(const std::string& text, int shingle_size);
std::vector<uint64_t> minhash_signature(const std::vector<uint64_t>& shingles,
                                        int num_permutations, uint64_t seed);
double minhash_estimate(const std::vector<uint64_t>& a, const std::vector<uint64_t>& b);

struct CodeNormResult {
  CleanDocument doc;
  bool unbalanced_fence = false;
  size_t blocks_normalized = 0;
};

CodeNormResult normalize_code_blocks(const CleanDocument& doc,
                                     std::optional<std::string> language_hint = {},
                                     int indent_unit = 2);

// --- mix planning --------------------------------------------------------

struct MixSource {
  std::string data_type;   // domain | code | wiki
  double original_tokens;  // billions
  int repeat;
};

struct MixPlanEntry {
  std::string data_type;
  double original_tokens;
  int repeat;
  double training_tokens;
  double ratio;
};

struct MixPlan {
  std::vector<MixPlanEntry> entries;
  // Interleaving order over source indices realizing the ratios; within
  // +-0.5% of the exact ratio over any 10,000-sample window.
  std::vector<size_t> schedule;

  json to_json() const;
};

MixPlan plan_mix(const std::vector<MixSource>& sources, size_t schedule_length = 10000);

// --- token counting ------------------------------------------------------

using TokenCounter = std::function<size_t(const std::string&)>;

// Whitespace-and-punctuation word splitting; an approximation, documented
// as such. Real token counts come from a plugged counter.
size_t count_tokens_default(const std::string& text);
size_t count_tokens(const std::string& text, const TokenCounter& counter = {});

// Greedy longest-match counter over a vocab file (one token per line).
TokenCounter vocab_token_counter(const std::filesystem::path& vocab_file);

// --- manifest ingestion --------------------------------------------------

// JSON-lines manifest: {"id","path","source_kind","domain_tag"}; paths are
// resolved relative to the manifest's directory.
std::vector<RawDocument> load_manifest(const std::filesystem::path& manifest);

}  // namespace icpipe
