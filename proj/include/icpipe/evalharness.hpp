// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "icpipe/backends.hpp"
#include "icpipe/util.hpp"

namespace icpipe {

// --- benchmark schema ----------------------------------------------------

enum class Tier { foundational, advanced };

std::string tier_name(Tier t);
Tier tier_from_name(const std::string& s);

// Subdomains in canonical order; the last two only exist at the advanced
// tier.
const std::vector<std::string>& bench_subdomains();
bool subdomain_allowed(const std::string& subdomain, Tier tier);

struct BenchItem {
  std::string id;
  Tier tier = Tier::foundational;
  std::string subdomain;
  std::string question;
  std::string reference_notes;  // optional
  std::string rubric;           // optional free-form rating guidance

  json to_json() const;
  static BenchItem from_json(const json& j);
};

std::vector<BenchItem> load_bench(const std::filesystem::path& path);
void save_bench(const std::filesystem::path& path, const std::vector<BenchItem>& items);

// --- human scores --------------------------------------------------------

// CSV rows item_id,system,rater,score; multiple raters per (item, system)
// are averaged.
struct HumanScores {
  // (item_id, system) -> raw rater scores
  std::map<std::pair<std::string, std::string>, std::vector<double>> raw;

  double mean(const std::string& item_id, const std::string& system) const;
  std::vector<std::string> systems() const;
};

HumanScores ingest_human_scores(const std::filesystem::path& csv,
                                const std::vector<BenchItem>& bench);

// --- aspect scoring ------------------------------------------------------

struct AspectScore {
  std::string aspect;
  double value = 0.0;
  std::string rationale;
};

const std::vector<std::string>& aspect_names();

struct AspectResult {
  std::vector<AspectScore> aspects;
  double combined = 0.0;  // unweighted mean of the aspect values
};

// One backend call per aspect with an aspect-specific rubric prompt;
// out-of-range outputs get one repair re-prompt before erroring.
AspectResult score_response_aspects(const BenchItem& item, const std::string& response,
                                    ChatBackend& backend);

// --- referee ranking -----------------------------------------------------

struct JudgeVerdict {
  std::string item_id;
  std::vector<std::string> ranking;  // best first; permutation of systems
  std::vector<json> transcript;
  size_t judge_calls = 0;
  size_t tie_breaks = 0;
};

// Every unordered pair is judged twice with presentation order swapped; a
// disagreement costs one tie-break call; a tie-break that still refuses to
// pick ("TIE") falls back to the lexicographically smaller name.
JudgeVerdict referee_rank(const BenchItem& item,
                          const std::map<std::string, std::string>& responses,
                          ChatBackend& backend, int max_turns = 1);

// --- aggregation ---------------------------------------------------------

struct ItemScore {
  std::string item_id;
  std::string system;
  double combined = 0.0;  // from score_response_aspects
};

struct ReportCell {
  double aspect_mean = 0.0;
  double win_rate = 0.0;    // normalized rank credit from verdicts
  double integrated = 0.0;  // auto_w * aspect_mean + debate_w * win_rate
  size_t count = 0;
};

struct ReportWeights {
  double auto_scoring = 0.7;
  double debate = 0.3;
};

struct SubdomainReport {
  // key: (system, tier name, subdomain); empty cells are absent, never
  // zero-filled
  std::map<std::tuple<std::string, std::string, std::string>, ReportCell> cells;
  // human means, kept strictly separate from the automatic numbers
  std::map<std::tuple<std::string, std::string, std::string>, double> human;
  std::map<std::tuple<std::string, std::string, std::string>, size_t> human_counts;
};

SubdomainReport aggregate_report(const std::vector<BenchItem>& bench,
                                 const std::vector<ItemScore>& scores,
                                 const std::vector<JudgeVerdict>& verdicts,
                                 const HumanScores& human, ReportWeights weights = {});

// --- rendering -----------------------------------------------------------

struct RenderedReport {
  std::string table_text;
  // file name -> CSV body (subdomain,system,score)
  std::map<std::string, std::string> radar_csvs;
};

RenderedReport render_report(const SubdomainReport& report);

}  // namespace icpipe
