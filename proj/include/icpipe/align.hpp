// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "icpipe/backends.hpp"
#include "icpipe/util.hpp"

namespace icpipe {

struct AdversarialPrompt {
  std::string id;
  std::string text;
  std::string source;
  std::string split = "unassigned";  // train | test | unassigned

  json to_json() const;
  static AdversarialPrompt from_json(const json& j);
};

struct PreferenceRecord {
  std::string id;  // carries the originating prompt id
  std::string prompt;
  std::string chosen;    // refusal, classified safe
  std::string rejected;  // harvested response, classified unsafe
  SafetyLabel chosen_label = SafetyLabel::safe;
  SafetyLabel rejected_label = SafetyLabel::unsafe;
  std::string review_status = "pending";  // pending | accepted | removed
  std::string reviewer_note;

  json to_json() const;
  static PreferenceRecord from_json(const json& j);
};

// Seeded split; assigns "train"/"test"/... labels in fraction order.
std::vector<AdversarialPrompt> split_adversarial(std::vector<AdversarialPrompt> prompts,
                                                 const std::vector<double>& fractions,
                                                 uint64_t seed,
                                                 const std::vector<std::string>& labels = {
                                                     "train", "test"});

struct HarvestItem {
  AdversarialPrompt prompt;
  std::string response;
};

struct HarvestResult {
  std::vector<HarvestItem> unsafe_items;
  size_t processed = 0;
  size_t skipped = 0;
  std::vector<json> log;  // one entry per classification decision / skip
};

// Answers every train prompt once, classifies each response, keeps the
// unsafe ones. Per-item backend failures are logged and skipped.
HarvestResult harvest_unsafe(const std::vector<AdversarialPrompt>& train_prompts,
                             ChatBackend& model, SafetyBackend& classifier);

// Generates a refusal per unsafe item; a refusal that classifies unsafe is
// regenerated once, then the item is dropped with a log entry.
std::vector<PreferenceRecord> build_preference_pairs(const std::vector<HarvestItem>& unsafe_items,
                                                     ChatBackend& refusal_backend,
                                                     SafetyBackend& classifier,
                                                     std::vector<json>* log = nullptr);

struct ReviewDecision {
  std::string id;
  std::string decision;  // accept | remove | skip
  std::string note;
};

std::vector<ReviewDecision> load_decisions(const std::filesystem::path& jsonl);

// Applies decisions to pending records; unknown ids are ignored.
void apply_review_decisions(std::vector<PreferenceRecord>& records,
                            const std::vector<ReviewDecision>& decisions);

// Terminal queue over pending records; every keystroke decision is
// appended to decisions_path immediately, so an interrupted session
// resumes where it left off.
void review_records_interactive(std::vector<PreferenceRecord>& records, std::istream& in,
                                std::ostream& out,
                                const std::filesystem::path& decisions_path);

// Accepted records only, as {"prompt","chosen","rejected"} rows.
std::vector<json> export_accepted(const std::vector<PreferenceRecord>& records);

}  // namespace icpipe
