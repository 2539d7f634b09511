// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "icpipe/backends.hpp"
#include "icpipe/corpus.hpp"
#include "icpipe/qa.hpp"
#include "icpipe/rng.hpp"

namespace icpipe {

// --- roles ---------------------------------------------------------------

// The three debate-module agents {A3, A4, A5} mapped onto roles. Rotation
// cycles referee -> debater_a -> debater_b -> referee, so three rotations
// are the identity and every agent referees exactly once per cycle.
struct AgentAssignment {
  std::string debater_a = "A3";
  std::string debater_b = "A4";
  std::string referee = "A5";

  static AgentAssignment initial() { return {}; }
  AgentAssignment rotated() const { return {debater_b, referee, debater_a}; }
  void validate() const;
  bool operator==(const AgentAssignment&) const = default;

  json to_json() const;
  static AgentAssignment from_json(const json& j);
};

// --- debate transcript ---------------------------------------------------

struct DebateTurn {
  std::string speaker;
  std::string claim;
  std::optional<EvidenceSpan> cited_span;
};

struct DebateTranscript {
  std::string id;
  std::string question;
  std::string answer_a;
  std::string answer_b;
  std::vector<DebateTurn> turns;
  std::optional<char> winner;  // 'a' | 'b', present iff the debate completed
  std::string referee_rationale;

  json to_json() const;
  static DebateTranscript from_json(const json& j);
};

// --- directives / budget -------------------------------------------------

struct RoundDirectives {
  QaType next_qa_type = QaType::conceptual;
  std::string amend_generators;
  std::string amend_regen;
  bool continue_generation = true;
  std::string rationale;

  json to_json() const;
  static RoundDirectives from_json(const json& j);
};

struct IterationBudget {
  int remaining = 5;
};

// --- sample database -----------------------------------------------------

struct AcceptedEntry {
  QAPair pair;
  std::string transcript_id;
  std::string inspect_status;
  uint64_t chain = 0;  // hash chain over accepted entries

  json to_json() const;
  static AcceptedEntry from_json(const json& j);
};

// Append-only store of accepted pairs plus the expert exemplars that seed
// every prompt. Entries are never mutated; the chain hash notarizes order.
class SampleDatabase {
 public:
  void load_exemplars(const std::filesystem::path& jsonl);
  void set_exemplars(std::vector<QAPair> exemplars);
  const std::vector<QAPair>& exemplars() const { return exemplars_; }

  const AcceptedEntry& append(const QAPair& pair, const std::string& transcript_id,
                              const std::string& inspect_status);
  const std::vector<AcceptedEntry>& accepted() const { return accepted_; }
  uint64_t chain_head() const;
  size_t count_for_type(QaType t, const std::string& doc_id) const;
  size_t count_for_doc(const std::string& doc_id) const;

  void save_accepted(const std::filesystem::path& jsonl) const;
  void load_accepted(const std::filesystem::path& jsonl);

 private:
  std::vector<QAPair> exemplars_;
  std::vector<AcceptedEntry> accepted_;
};

// --- configuration -------------------------------------------------------

struct SynthConfig {
  int candidates_per_round = 5;
  int exemplar_demos = 3;
  int max_debate_turns_per_side = 2;
  int inspect_budget_rounds = 5;
  int max_pairs_multi_page = 20;
  int max_pairs_single_page = 6;
  size_t single_page_chars = 3000;  // shorter docs count as single-page
  int retrieval_k = 3;
  size_t min_paragraph_chars = 200;
  size_t max_doc_chars_in_prompt = 6000;
  uint64_t seed = 7;
};

// --- agent-output parsing ------------------------------------------------

// Structured layout used by all generation agents:
//   <<question>> ... <<answer>> ... <<end>>   (repeated per pair)
std::vector<std::pair<std::string, std::string>> parse_qa_blocks(const std::string& text);

// --- operations ----------------------------------------------------------

std::vector<QAPair> extract_candidate_qas(const CleanDocument& doc, const SampleDatabase& db,
                                          const RoundDirectives& directives, ChatBackend& chat,
                                          const SynthConfig& config, int round);

// Blank-line paragraph blocks, merged forward until >= min_chars.
std::vector<EvidenceSpan> split_paragraphs(const std::string& text, size_t min_chars);

std::vector<QAPair> ground_answers(const CleanDocument& doc,
                                   const std::vector<std::string>& questions, ChatBackend& chat,
                                   EmbedBackend& embed, const SynthConfig& config, int round,
                                   QaType qa_type);

DebateTranscript run_debate(const QAPair& qa_a, const QAPair& qa_b, const CleanDocument& doc,
                            const AgentAssignment& assignment, ChatBackend& chat,
                            int max_turns_per_side, const SynthConfig& config);

std::pair<std::vector<QAPair>, AgentAssignment> regenerate_and_rotate(
    const AgentAssignment& assignment, const QAPair& winner, const DebateTranscript& transcript,
    ChatBackend& chat, const SynthConfig& config, const std::string& regen_amendment = "");

struct InspectResult {
  std::vector<QAPair> accepted;
  std::vector<std::pair<QAPair, std::string>> rejected;  // pair, reason
  bool continue_debate = true;
};

InspectResult inspect_round(const std::vector<QAPair>& candidates, const SampleDatabase& db,
                            ChatBackend& chat, IterationBudget& budget,
                            const SynthConfig& config);

struct DocStats {
  std::string doc_id;
  size_t char_count = 0;
};

RoundDirectives manage_generation(const SampleDatabase& db, const DocStats& stats,
                                  ChatBackend& chat, const SynthConfig& config);

// Full per-document loop: manage -> extract -> ground -> debate ->
// regenerate/rotate -> inspect, persisted per round under state_dir and
// resumable from the last completed round.
std::vector<QAPair> synthesize_document(const CleanDocument& doc, const SynthConfig& config,
                                        ChatBackend& chat, EmbedBackend& embed,
                                        SampleDatabase& db,
                                        const std::filesystem::path& state_dir);

}  // namespace icpipe
