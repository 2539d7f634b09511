// SPDX-License-Identifier: Apache-2.0
#include "icpipe/synth.hpp"

#include <algorithm>
#include <map>

#include "icpipe/error.hpp"

namespace icpipe {

// --- roles ---------------------------------------------------------------

void AgentAssignment::validate() const {
  if (debater_a == debater_b || debater_a == referee || debater_b == referee)
    throw PipelineError(Errc::config_error, "agent assignment roles must be distinct");
}

json AgentAssignment::to_json() const {
  return json{{"debater_a", debater_a}, {"debater_b", debater_b}, {"referee", referee}};
}

AgentAssignment AgentAssignment::from_json(const json& j) {
  AgentAssignment a;
  a.debater_a = j.at("debater_a").get<std::string>();
  a.debater_b = j.at("debater_b").get<std::string>();
  a.referee = j.at("referee").get<std::string>();
  a.validate();
  return a;
}

// --- transcript ----------------------------------------------------------

json DebateTranscript::to_json() const {
  json turns_j = json::array();
  for (const auto& t : turns) {
    json tj{{"speaker", t.speaker}, {"claim", t.claim}};
    if (t.cited_span) tj["cite"] = json{{"offset", t.cited_span->offset},
                                        {"length", t.cited_span->length}};
    turns_j.push_back(tj);
  }
  json j{{"id", id},
         {"question", question},
         {"answer_a", answer_a},
         {"answer_b", answer_b},
         {"turns", turns_j},
         {"referee_rationale", referee_rationale}};
  if (winner) j["winner"] = std::string(1, *winner);
  return j;
}

DebateTranscript DebateTranscript::from_json(const json& j) {
  DebateTranscript t;
  t.id = j.at("id").get<std::string>();
  t.question = j.at("question").get<std::string>();
  t.answer_a = j.at("answer_a").get<std::string>();
  t.answer_b = j.at("answer_b").get<std::string>();
  for (const auto& tj : j.at("turns")) {
    DebateTurn turn;
    turn.speaker = tj.at("speaker").get<std::string>();
    turn.claim = tj.at("claim").get<std::string>();
    if (tj.contains("cite")) {
      turn.cited_span = EvidenceSpan{tj["cite"].at("offset").get<size_t>(),
                                     tj["cite"].at("length").get<size_t>()};
    }
    t.turns.push_back(std::move(turn));
  }
  t.referee_rationale = j.value("referee_rationale", "");
  if (j.contains("winner")) t.winner = j["winner"].get<std::string>().at(0);
  return t;
}

// --- directives ----------------------------------------------------------

json RoundDirectives::to_json() const {
  return json{{"next_qa_type", qa_type_name(next_qa_type)},
              {"amend_generators", amend_generators},
              {"amend_regen", amend_regen},
              {"continue_generation", continue_generation},
              {"rationale", rationale}};
}

RoundDirectives RoundDirectives::from_json(const json& j) {
  RoundDirectives d;
  d.next_qa_type = qa_type_from_name(j.at("next_qa_type").get<std::string>());
  d.amend_generators = j.value("amend_generators", "");
  d.amend_regen = j.value("amend_regen", "");
  d.continue_generation = j.value("continue_generation", true);
  d.rationale = j.value("rationale", "");
  return d;
}

// --- sample database -----------------------------------------------------

json AcceptedEntry::to_json() const {
  return json{{"pair", pair.to_json()},
              {"transcript_id", transcript_id},
              {"inspect_status", inspect_status},
              {"chain", hex64(chain)}};
}

AcceptedEntry AcceptedEntry::from_json(const json& j) {
  AcceptedEntry e;
  e.pair = QAPair::from_json(j.at("pair"));
  e.transcript_id = j.at("transcript_id").get<std::string>();
  e.inspect_status = j.at("inspect_status").get<std::string>();
  e.chain = std::stoull(j.at("chain").get<std::string>(), nullptr, 16);
  return e;
}

void SampleDatabase::load_exemplars(const std::filesystem::path& jsonl) {
  exemplars_.clear();
  for (const auto& row : read_jsonl(jsonl)) exemplars_.push_back(QAPair::from_json(row));
  if (exemplars_.empty())
    throw PipelineError(Errc::schema_violation, "exemplar file " + jsonl.string() + " is empty");
}

void SampleDatabase::set_exemplars(std::vector<QAPair> exemplars) {
  if (exemplars.empty())
    throw PipelineError(Errc::schema_violation, "exemplar set must be non-empty");
  exemplars_ = std::move(exemplars);
}

uint64_t SampleDatabase::chain_head() const {
  return accepted_.empty() ? 1469598103934665603ULL : accepted_.back().chain;
}

const AcceptedEntry& SampleDatabase::append(const QAPair& pair, const std::string& transcript_id,
                                            const std::string& inspect_status) {
  AcceptedEntry e;
  e.pair = pair;
  e.transcript_id = transcript_id;
  e.inspect_status = inspect_status;
  e.chain = fnv1a64(pair.to_json().dump() + transcript_id, chain_head());
  accepted_.push_back(std::move(e));
  return accepted_.back();
}

size_t SampleDatabase::count_for_type(QaType t, const std::string& doc_id) const {
  size_t n = 0;
  for (const auto& e : accepted_) {
    if (e.pair.qa_type == t && e.pair.source_doc_id == doc_id) ++n;
  }
  return n;
}

size_t SampleDatabase::count_for_doc(const std::string& doc_id) const {
  size_t n = 0;
  for (const auto& e : accepted_) {
    if (e.pair.source_doc_id == doc_id) ++n;
  }
  return n;
}

void SampleDatabase::save_accepted(const std::filesystem::path& jsonl) const {
  std::vector<json> rows;
  rows.reserve(accepted_.size());
  for (const auto& e : accepted_) rows.push_back(e.to_json());
  write_jsonl(jsonl, rows);
}

void SampleDatabase::load_accepted(const std::filesystem::path& jsonl) {
  for (const auto& row : read_jsonl(jsonl)) {
    AcceptedEntry e = AcceptedEntry::from_json(row);
    uint64_t expect = fnv1a64(e.pair.to_json().dump() + e.transcript_id, chain_head());
    if (expect != e.chain)
      throw PipelineError(Errc::schema_violation, "accepted-entry hash chain broken");
    accepted_.push_back(std::move(e));
  }
}

// --- agent-output parsing ------------------------------------------------

std::vector<std::pair<std::string, std::string>> parse_qa_blocks(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> pairs;
  enum { outside, in_question, in_answer } state = outside;
  std::string q, a;
  for (const auto& raw_line : split_lines(text)) {
    std::string line = trim(raw_line);
    if (line == "<<question>>") {
      state = in_question;
      q.clear();
      a.clear();
      continue;
    }
    if (line == "<<answer>>" && state == in_question) {
      state = in_answer;
      continue;
    }
    if (line == "<<end>>" && state == in_answer) {
      std::string qt = trim(q), at = trim(a);
      if (!qt.empty() && !at.empty()) pairs.emplace_back(qt, at);
      state = outside;
      continue;
    }
    if (state == in_question) q += raw_line + "\n";
    else if (state == in_answer) a += raw_line + "\n";
  }
  if (pairs.empty())
    throw PipelineError(Errc::unparseable_agent_output, "no complete QA blocks in agent reply");
  return pairs;
}

namespace {

constexpr const char* kQaFormatSpec =
    "Format each pair exactly as:\n<<question>>\n...\n<<answer>>\n...\n<<end>>";

std::string doc_excerpt(const CleanDocument& doc, size_t max_chars) {
  if (doc.text.size() <= max_chars) return doc.text;
  return doc.text.substr(0, max_chars);
}

std::string render_demos(const SampleDatabase& db, const SynthConfig& config,
                         const std::string& doc_id, int round) {
  // exemplars plus already-accepted pairs, sampled uniformly without
  // replacement, seeded per (seed, doc, round)
  std::vector<const QAPair*> pool;
  for (const auto& e : db.exemplars()) pool.push_back(&e);
  for (const auto& e : db.accepted()) pool.push_back(&e.pair);
  uint64_t seed = fnv1a64(doc_id + "#" + std::to_string(round), fnv1a64_u64(config.seed));
  Rng rng(seed);
  auto picks = rng.sample_without_replacement(pool.size(),
                                              static_cast<size_t>(config.exemplar_demos));
  std::string out = "Demonstrations:\n";
  for (size_t idx : picks) {
    out += "<<question>>\n" + pool[idx]->question + "\n<<answer>>\n" + pool[idx]->answer +
           "\n<<end>>\n";
  }
  return out;
}

std::string call_with_repair(ChatBackend& chat, ChatRequest req,
                             const std::string& repair_instruction,
                             const std::function<bool(const std::string&)>& acceptable,
                             Errc failure_code, const std::string& failure_what,
                             std::string* out) {
  std::string reply = chat.complete(req);
  if (acceptable(reply)) {
    *out = reply;
    return reply;
  }
  // one automatic repair re-prompt
  req.messages.push_back({ChatRole::assistant, reply});
  req.messages.push_back({ChatRole::user, repair_instruction});
  reply = chat.complete(req);
  if (acceptable(reply)) {
    *out = reply;
    return reply;
  }
  throw PipelineError(failure_code, failure_what);
}

bool parses_as_qa(const std::string& reply) {
  try {
    parse_qa_blocks(reply);
    return true;
  } catch (const PipelineError&) {
    return false;
  }
}

std::optional<char> parse_verdict(const std::string& reply) {
  for (const auto& raw : split_lines(reply)) {
    std::string line = trim(raw);
    if (starts_with(line, "<<verdict>>")) {
      std::string v = to_lower(trim(line.substr(11)));
      if (!v.empty() && (v[0] == 'a' || v[0] == 'b')) return v[0];
    }
  }
  return std::nullopt;
}

}  // namespace

// --- extract -------------------------------------------------------------

std::vector<QAPair> extract_candidate_qas(const CleanDocument& doc, const SampleDatabase& db,
                                          const RoundDirectives& directives, ChatBackend& chat,
                                          const SynthConfig& config, int round) {
  if (doc.text.empty()) throw PipelineError(Errc::empty_text, "document is empty");
  if (db.exemplars().empty())
    throw PipelineError(Errc::schema_violation, "exemplar set must be non-empty");

  std::string prompt = "task: extract-qa\n";
  prompt += "Generate up to " + std::to_string(config.candidates_per_round) +
            " question-answer pairs of type '" + qa_type_name(directives.next_qa_type) +
            "' from the source document below.\n";
  if (!directives.amend_generators.empty())
    prompt += "Guidance: " + directives.amend_generators + "\n";
  prompt += render_demos(db, config, doc.id, round);
  prompt += std::string(kQaFormatSpec) + "\n";
  prompt += "Source document (" + doc.id + "):\n" +
            doc_excerpt(doc, config.max_doc_chars_in_prompt);

  ChatRequest req;
  req.messages.push_back({ChatRole::system, "You are a question-writing agent for technical "
                                            "training data."});
  req.messages.push_back({ChatRole::user, prompt});

  std::string reply;
  call_with_repair(chat, req,
                   std::string("Your reply did not follow the required layout. ") + kQaFormatSpec,
                   parses_as_qa, Errc::unparseable_agent_output,
                   "extract agent reply unparseable after repair retry", &reply);

  std::vector<QAPair> out;
  for (auto& [q, a] : parse_qa_blocks(reply)) {
    QAPair p;
    p.question = q;
    p.answer = a;
    p.qa_type = directives.next_qa_type;
    p.source_doc_id = doc.id;
    p.generator = "A1";
    p.round = round;
    out.push_back(std::move(p));
    if (out.size() >= static_cast<size_t>(config.candidates_per_round)) break;
  }
  return out;
}

// --- ground --------------------------------------------------------------

std::vector<EvidenceSpan> split_paragraphs(const std::string& text, size_t min_chars) {
  std::vector<EvidenceSpan> spans;
  size_t pos = 0;
  while (pos < text.size()) {
    size_t brk = text.find("\n\n", pos);
    size_t end = (brk == std::string::npos) ? text.size() : brk;
    if (trim(text.substr(pos, end - pos)).empty()) {
      pos = (brk == std::string::npos) ? text.size() : brk + 2;
      continue;
    }
    spans.push_back({pos, end - pos});
    pos = (brk == std::string::npos) ? text.size() : brk + 2;
  }
  // merge forward until each block reaches min_chars
  std::vector<EvidenceSpan> merged;
  for (const auto& s : spans) {
    if (!merged.empty() && merged.back().length < min_chars) {
      merged.back().length = s.offset + s.length - merged.back().offset;
    } else {
      merged.push_back(s);
    }
  }
  return merged;
}

std::vector<QAPair> ground_answers(const CleanDocument& doc,
                                   const std::vector<std::string>& questions, ChatBackend& chat,
                                   EmbedBackend& embed, const SynthConfig& config, int round,
                                   QaType qa_type) {
  if (questions.empty())
    throw PipelineError(Errc::config_error, "ground_answers needs at least one question");
  auto paragraphs = split_paragraphs(doc.text, config.min_paragraph_chars);
  if (paragraphs.empty()) throw PipelineError(Errc::no_paragraphs, "document " + doc.id);

  std::vector<std::string> para_texts;
  para_texts.reserve(paragraphs.size());
  for (const auto& s : paragraphs) para_texts.push_back(doc.text.substr(s.offset, s.length));
  auto para_vecs = embed.embed(para_texts);

  std::vector<QAPair> out;
  for (const auto& question : questions) {
    auto qvec = embed.embed({question}).at(0);
    std::vector<std::pair<double, size_t>> scored;
    for (size_t i = 0; i < para_vecs.size(); ++i) {
      double s = 0;
      for (size_t j = 0; j < qvec.size(); ++j)
        s += static_cast<double>(qvec[j]) * para_vecs[i][j];
      scored.emplace_back(-s, i);  // ascending sort -> descending score, index tie-break
    }
    std::sort(scored.begin(), scored.end());
    size_t k = std::min(static_cast<size_t>(config.retrieval_k), scored.size());

    QAPair p;
    p.question = question;
    p.qa_type = qa_type;
    p.source_doc_id = doc.id;
    p.generator = "A2";
    p.round = round;

    std::string prompt = "task: ground-answer\n";
    prompt += "Answer the question using only the retrieved passages.\n";
    prompt += "Question: " + question + "\nPassages:\n";
    for (size_t r = 0; r < k; ++r) {
      const auto& span = paragraphs[scored[r].second];
      p.evidence_spans.push_back(span);
      prompt += "[" + std::to_string(r + 1) + "] " + doc.text.substr(span.offset, span.length) +
                "\n";
    }
    ChatRequest req;
    req.messages.push_back({ChatRole::system, "You answer strictly from the given passages."});
    req.messages.push_back({ChatRole::user, prompt});
    p.answer = chat.complete(req);
    if (trim(p.answer).empty())
      throw PipelineError(Errc::backend_failure, "empty grounded answer");
    out.push_back(std::move(p));
  }
  return out;
}

// --- debate --------------------------------------------------------------

DebateTranscript run_debate(const QAPair& qa_a, const QAPair& qa_b, const CleanDocument& doc,
                            const AgentAssignment& assignment, ChatBackend& chat,
                            int max_turns_per_side, const SynthConfig& config) {
  if (qa_a.question != qa_b.question)
    throw PipelineError(Errc::config_error, "debated pairs must share a question");
  assignment.validate();

  DebateTranscript t;
  t.question = qa_a.question;
  t.answer_a = qa_a.answer;
  t.answer_b = qa_b.answer;
  t.id = hex64(fnv1a64(qa_a.question + "\x1f" + qa_a.answer + "\x1f" + qa_b.answer));

  if (qa_a.answer == qa_b.answer) {
    // documented tie-break: first candidate wins
    t.winner = 'a';
    t.referee_rationale = "identical answers; first candidate wins ties";
    return t;
  }

  for (int turn = 0; turn < 2 * max_turns_per_side; ++turn) {
    bool side_a = (turn % 2 == 0);
    const std::string& speaker = side_a ? assignment.debater_a : assignment.debater_b;
    std::string own = side_a ? qa_a.answer : qa_b.answer;
    std::string other = side_a ? qa_b.answer : qa_a.answer;
    std::string last_claim = t.turns.empty() ? "" : t.turns.back().claim;

    std::string prompt = "task: debate-turn\n";
    prompt += "You are agent " + speaker + " defending your answer.\n";
    prompt += "Question: " + t.question + "\nYour answer: " + own +
              "\nOpponent's answer: " + other + "\n";
    if (!last_claim.empty()) prompt += "Opponent's last claim: " + last_claim + "\n";
    prompt += "Cite evidence with a line '<<cite>> <offset> <length>' into the source when "
              "possible.\nSource:\n" + doc_excerpt(doc, config.max_doc_chars_in_prompt);

    ChatRequest req;
    req.messages.push_back({ChatRole::system, "You are a debater in a QA quality debate."});
    req.messages.push_back({ChatRole::user, prompt});
    std::string reply = chat.complete(req);

    DebateTurn dt;
    dt.speaker = speaker;
    dt.claim = reply;
    for (const auto& raw : split_lines(reply)) {
      std::string line = trim(raw);
      if (starts_with(line, "<<cite>>")) {
        size_t off = 0, len = 0;
        if (std::sscanf(line.c_str(), "<<cite>> %zu %zu", &off, &len) == 2 &&
            off + len <= doc.text.size()) {
          dt.cited_span = EvidenceSpan{off, len};
        }
      }
    }
    t.turns.push_back(std::move(dt));
  }

  std::string prompt = "task: verdict\n";
  prompt += "You are agent " + assignment.referee +
            ", the referee. Compare both answers against the source and pick the better one.\n";
  prompt += "Question: " + t.question + "\nAnswer A: " + t.answer_a +
            "\nAnswer B: " + t.answer_b + "\nDebate record:\n";
  for (const auto& turn : t.turns) prompt += turn.speaker + ": " + turn.claim + "\n";
  prompt += "Reply with a line '<<verdict>> A' or '<<verdict>> B' and a short rationale.\n";
  prompt += "Source:\n" + doc_excerpt(doc, config.max_doc_chars_in_prompt);

  ChatRequest req;
  req.messages.push_back({ChatRole::system, "You are the referee of a QA quality debate."});
  req.messages.push_back({ChatRole::user, prompt});
  std::string reply;
  call_with_repair(chat, req,
                   "Your reply must contain a line '<<verdict>> A' or '<<verdict>> B'.",
                   [](const std::string& r) { return parse_verdict(r).has_value(); },
                   Errc::referee_indecisive, "referee named neither answer after repair retry",
                   &reply);
  t.winner = parse_verdict(reply);
  t.referee_rationale = reply;
  return t;
}

// --- regenerate / rotate -------------------------------------------------

std::pair<std::vector<QAPair>, AgentAssignment> regenerate_and_rotate(
    const AgentAssignment& assignment, const QAPair& winner, const DebateTranscript& transcript,
    ChatBackend& chat, const SynthConfig& config, const std::string& regen_amendment) {
  if (!transcript.winner)
    throw PipelineError(Errc::config_error, "regenerate requires a completed debate");

  std::string prompt = "task: regenerate\n";
  prompt += "You are agent " + assignment.referee +
            ". Having refereed the debate, enrich and expand the winning pair (longer answer, "
            "more varied vocabulary, or split into two consecutive questions).\n";
  if (!regen_amendment.empty()) prompt += "Guidance: " + regen_amendment + "\n";
  prompt += "Winning pair:\n<<question>>\n" + winner.question + "\n<<answer>>\n" +
            winner.answer + "\n<<end>>\n";
  prompt += std::string(kQaFormatSpec) + "\nProduce 1 or 2 pairs.";

  ChatRequest req;
  req.messages.push_back({ChatRole::system, "You improve QA pairs after refereeing a debate."});
  req.messages.push_back({ChatRole::user, prompt});
  std::string reply;
  call_with_repair(chat, req,
                   std::string("Your reply did not follow the required layout. ") + kQaFormatSpec,
                   parses_as_qa, Errc::unparseable_agent_output,
                   "regenerate reply unparseable after repair retry", &reply);

  std::vector<QAPair> out;
  for (auto& [q, a] : parse_qa_blocks(reply)) {
    QAPair p;
    p.question = q;
    p.answer = a;
    p.qa_type = winner.qa_type;
    p.source_doc_id = winner.source_doc_id;
    p.generator = "regenerated";
    p.round = winner.round + 1;
    out.push_back(std::move(p));
    if (out.size() >= 2) break;
  }
  return {std::move(out), assignment.rotated()};
}

// --- inspect -------------------------------------------------------------

InspectResult inspect_round(const std::vector<QAPair>& candidates, const SampleDatabase& db,
                            ChatBackend& chat, IterationBudget& budget,
                            const SynthConfig& config) {
  InspectResult result;
  if (budget.remaining <= 0) {
    result.continue_debate = false;
    for (const auto& c : candidates) result.rejected.emplace_back(c, "budget_exhausted");
    return result;
  }

  // structural pre-filter, no backend involvement
  std::vector<const QAPair*> reviewable;
  for (const auto& c : candidates) {
    if (trim(c.question).empty() || trim(c.answer).empty()) {
      result.rejected.emplace_back(c, "empty_field");
    } else {
      reviewable.push_back(&c);
    }
  }

  bool stop_signal = false;
  if (!reviewable.empty()) {
    std::string prompt = "task: inspect\n";
    prompt += "Inspect the " + std::to_string(reviewable.size()) +
              " candidate pairs below against the quality of the expert demonstrations.\n";
    prompt += "Reply with one line per decision: 'accept <index>' or 'reject <index> <reason>', "
              "or 'accept all'. Add 'stop' to end generation for this document.\n";
    size_t demo = std::min<size_t>(db.exemplars().size(), 2);
    for (size_t i = 0; i < demo; ++i) {
      prompt += "Exemplar: " + db.exemplars()[i].question + " / " + db.exemplars()[i].answer +
                "\n";
    }
    for (size_t i = 0; i < reviewable.size(); ++i) {
      prompt += "[" + std::to_string(i) + "] Q: " + reviewable[i]->question +
                "\n    A: " + reviewable[i]->answer + "\n";
    }
    ChatRequest req;
    req.messages.push_back({ChatRole::system, "You are a strict data-quality inspector."});
    req.messages.push_back({ChatRole::user, prompt});
    std::string reply = chat.complete(req);

    std::map<size_t, std::pair<bool, std::string>> decisions;  // idx -> (accept, reason)
    bool accept_all = false;
    for (const auto& raw : split_lines(reply)) {
      std::string line = trim(raw);
      std::string lower = to_lower(line);
      if (lower == "accept all") accept_all = true;
      else if (lower == "stop") stop_signal = true;
      else if (starts_with(lower, "accept ")) {
        size_t idx = 0;
        if (std::sscanf(line.c_str() + 7, "%zu", &idx) == 1) decisions[idx] = {true, ""};
      } else if (starts_with(lower, "reject ")) {
        size_t idx = 0;
        int consumed = 0;
        if (std::sscanf(line.c_str() + 7, "%zu%n", &idx, &consumed) == 1) {
          decisions[idx] = {false, trim(line.substr(7 + static_cast<size_t>(consumed)))};
        }
      }
    }
    for (size_t i = 0; i < reviewable.size(); ++i) {
      auto it = decisions.find(i);
      bool accept = accept_all;
      std::string reason = "inspector_reject";
      if (it != decisions.end()) {
        accept = it->second.first;
        if (!it->second.second.empty()) reason = it->second.second;
      } else if (!accept_all) {
        reason = "no_decision";
      }
      if (accept) result.accepted.push_back(*reviewable[i]);
      else result.rejected.emplace_back(*reviewable[i], reason);
    }
  }

  budget.remaining -= 1;
  result.continue_debate = budget.remaining > 0 && !stop_signal;
  return result;
}

// --- manage --------------------------------------------------------------

RoundDirectives manage_generation(const SampleDatabase& db, const DocStats& stats,
                                  ChatBackend& chat, const SynthConfig& config) {
  RoundDirectives d;

  // least-represented type, ties broken in enum order
  const QaType types[] = {QaType::conceptual, QaType::logical, QaType::divergent};
  size_t best_count = SIZE_MAX;
  for (QaType t : types) {
    size_t c = db.count_for_type(t, stats.doc_id);
    if (c < best_count) {
      best_count = c;
      d.next_qa_type = t;
    }
  }

  size_t cap = static_cast<size_t>(stats.char_count < config.single_page_chars
                                       ? config.max_pairs_single_page
                                       : config.max_pairs_multi_page);
  if (db.count_for_doc(stats.doc_id) >= cap) {
    d.continue_generation = false;
    d.rationale = "per-document accepted-pair cap reached";
    return d;
  }

  std::string prompt = "task: manage\n";
  prompt += "You oversee QA generation for document " + stats.doc_id + " (" +
            std::to_string(stats.char_count) + " chars).\nAccepted so far:";
  for (QaType t : types) {
    prompt += std::string(" ") + qa_type_name(t) + "=" +
              std::to_string(db.count_for_type(t, stats.doc_id));
  }
  prompt += "\nNext round will target type '" + std::string(qa_type_name(d.next_qa_type)) +
            "'.\nReply with '<<continue>> yes' or '<<continue>> no', optionally "
            "'<<amend_generate>> <guidance>', '<<amend_regen>> <guidance>' and "
            "'<<rationale>> <text>'.";

  ChatRequest req;
  req.messages.push_back({ChatRole::system, "You manage a QA-pair generation campaign."});
  req.messages.push_back({ChatRole::user, prompt});
  std::string reply = chat.complete(req);

  for (const auto& raw : split_lines(reply)) {
    std::string line = trim(raw);
    if (starts_with(line, "<<continue>>")) {
      d.continue_generation = to_lower(trim(line.substr(12))) != "no";
    } else if (starts_with(line, "<<amend_generate>>")) {
      d.amend_generators = trim(line.substr(18));
    } else if (starts_with(line, "<<amend_regen>>")) {
      d.amend_regen = trim(line.substr(15));
    } else if (starts_with(line, "<<rationale>>")) {
      d.rationale = trim(line.substr(13));
    }
  }
  return d;
}

// --- full loop -----------------------------------------------------------

std::vector<QAPair> synthesize_document(const CleanDocument& doc, const SynthConfig& config,
                                        ChatBackend& chat, EmbedBackend& embed,
                                        SampleDatabase& db,
                                        const std::filesystem::path& state_dir) {
  std::filesystem::create_directories(state_dir);
  std::filesystem::path meta_path = state_dir / "meta.json";
  std::filesystem::path accepted_path = state_dir / "accepted.jsonl";

  int start_round = 0;
  bool done = false;
  AgentAssignment assignment = AgentAssignment::initial();
  if (std::filesystem::exists(meta_path)) {
    json meta = json::parse(read_file(meta_path));
    start_round = meta.value("rounds_completed", 0);
    done = meta.value("done", false);
    if (meta.contains("assignment")) assignment = AgentAssignment::from_json(meta["assignment"]);
    if (std::filesystem::exists(accepted_path) && db.count_for_doc(doc.id) == 0)
      db.load_accepted(accepted_path);
  }

  auto persist_meta = [&](int rounds_completed, bool is_done) {
    json meta{{"doc_id", doc.id},
              {"rounds_completed", rounds_completed},
              {"done", is_done},
              {"assignment", assignment.to_json()}};
    atomic_write_file(meta_path, meta.dump(2));
  };
  if (!std::filesystem::exists(meta_path)) persist_meta(0, false);

  DocStats stats{doc.id, doc.text.size()};

  for (int round = start_round; !done && round < config.inspect_budget_rounds; ++round) {
    IterationBudget budget{config.inspect_budget_rounds - round};

    RoundDirectives directives = manage_generation(db, stats, chat, config);
    if (!directives.continue_generation) {
      done = true;
      persist_meta(round, true);
      break;
    }

    auto a1_pairs = extract_candidate_qas(doc, db, directives, chat, config, round);
    std::vector<std::string> questions;
    for (const auto& p : a1_pairs) questions.push_back(p.question);
    auto a2_pairs = ground_answers(doc, questions, chat, embed, config, round,
                                   directives.next_qa_type);

    std::vector<QAPair> winners;
    std::vector<DebateTranscript> transcripts;
    for (size_t i = 0; i < a1_pairs.size(); ++i) {
      DebateTranscript t = run_debate(a1_pairs[i], a2_pairs[i], doc, assignment, chat,
                                      config.max_debate_turns_per_side, config);
      winners.push_back(*t.winner == 'a' ? a1_pairs[i] : a2_pairs[i]);
      transcripts.push_back(std::move(t));
    }

    std::vector<QAPair> candidates = winners;
    AgentAssignment next_assignment = assignment;
    if (!winners.empty()) {
      auto [regen, rotated] = regenerate_and_rotate(assignment, winners.back(),
                                                    transcripts.back(), chat, config,
                                                    directives.amend_regen);
      next_assignment = rotated;
      for (auto& p : regen) candidates.push_back(std::move(p));
    }

    InspectResult inspect = inspect_round(candidates, db, chat, budget, config);
    for (const auto& p : inspect.accepted) {
      // provenance: the transcript whose debate produced this candidate;
      // regenerated pairs descend from the round's final debate
      std::string tid = transcripts.empty() ? "" : transcripts.back().id;
      if (p.generator != "regenerated") {
        for (const auto& t : transcripts) {
          if (t.question == p.question) {
            tid = t.id;
            break;
          }
        }
      }
      db.append(p, tid, "accepted");
    }
    db.save_accepted(accepted_path);

    json round_state{{"round", round},
                     {"directives", directives.to_json()},
                     {"assignment_after", next_assignment.to_json()},
                     {"accepted_count", inspect.accepted.size()},
                     {"rejected_count", inspect.rejected.size()}};
    json transcripts_j = json::array();
    for (const auto& t : transcripts) transcripts_j.push_back(t.to_json());
    round_state["transcripts"] = transcripts_j;
    json cand_j = json::array();
    for (const auto& c : candidates) cand_j.push_back(c.to_json());
    round_state["candidates"] = cand_j;
    atomic_write_file(state_dir / ("round_" + std::to_string(round) + ".json"),
                      round_state.dump(2));

    assignment = next_assignment;
    done = !inspect.continue_debate;
    persist_meta(round + 1, done);
  }

  if (!done) {
    // round ceiling reached
    persist_meta(config.inspect_budget_rounds, true);
  }

  std::vector<QAPair> out;
  for (const auto& e : db.accepted()) {
    if (e.pair.source_doc_id == doc.id) out.push_back(e.pair);
  }
  return out;
}

}  // namespace icpipe
