// SPDX-License-Identifier: Apache-2.0
#include "icpipe/align.hpp"

#include <cctype>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>

#include "icpipe/dataset.hpp"
#include "icpipe/error.hpp"

namespace icpipe {

// --- records -------------------------------------------------------------

json AdversarialPrompt::to_json() const {
  return json{{"id", id}, {"text", text}, {"source", source}, {"split", split}};
}

AdversarialPrompt AdversarialPrompt::from_json(const json& j) {
  AdversarialPrompt p;
  p.id = j.at("id").get<std::string>();
  p.text = j.at("text").get<std::string>();
  p.source = j.value("source", "");
  p.split = j.value("split", "unassigned");
  if (p.id.empty() || p.text.empty())
    throw PipelineError(Errc::schema_violation, "adversarial prompt needs id and text");
  return p;
}

json PreferenceRecord::to_json() const {
  return json{{"id", id},
              {"prompt", prompt},
              {"chosen", chosen},
              {"rejected", rejected},
              {"chosen_label", chosen_label == SafetyLabel::safe ? "safe" : "unsafe"},
              {"rejected_label", rejected_label == SafetyLabel::safe ? "safe" : "unsafe"},
              {"review_status", review_status},
              {"reviewer_note", reviewer_note}};
}

PreferenceRecord PreferenceRecord::from_json(const json& j) {
  PreferenceRecord r;
  r.id = j.at("id").get<std::string>();
  r.prompt = j.at("prompt").get<std::string>();
  r.chosen = j.at("chosen").get<std::string>();
  r.rejected = j.at("rejected").get<std::string>();
  r.chosen_label =
      j.value("chosen_label", "safe") == "safe" ? SafetyLabel::safe : SafetyLabel::unsafe;
  r.rejected_label =
      j.value("rejected_label", "unsafe") == "safe" ? SafetyLabel::safe : SafetyLabel::unsafe;
  r.review_status = j.value("review_status", "pending");
  r.reviewer_note = j.value("reviewer_note", "");
  return r;
}

// --- split ---------------------------------------------------------------

std::vector<AdversarialPrompt> split_adversarial(std::vector<AdversarialPrompt> prompts,
                                                 const std::vector<double>& fractions,
                                                 uint64_t seed,
                                                 const std::vector<std::string>& labels) {
  if (labels.size() != fractions.size())
    throw PipelineError(Errc::config_error, "one label per split fraction required");
  std::vector<json> rows;
  rows.reserve(prompts.size());
  for (size_t i = 0; i < prompts.size(); ++i) rows.push_back(json{{"i", i}});
  auto parts = split_dataset(rows, fractions, seed);
  for (size_t p = 0; p < parts.size(); ++p)
    for (const auto& row : parts[p])
      prompts[row.at("i").get<size_t>()].split = labels[p];
  return prompts;
}

// --- harvest -------------------------------------------------------------

static std::string chat_once(ChatBackend& chat, const std::string& task,
                             const std::string& body) {
  ChatRequest req;
  req.messages.push_back({ChatRole::user, "task: " + task + "\n" + body});
  return chat.complete(req);
}

HarvestResult harvest_unsafe(const std::vector<AdversarialPrompt>& train_prompts,
                             ChatBackend& model, SafetyBackend& classifier) {
  HarvestResult result;
  for (const auto& prompt : train_prompts) {
    ++result.processed;
    try {
      ChatRequest req;
      req.messages.push_back({ChatRole::user, prompt.text});
      std::string response = model.complete(req);
      SafetyLabel label = classifier.classify(prompt.text, response);
      bool unsafe = label == SafetyLabel::unsafe;
      result.log.push_back(json{{"id", prompt.id},
                                {"event", "classified"},
                                {"label", unsafe ? "unsafe" : "safe"}});
      if (unsafe) result.unsafe_items.push_back({prompt, std::move(response)});
    } catch (const PipelineError& e) {
      // one bad prompt must not sink the harvest
      ++result.skipped;
      result.log.push_back(
          json{{"id", prompt.id}, {"event", "skipped"}, {"error", e.what()}});
    }
  }
  return result;
}

// --- preference pairs ----------------------------------------------------

std::vector<PreferenceRecord> build_preference_pairs(const std::vector<HarvestItem>& unsafe_items,
                                                     ChatBackend& refusal_backend,
                                                     SafetyBackend& classifier,
                                                     std::vector<json>* log) {
  std::vector<PreferenceRecord> records;
  for (const auto& item : unsafe_items) {
    std::string refusal = chat_once(refusal_backend, "refusal", item.prompt.text);
    if (classifier.classify(item.prompt.text, refusal) == SafetyLabel::unsafe) {
      refusal = chat_once(refusal_backend, "refusal",
                          "Decline the request below without repeating any part of it.\n" +
                              item.prompt.text);
      if (classifier.classify(item.prompt.text, refusal) == SafetyLabel::unsafe) {
        if (log)
          log->push_back(json{{"id", item.prompt.id},
                              {"event", "dropped"},
                              {"reason", "refusal classified unsafe twice"}});
        continue;
      }
    }
    PreferenceRecord r;
    r.id = item.prompt.id;
    r.prompt = item.prompt.text;
    r.chosen = refusal;
    r.rejected = item.response;
    records.push_back(std::move(r));
    if (log) log->push_back(json{{"id", item.prompt.id}, {"event", "paired"}});
  }
  return records;
}

// --- review --------------------------------------------------------------

std::vector<ReviewDecision> load_decisions(const std::filesystem::path& jsonl) {
  std::vector<ReviewDecision> out;
  if (!std::filesystem::exists(jsonl)) return out;
  for (const auto& j : read_jsonl(jsonl)) {
    ReviewDecision d;
    d.id = j.at("id").get<std::string>();
    d.decision = j.at("decision").get<std::string>();
    d.note = j.value("note", "");
    if (d.decision != "accept" && d.decision != "remove" && d.decision != "skip")
      throw PipelineError(Errc::schema_violation, "unknown review decision: " + d.decision);
    out.push_back(std::move(d));
  }
  return out;
}

void apply_review_decisions(std::vector<PreferenceRecord>& records,
                            const std::vector<ReviewDecision>& decisions) {
  for (const auto& d : decisions) {
    for (auto& r : records) {
      if (r.id != d.id) continue;
      if (d.decision == "accept")
        r.review_status = "accepted";
      else if (d.decision == "remove")
        r.review_status = "removed";
      // "skip" leaves the record pending for the next session
      if (!d.note.empty()) r.reviewer_note = d.note;
      break;
    }
  }
}

void review_records_interactive(std::vector<PreferenceRecord>& records, std::istream& in,
                                std::ostream& out,
                                const std::filesystem::path& decisions_path) {
  // pick up any earlier session first
  apply_review_decisions(records, load_decisions(decisions_path));

  for (auto& r : records) {
    if (r.review_status != "pending") continue;
    out << "--- " << r.id << " ---\n"
        << "prompt:   " << r.prompt << "\n"
        << "chosen:   " << r.chosen << "\n"
        << "rejected: " << r.rejected << "\n"
        << "[a]ccept / [r]emove / [s]kip / [q]uit > " << std::flush;
    std::string line;
    if (!std::getline(in, line)) break;
    line = trim(line);
    if (line.empty()) line = "s";
    char key = static_cast<char>(std::tolower(static_cast<unsigned char>(line[0])));
    if (key == 'q') break;
    std::string note = line.size() > 1 ? trim(line.substr(1)) : "";
    ReviewDecision d;
    d.id = r.id;
    d.decision = key == 'a' ? "accept" : key == 'r' ? "remove" : "skip";
    d.note = note;
    // persist before applying so an interrupt never loses a decision
    append_jsonl(decisions_path,
                 json{{"id", d.id}, {"decision", d.decision}, {"note", d.note}});
    apply_review_decisions(records, {d});
  }
}

std::vector<json> export_accepted(const std::vector<PreferenceRecord>& records) {
  std::vector<json> rows;
  for (const auto& r : records) {
    if (r.review_status != "accepted") continue;
    rows.push_back(json{{"prompt", r.prompt}, {"chosen", r.chosen}, {"rejected", r.rejected}});
  }
  return rows;
}

}  // namespace icpipe
