// SPDX-License-Identifier: Apache-2.0
#include "icpipe/evalharness.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <optional>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "icpipe/error.hpp"

namespace icpipe {

// --- schema --------------------------------------------------------------

std::string tier_name(Tier t) { return t == Tier::foundational ? "foundational" : "advanced"; }

Tier tier_from_name(const std::string& s) {
  if (s == "foundational") return Tier::foundational;
  if (s == "advanced") return Tier::advanced;
  throw PipelineError(Errc::schema_violation, "unknown tier: " + s);
}

const std::vector<std::string>& bench_subdomains() {
  static const std::vector<std::string> subs = {
      "analog", "digital", "eda",          "soc",            "power_device",
      "rf_circuit", "rf_antenna", "cim",   "neural_networks"};
  return subs;
}

bool subdomain_allowed(const std::string& subdomain, Tier tier) {
  const auto& subs = bench_subdomains();
  if (std::find(subs.begin(), subs.end(), subdomain) == subs.end()) return false;
  if (tier == Tier::foundational && (subdomain == "cim" || subdomain == "neural_networks"))
    return false;
  return true;
}

json BenchItem::to_json() const {
  json j{{"id", id},
         {"tier", tier_name(tier)},
         {"subdomain", subdomain},
         {"question", question}};
  if (!reference_notes.empty()) j["reference_notes"] = reference_notes;
  if (!rubric.empty()) j["rubric"] = rubric;
  return j;
}

BenchItem BenchItem::from_json(const json& j) {
  BenchItem item;
  item.id = j.at("id").get<std::string>();
  item.tier = tier_from_name(j.at("tier").get<std::string>());
  item.subdomain = j.at("subdomain").get<std::string>();
  item.question = j.at("question").get<std::string>();
  item.reference_notes = j.value("reference_notes", "");
  item.rubric = j.value("rubric", "");
  if (item.id.empty() || item.question.empty())
    throw PipelineError(Errc::schema_violation, "bench item needs id and question");
  if (!subdomain_allowed(item.subdomain, item.tier))
    throw PipelineError(Errc::schema_violation, "subdomain '" + item.subdomain +
                                                   "' not valid for tier " +
                                                   tier_name(item.tier));
  return item;
}

std::vector<BenchItem> load_bench(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw PipelineError(Errc::input_missing, "bench file missing: " + path.string());
  std::vector<BenchItem> items;
  std::set<std::string> seen;
  std::ifstream in(path);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      auto item = BenchItem::from_json(json::parse(line));
      if (!seen.insert(item.id).second)
        throw PipelineError(Errc::schema_violation, "duplicate item id: " + item.id);
      items.push_back(std::move(item));
    } catch (const json::exception& e) {
      throw PipelineError(Errc::schema_violation, path.string() + ":" +
                                                     std::to_string(lineno) + ": " + e.what());
    } catch (const PipelineError& e) {
      throw PipelineError(e.code(), path.string() + ":" + std::to_string(lineno) + ": " +
                                        e.what());
    }
  }
  return items;
}

void save_bench(const std::filesystem::path& path, const std::vector<BenchItem>& items) {
  std::vector<json> rows;
  rows.reserve(items.size());
  for (const auto& it : items) rows.push_back(it.to_json());
  write_jsonl(path, rows);
}

// --- human scores --------------------------------------------------------

double HumanScores::mean(const std::string& item_id, const std::string& system) const {
  auto it = raw.find({item_id, system});
  if (it == raw.end() || it->second.empty())
    throw PipelineError(Errc::unknown_item, "no human score for " + item_id + "/" + system);
  double sum = 0;
  for (double v : it->second) sum += v;
  return sum / static_cast<double>(it->second.size());
}

std::vector<std::string> HumanScores::systems() const {
  std::set<std::string> s;
  for (const auto& [key, _] : raw) s.insert(key.second);
  return {s.begin(), s.end()};
}

HumanScores ingest_human_scores(const std::filesystem::path& csv,
                                const std::vector<BenchItem>& bench) {
  if (!std::filesystem::exists(csv))
    throw PipelineError(Errc::input_missing, "scores file missing: " + csv.string());
  std::set<std::string> known_ids;
  for (const auto& it : bench) known_ids.insert(it.id);

  HumanScores scores;
  std::ifstream in(csv);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(trim(field));
    if (fields.size() != 4)
      throw PipelineError(Errc::schema_violation, csv.string() + ":" + std::to_string(lineno) +
                                                     ": expected item_id,system,rater,score");
    if (lineno == 1 && fields[0] == "item_id") continue;  // optional header
    char* end = nullptr;
    double value = std::strtod(fields[3].c_str(), &end);
    if (end == fields[3].c_str() || *end != '\0')
      throw PipelineError(Errc::schema_violation, csv.string() + ":" + std::to_string(lineno) +
                                                     ": bad score '" + fields[3] + "'");
    if (value < 0.0 || value > 1.0)
      throw PipelineError(Errc::out_of_range, csv.string() + ":" + std::to_string(lineno) +
                                                ": score outside [0,1]");
    if (!known_ids.count(fields[0]))
      throw PipelineError(Errc::unknown_item, csv.string() + ":" + std::to_string(lineno) +
                                                 ": unknown item id '" + fields[0] + "'");
    scores.raw[{fields[0], fields[1]}].push_back(value);
  }
  return scores;
}

// --- aspect scoring ------------------------------------------------------

const std::vector<std::string>& aspect_names() {
  static const std::vector<std::string> names = {"key_point_redundancy", "overall_logic",
                                                 "terminology_explanation"};
  return names;
}

static std::string aspect_rubric(const std::string& aspect) {
  if (aspect == "key_point_redundancy")
    return "Does the response cover the key points without padding or repetition?";
  if (aspect == "overall_logic")
    return "Is the reasoning coherent from premise to conclusion?";
  return "Are domain terms introduced and explained where needed?";
}

// First parseable number in the reply, or nullopt.
static std::optional<double> parse_score(const std::string& text) {
  const char* p = text.c_str();
  const char* end = p + text.size();
  while (p < end) {
    if (std::isdigit(static_cast<unsigned char>(*p)) ||
        (*p == '.' && p + 1 < end && std::isdigit(static_cast<unsigned char>(p[1])))) {
      char* after = nullptr;
      double v = std::strtod(p, &after);
      if (after != p) return v;
    }
    ++p;
  }
  return std::nullopt;
}

AspectResult score_response_aspects(const BenchItem& item, const std::string& response,
                                    ChatBackend& backend) {
  if (trim(response).empty())
    throw PipelineError(Errc::schema_violation, "cannot score an empty response");

  AspectResult result;
  for (const auto& aspect : aspect_names()) {
    std::ostringstream prompt;
    prompt << "task: aspect-score\n"
           << "aspect: " << aspect << "\n"
           << aspect_rubric(aspect) << "\n";
    if (!item.rubric.empty()) prompt << "Additional guidance: " << item.rubric << "\n";
    prompt << "Question: " << item.question << "\n"
           << "Response: " << response << "\n"
           << "Reply with a single number between 0 and 1.";

    ChatRequest req;
    req.messages.push_back({ChatRole::user, prompt.str()});
    std::string reply = backend.complete(req);
    auto value = parse_score(reply);
    if (!value || *value < 0.0 || *value > 1.0) {
      // one repair re-prompt, then give up
      ChatRequest retry = req;
      retry.messages.push_back({ChatRole::assistant, reply});
      retry.messages.push_back(
          {ChatRole::user,
           "That was not a number between 0 and 1. Reply with only such a number."});
      reply = backend.complete(retry);
      value = parse_score(reply);
      if (!value)
        throw PipelineError(Errc::unparseable_agent_output,
                            "no score in aspect reply for " + aspect);
      if (*value < 0.0 || *value > 1.0)
        throw PipelineError(Errc::out_of_range, "aspect score outside [0,1] for " + aspect);
    }
    result.aspects.push_back({aspect, *value, trim(reply)});
  }
  double sum = 0;
  for (const auto& a : result.aspects) sum += a.value;
  result.combined = sum / static_cast<double>(result.aspects.size());
  return result;
}

// --- referee ranking -----------------------------------------------------

namespace {

enum class PairPick { first, second, tie, unclear };

PairPick parse_pick(const std::string& reply) {
  std::string up;
  for (char c : reply) up.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  bool first = up.find("FIRST") != std::string::npos;
  bool second = up.find("SECOND") != std::string::npos;
  bool tie = up.find("TIE") != std::string::npos;
  if (tie && !first && !second) return PairPick::tie;
  if (first && !second) return PairPick::first;
  if (second && !first) return PairPick::second;
  return PairPick::unclear;
}

// Judges one ordered presentation; returns the winning system name.
std::string judge_once(const BenchItem& item, const std::string& sys1, const std::string& resp1,
                       const std::string& sys2, const std::string& resp2, ChatBackend& backend,
                       bool allow_tie, JudgeVerdict& verdict, std::string* tie_marker) {
  std::ostringstream prompt;
  prompt << "task: judge-pair\n"
         << "Question: " << item.question << "\n"
         << "FIRST response:\n" << resp1 << "\n"
         << "SECOND response:\n" << resp2 << "\n"
         << "Which response answers better? Reply FIRST or SECOND";
  if (allow_tie) prompt << " (or TIE if truly equal)";
  prompt << ".";

  ChatRequest req;
  req.messages.push_back({ChatRole::user, prompt.str()});
  std::string reply = backend.complete(req);
  ++verdict.judge_calls;
  PairPick pick = parse_pick(reply);
  if (pick == PairPick::unclear) {
    ChatRequest retry = req;
    retry.messages.push_back({ChatRole::assistant, reply});
    retry.messages.push_back({ChatRole::user, "Reply with exactly one word: FIRST or SECOND."});
    reply = backend.complete(retry);
    pick = parse_pick(reply);
    if (pick == PairPick::unclear)
      throw PipelineError(Errc::referee_indecisive, "judge gave no usable verdict");
  }
  verdict.transcript.push_back(json{{"event", "judgment"},
                                    {"first", sys1},
                                    {"second", sys2},
                                    {"reply", trim(reply)}});
  if (pick == PairPick::tie) {
    if (tie_marker) *tie_marker = "tie";
    return std::min(sys1, sys2);  // lexicographic fallback for a refused pick
  }
  return pick == PairPick::first ? sys1 : sys2;
}

}  // namespace

JudgeVerdict referee_rank(const BenchItem& item,
                          const std::map<std::string, std::string>& responses,
                          ChatBackend& backend, int max_turns) {
  if (responses.size() < 2)
    throw PipelineError(Errc::config_error, "referee ranking needs at least two systems");

  std::vector<std::string> systems;
  for (const auto& [name, _] : responses) systems.push_back(name);
  std::sort(systems.begin(), systems.end());

  JudgeVerdict verdict;
  verdict.item_id = item.id;
  std::map<std::string, size_t> wins;
  for (const auto& s : systems) wins[s] = 0;

  for (size_t i = 0; i < systems.size(); ++i) {
    for (size_t j = i + 1; j < systems.size(); ++j) {
      const std::string& a = systems[i];
      const std::string& b = systems[j];
      const std::string& resp_a = responses.at(a);
      const std::string& resp_b = responses.at(b);

      // defense turns in alternation; these inform the judge transcript but
      // are not judge calls
      for (int turn = 0; turn < max_turns; ++turn) {
        for (const auto* side : {&a, &b}) {
          std::ostringstream prompt;
          prompt << "task: debate-turn\n"
                 << "Question: " << item.question << "\n"
                 << "You are defending this response:\n" << responses.at(*side) << "\n"
                 << "The opposing response is:\n"
                 << responses.at(*side == a ? b : a) << "\n"
                 << "State in one short paragraph why yours is better.";
          ChatRequest req;
          req.messages.push_back({ChatRole::user, prompt.str()});
          std::string defense = backend.complete(req);
          verdict.transcript.push_back(
              json{{"event", "defense"}, {"system", *side}, {"text", trim(defense)}});
        }
      }

      // order-swap: judge (a,b) then (b,a) to cancel position bias
      std::string w1 = judge_once(item, a, resp_a, b, resp_b, backend, false, verdict, nullptr);
      std::string w2 = judge_once(item, b, resp_b, a, resp_a, backend, false, verdict, nullptr);
      std::string winner = w1;
      if (w1 != w2) {
        ++verdict.tie_breaks;
        std::string tie_marker;
        winner = judge_once(item, a, resp_a, b, resp_b, backend, true, verdict, &tie_marker);
      }
      ++wins[winner];
      verdict.transcript.push_back(
          json{{"event", "pair_result"}, {"a", a}, {"b", b}, {"winner", winner}});
    }
  }

  verdict.ranking = systems;
  std::stable_sort(verdict.ranking.begin(), verdict.ranking.end(),
                   [&](const std::string& x, const std::string& y) {
                     if (wins[x] != wins[y]) return wins[x] > wins[y];
                     return x < y;
                   });
  return verdict;
}

// --- aggregation ---------------------------------------------------------

SubdomainReport aggregate_report(const std::vector<BenchItem>& bench,
                                 const std::vector<ItemScore>& scores,
                                 const std::vector<JudgeVerdict>& verdicts,
                                 const HumanScores& human, ReportWeights weights) {
  if (weights.auto_scoring < 0 || weights.debate < 0 ||
      std::fabs(weights.auto_scoring + weights.debate - 1.0) > 1e-12)
    throw PipelineError(Errc::config_error, "weights must be non-negative and sum to 1");

  std::map<std::string, const BenchItem*> by_id;
  for (const auto& it : bench) by_id[it.id] = &it;
  auto cell_key = [&](const BenchItem& it, const std::string& system) {
    return std::make_tuple(system, tier_name(it.tier), it.subdomain);
  };

  // accumulate aspect scores
  struct Acc {
    double score_sum = 0;
    size_t score_n = 0;
    double win_sum = 0;
    size_t win_n = 0;
    std::set<std::string> items;
  };
  std::map<std::tuple<std::string, std::string, std::string>, Acc> acc;

  for (const auto& s : scores) {
    auto it = by_id.find(s.item_id);
    if (it == by_id.end())
      throw PipelineError(Errc::unknown_item, "score for unknown item " + s.item_id);
    if (s.combined < 0 || s.combined > 1)
      throw PipelineError(Errc::out_of_range, "combined score outside [0,1]");
    auto& a = acc[cell_key(*it->second, s.system)];
    a.score_sum += s.combined;
    ++a.score_n;
    a.items.insert(s.item_id);
  }

  // verdict rank credit: 1 for first place, 0 for last, linear between
  for (const auto& v : verdicts) {
    auto it = by_id.find(v.item_id);
    if (it == by_id.end())
      throw PipelineError(Errc::unknown_item, "verdict for unknown item " + v.item_id);
    size_t n = v.ranking.size();
    for (size_t pos = 0; pos < n; ++pos) {
      double credit = n > 1 ? static_cast<double>(n - 1 - pos) / static_cast<double>(n - 1) : 1.0;
      auto& a = acc[cell_key(*it->second, v.ranking[pos])];
      a.win_sum += credit;
      ++a.win_n;
      a.items.insert(v.item_id);
    }
  }

  SubdomainReport report;
  for (const auto& [key, a] : acc) {
    ReportCell cell;
    cell.count = a.items.size();
    bool has_scores = a.score_n > 0;
    bool has_wins = a.win_n > 0;
    if (has_scores) cell.aspect_mean = a.score_sum / static_cast<double>(a.score_n);
    if (has_wins) cell.win_rate = a.win_sum / static_cast<double>(a.win_n);
    if (has_scores && has_wins)
      cell.integrated = weights.auto_scoring * cell.aspect_mean + weights.debate * cell.win_rate;
    else if (has_scores)
      cell.integrated = cell.aspect_mean;  // missing component renormalizes away
    else
      cell.integrated = cell.win_rate;
    report.cells[key] = cell;
  }

  // human means live in their own columns
  std::map<std::tuple<std::string, std::string, std::string>, std::pair<double, size_t>> hacc;
  for (const auto& [key, values] : human.raw) {
    auto it = by_id.find(key.first);
    if (it == by_id.end())
      throw PipelineError(Errc::unknown_item, "human score for unknown item " + key.first);
    double sum = 0;
    for (double v : values) sum += v;
    double mean = sum / static_cast<double>(values.size());
    auto& h = hacc[cell_key(*it->second, key.second)];
    h.first += mean;
    ++h.second;
  }
  for (const auto& [key, h] : hacc) {
    report.human[key] = h.first / static_cast<double>(h.second);
    report.human_counts[key] = h.second;
  }
  return report;
}

// --- rendering -----------------------------------------------------------

namespace {

std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string pad(const std::string& s, size_t width) {
  std::string out = s;
  while (out.size() < width) out.push_back(' ');
  return out;
}

// one tier section of one score kind (automatic or human)
void render_block(std::ostringstream& out, const std::string& tier, const std::string& kind,
                  const std::vector<std::string>& subs, const std::vector<std::string>& systems,
                  const std::map<std::pair<std::string, std::string>, double>& values) {
  out << "== " << tier << " (" << kind << ") ==\n";
  size_t name_w = std::string("system").size();
  for (const auto& s : systems) name_w = std::max(name_w, s.size());
  name_w += 2;
  std::vector<size_t> widths;
  for (const auto& sd : subs) widths.push_back(std::max<size_t>(sd.size(), 4) + 2);

  out << pad("system", name_w);
  for (size_t c = 0; c < subs.size(); ++c) out << pad(subs[c], widths[c]);
  out << "\n";
  for (const auto& sys : systems) {
    out << pad(sys, name_w);
    for (size_t c = 0; c < subs.size(); ++c) {
      auto it = values.find({sys, subs[c]});
      out << pad(it == values.end() ? "-" : fmt2(it->second), widths[c]);
    }
    out << "\n";
  }
  if (systems.size() == 2) {
    out << pad("margin", name_w);
    for (size_t c = 0; c < subs.size(); ++c) {
      auto a = values.find({systems[0], subs[c]});
      auto b = values.find({systems[1], subs[c]});
      if (a == values.end() || b == values.end())
        out << pad("-", widths[c]);
      else
        out << pad(fmt2(std::fabs(a->second - b->second)), widths[c]);
    }
    out << "\n";
  }
  out << "\n";
}

}  // namespace

RenderedReport render_report(const SubdomainReport& report) {
  if (report.cells.empty() && report.human.empty())
    throw PipelineError(Errc::config_error, "nothing to render");

  RenderedReport rendered;
  std::ostringstream table;

  for (const std::string tier : {"foundational", "advanced"}) {
    std::vector<std::string> subs;
    for (const auto& sd : bench_subdomains())
      if (subdomain_allowed(sd, tier_from_name(tier))) subs.push_back(sd);

    // automatic (integrated) block
    std::map<std::pair<std::string, std::string>, double> auto_vals;
    std::set<std::string> auto_sys;
    for (const auto& [key, cell] : report.cells) {
      if (std::get<1>(key) != tier) continue;
      auto_vals[{std::get<0>(key), std::get<2>(key)}] = cell.integrated;
      auto_sys.insert(std::get<0>(key));
    }
    if (!auto_vals.empty()) {
      std::vector<std::string> systems(auto_sys.begin(), auto_sys.end());
      render_block(table, tier, "automatic", subs, systems, auto_vals);
      std::ostringstream csv;
      csv << "subdomain,system,score\n";
      for (const auto& sd : subs)
        for (const auto& sys : systems) {
          auto it = auto_vals.find({sys, sd});
          if (it != auto_vals.end()) csv << sd << "," << sys << "," << fmt2(it->second) << "\n";
        }
      rendered.radar_csvs[tier + "_automatic.csv"] = csv.str();
    }

    // human block, kept apart from the automatic numbers
    std::map<std::pair<std::string, std::string>, double> human_vals;
    std::set<std::string> human_sys;
    for (const auto& [key, mean] : report.human) {
      if (std::get<1>(key) != tier) continue;
      human_vals[{std::get<0>(key), std::get<2>(key)}] = mean;
      human_sys.insert(std::get<0>(key));
    }
    if (!human_vals.empty()) {
      std::vector<std::string> systems(human_sys.begin(), human_sys.end());
      render_block(table, tier, "human", subs, systems, human_vals);
      std::ostringstream csv;
      csv << "subdomain,system,score\n";
      for (const auto& sd : subs)
        for (const auto& sys : systems) {
          auto it = human_vals.find({sys, sd});
          if (it != human_vals.end()) csv << sd << "," << sys << "," << fmt2(it->second) << "\n";
        }
      rendered.radar_csvs[tier + "_human.csv"] = csv.str();
    }
  }

  rendered.table_text = table.str();
  return rendered;
}

}  // namespace icpipe
