// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <map>
#include <string>

#include "icpipe/error.hpp"
#include "icpipe/evalharness.hpp"
#include "test_helpers.hpp"

using namespace icpipe;

namespace {

BenchItem make_item(const std::string& id, Tier tier = Tier::foundational,
                    const std::string& subdomain = "eda") {
  BenchItem it;
  it.id = id;
  it.tier = tier;
  it.subdomain = subdomain;
  it.question = "Question for " + id + "?";
  return it;
}

std::string aspect_of(const ChatRequest& req) {
  for (const auto& line : split_lines(req.messages.front().text)) {
    if (starts_with(line, "aspect: ")) return trim(line.substr(8));
  }
  return "";
}

}  // namespace

// --- schema --------------------------------------------------------------

TEST_CASE("subdomain availability differs by tier") {
  CHECK(bench_subdomains().size() == 9);
  CHECK(subdomain_allowed("analog", Tier::foundational));
  CHECK(subdomain_allowed("cim", Tier::advanced));
  CHECK_FALSE(subdomain_allowed("cim", Tier::foundational));
  CHECK_FALSE(subdomain_allowed("neural_networks", Tier::foundational));
  CHECK_FALSE(subdomain_allowed("astrology", Tier::advanced));
}

TEST_CASE("bench files round-trip and report bad lines by number") {
  testutil::TempDir tmp;
  std::vector<BenchItem> items{make_item("i1"), make_item("i2", Tier::advanced, "cim")};
  items[0].rubric = "be strict";
  save_bench(tmp / "bench.jsonl", items);
  auto loaded = load_bench(tmp / "bench.jsonl");
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].rubric == "be strict");
  CHECK(loaded[1].subdomain == "cim");

  // duplicate id on line 2
  write_file(tmp / "dup.jsonl", items[0].to_json().dump() + "\n" +
                                    items[0].to_json().dump() + "\n");
  try {
    load_bench(tmp / "dup.jsonl");
    FAIL("expected throw");
  } catch (const PipelineError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }

  // cim is not a foundational subdomain
  BenchItem bad = make_item("i3");
  json j = bad.to_json();
  j["subdomain"] = "cim";
  write_file(tmp / "bad.jsonl", j.dump() + "\n");
  CHECK_THROWS_AS(load_bench(tmp / "bad.jsonl"), PipelineError);

  CHECK_THROWS_AS(load_bench(tmp / "nope.jsonl"), PipelineError);
}

// --- human scores --------------------------------------------------------

TEST_CASE("human score ingestion averages raters and validates rows") {
  testutil::TempDir tmp;
  std::vector<BenchItem> bench{make_item("i1"), make_item("i2")};

  write_file(tmp / "scores.csv",
             "item_id,system,rater,score\n"
             "i1,sysA,r1,0.8\n"
             "i1,sysA,r2,1.0\n"
             "i2,sysA,r1,0.5\n");
  auto scores = ingest_human_scores(tmp / "scores.csv", bench);
  CHECK(scores.mean("i1", "sysA") == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(scores.mean("i2", "sysA") == doctest::Approx(0.5));
  CHECK(scores.systems() == std::vector<std::string>{"sysA"});
  CHECK_THROWS_AS(scores.mean("i1", "sysB"), PipelineError);

  write_file(tmp / "range.csv", "i1,sysA,r1,1.2\n");
  try {
    ingest_human_scores(tmp / "range.csv", bench);
    FAIL("expected throw");
  } catch (const PipelineError& e) {
    CHECK(e.code() == Errc::out_of_range);
  }

  write_file(tmp / "unknown.csv", "i9,sysA,r1,0.5\n");
  try {
    ingest_human_scores(tmp / "unknown.csv", bench);
    FAIL("expected throw");
  } catch (const PipelineError& e) {
    CHECK(e.code() == Errc::unknown_item);
  }

  write_file(tmp / "short.csv", "i1,sysA,0.5\n");
  CHECK_THROWS_AS(ingest_human_scores(tmp / "short.csv", bench), PipelineError);
}

// --- aspect scoring ------------------------------------------------------

TEST_CASE("aspect scoring averages one call per aspect") {
  std::map<std::string, std::string> replies{{"key_point_redundancy", "I rate this 0.9"},
                                             {"overall_logic", "score: 0.8"},
                                             {"terminology_explanation", "1.0"}};
  FnChatBackend chat([&](const ChatRequest& req) { return replies.at(aspect_of(req)); });

  auto result = score_response_aspects(make_item("i1"), "a plausible answer", chat);
  REQUIRE(result.aspects.size() == 3);
  CHECK(result.aspects[0].aspect == "key_point_redundancy");
  CHECK(result.aspects[0].value == doctest::Approx(0.9));
  CHECK(result.combined == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(chat.calls() == 3);
}

TEST_CASE("an out-of-range aspect score earns one repair prompt") {
  std::map<std::string, int> attempts;
  FnChatBackend repairable([&](const ChatRequest& req) {
    return ++attempts[aspect_of(req)] == 1 ? std::string("1.4") : std::string("0.7");
  });
  auto result = score_response_aspects(make_item("i1"), "answer", repairable);
  CHECK(result.combined == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(repairable.calls() == 6);  // two per aspect

  FnChatBackend no_number([](const ChatRequest&) { return std::string("delightful"); });
  try {
    score_response_aspects(make_item("i1"), "answer", no_number);
    FAIL("expected throw");
  } catch (const PipelineError& e) {
    CHECK(e.code() == Errc::unparseable_agent_output);
  }

  FnChatBackend way_off([](const ChatRequest&) { return std::string("5"); });
  try {
    score_response_aspects(make_item("i1"), "answer", way_off);
    FAIL("expected throw");
  } catch (const PipelineError& e) {
    CHECK(e.code() == Errc::out_of_range);
  }
}

TEST_CASE("zero is a legitimate aspect score and empty responses are not scored") {
  FnChatBackend zeros([](const ChatRequest&) { return std::string("0"); });
  auto result = score_response_aspects(make_item("i1"), "weak answer", zeros);
  CHECK(result.combined == 0.0);

  CHECK_THROWS_AS(score_response_aspects(make_item("i1"), "   ", zeros), PipelineError);
}

// --- referee ranking -----------------------------------------------------

namespace {

// Judge that always prefers the response containing "GOOD", whichever slot
// it is presented in.
std::string quality_judge(const ChatRequest& req) {
  const std::string& text = req.messages.front().text;
  auto lines = split_lines(text);
  if (!lines.empty() && lines[0] == "task: debate-turn") return "my response is better";
  size_t good = text.find("GOOD");
  size_t second = text.find("SECOND response:");
  return (good != std::string::npos && good < second) ? "FIRST" : "SECOND";
}

}  // namespace

TEST_CASE("a consistent judge needs exactly two calls per pair") {
  FnChatBackend chat(quality_judge);
  std::map<std::string, std::string> responses{{"alpha", "a shallow take"},
                                               {"beta", "a GOOD thorough answer"}};
  auto verdict = referee_rank(make_item("i1"), responses, chat, 1);
  CHECK(verdict.ranking == std::vector<std::string>{"beta", "alpha"});
  CHECK(verdict.judge_calls == 2);
  CHECK(verdict.tie_breaks == 0);
  CHECK(verdict.judge_calls == 2 * 1 + verdict.tie_breaks);
}

TEST_CASE("a position-biased judge triggers the order-swap tie-break") {
  // always answers FIRST, so the swapped judgment disagrees
  FnChatBackend biased([](const ChatRequest& req) {
    return split_lines(req.messages.front().text)[0] == "task: debate-turn"
               ? std::string("defense")
               : std::string("FIRST");
  });
  std::map<std::string, std::string> responses{{"alpha", "one"}, {"beta", "two"}};
  auto verdict = referee_rank(make_item("i1"), responses, biased, 1);
  CHECK(verdict.tie_breaks == 1);
  CHECK(verdict.judge_calls == 3);  // 2 * pairs + tie_breaks
  // the tie-break presents (alpha, beta), so FIRST resolves to alpha
  CHECK(verdict.ranking == std::vector<std::string>{"alpha", "beta"});
}

TEST_CASE("a refused tie-break falls back to the lexicographically smaller name") {
  int judge_calls = 0;
  FnChatBackend chat([&](const ChatRequest& req) -> std::string {
    const std::string& text = req.messages.front().text;
    if (split_lines(text)[0] == "task: debate-turn") return "defense";
    ++judge_calls;
    if (text.find("or TIE") != std::string::npos) return "TIE";
    return "FIRST";  // biased, so the swapped judgment disagrees
  });
  std::map<std::string, std::string> responses{{"zeta", "one"}, {"alpha", "two"}};
  auto verdict = referee_rank(make_item("i1"), responses, chat, 1);
  CHECK(verdict.tie_breaks == 1);
  CHECK(verdict.ranking.front() == "alpha");
}

TEST_CASE("three systems are ranked over all pairs with the call identity") {
  MockChatBackend chat;  // fallback judges every pair FIRST -> always disagrees on swap
  std::map<std::string, std::string> responses{
      {"s1", "response one"}, {"s2", "response two"}, {"s3", "response three"}};
  auto verdict = referee_rank(make_item("i1"), responses, chat, 1);
  CHECK(verdict.ranking.size() == 3);
  CHECK(verdict.tie_breaks == 3);
  CHECK(verdict.judge_calls == 2 * 3 + verdict.tie_breaks);
  CHECK(verdict.ranking == std::vector<std::string>{"s1", "s2", "s3"});
}

TEST_CASE("an unclear judge gets one repair, then the ranking fails") {
  int calls = 0;
  FnChatBackend mumbling([&](const ChatRequest& req) -> std::string {
    if (split_lines(req.messages.front().text)[0] == "task: debate-turn") return "defense";
    return ++calls % 2 == 1 ? "they are both nice" : "FIRST";
  });
  std::map<std::string, std::string> responses{{"a", "one"}, {"b", "two"}};
  CHECK_NOTHROW(referee_rank(make_item("i1"), responses, mumbling, 1));

  FnChatBackend hopeless([](const ChatRequest& req) -> std::string {
    if (split_lines(req.messages.front().text)[0] == "task: debate-turn") return "defense";
    return "no verdict";
  });
  try {
    referee_rank(make_item("i1"), responses, hopeless, 1);
    FAIL("expected throw");
  } catch (const PipelineError& e) {
    CHECK(e.code() == Errc::referee_indecisive);
  }

  std::map<std::string, std::string> lonely{{"only", "one"}};
  CHECK_THROWS_AS(referee_rank(make_item("i1"), lonely, hopeless, 1), PipelineError);
}

// --- aggregation ---------------------------------------------------------

TEST_CASE("aggregate_report matches a hand-computed two-by-two oracle") {
  std::vector<BenchItem> bench{make_item("i1"), make_item("i2")};
  std::vector<ItemScore> scores{{"i1", "S1", 0.9},
                                {"i2", "S1", 0.8},
                                {"i1", "S2", 0.5},
                                {"i2", "S2", 0.7}};
  std::vector<JudgeVerdict> verdicts(2);
  verdicts[0].item_id = "i1";
  verdicts[0].ranking = {"S1", "S2"};
  verdicts[1].item_id = "i2";
  verdicts[1].ranking = {"S2", "S1"};

  auto report = aggregate_report(bench, scores, verdicts, HumanScores{});
  auto key1 = std::make_tuple(std::string("S1"), std::string("foundational"), std::string("eda"));
  auto key2 = std::make_tuple(std::string("S2"), std::string("foundational"), std::string("eda"));
  REQUIRE(report.cells.count(key1) == 1);
  REQUIRE(report.cells.count(key2) == 1);

  const auto& c1 = report.cells.at(key1);
  const auto& c2 = report.cells.at(key2);
  // aspect means: (0.9+0.8)/2 and (0.5+0.7)/2; each system wins one item
  CHECK(c1.aspect_mean == doctest::Approx(0.85).epsilon(1e-9));
  CHECK(c2.aspect_mean == doctest::Approx(0.60).epsilon(1e-9));
  CHECK(c1.win_rate == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(c2.win_rate == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(c1.integrated == doctest::Approx(0.7 * 0.85 + 0.3 * 0.5).epsilon(1e-9));
  CHECK(c2.integrated == doctest::Approx(0.7 * 0.60 + 0.3 * 0.5).epsilon(1e-9));
  CHECK(c1.count == 2);
}

TEST_CASE("aggregate_report renormalizes when a component is missing") {
  std::vector<BenchItem> bench{make_item("i1")};
  auto key = std::make_tuple(std::string("S"), std::string("foundational"), std::string("eda"));

  auto only_scores =
      aggregate_report(bench, {{"i1", "S", 0.42}}, {}, HumanScores{});
  CHECK(only_scores.cells.at(key).integrated == doctest::Approx(0.42).epsilon(1e-12));

  JudgeVerdict v;
  v.item_id = "i1";
  v.ranking = {"S", "T"};
  auto only_verdicts = aggregate_report(bench, {}, {v}, HumanScores{});
  CHECK(only_verdicts.cells.at(key).integrated == doctest::Approx(1.0).epsilon(1e-12));

  // degenerate weights pass validation and drop the debate component
  auto all_auto =
      aggregate_report(bench, {{"i1", "S", 0.42}}, {v}, HumanScores{}, ReportWeights{1.0, 0.0});
  CHECK(all_auto.cells.at(key).integrated == doctest::Approx(0.42).epsilon(1e-12));

  CHECK_THROWS_AS(aggregate_report(bench, {}, {}, HumanScores{}, ReportWeights{0.5, 0.4}),
                  PipelineError);
  CHECK_THROWS_AS(aggregate_report(bench, {{"i9", "S", 0.5}}, {}, HumanScores{}), PipelineError);
}

TEST_CASE("human means stay in their own report columns") {
  std::vector<BenchItem> bench{make_item("i1")};
  HumanScores human;
  human.raw[{"i1", "S"}] = {0.8, 1.0};
  auto report = aggregate_report(bench, {{"i1", "S", 0.3}}, {}, human);
  auto key = std::make_tuple(std::string("S"), std::string("foundational"), std::string("eda"));
  CHECK(report.human.at(key) == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(report.cells.at(key).integrated == doctest::Approx(0.3));  // untouched by human data
}

// --- rendering -----------------------------------------------------------

TEST_CASE("render_report prints fixed-point cells, margins and radar csvs") {
  SubdomainReport report;
  auto cell = [](double integrated) {
    ReportCell c;
    c.integrated = integrated;
    c.count = 1;
    return c;
  };
  report.cells[{"ours", "foundational", "eda"}] = cell(0.93);
  report.cells[{"baseline", "foundational", "eda"}] = cell(0.87);
  report.cells[{"ours", "advanced", "cim"}] = cell(0.93);
  report.cells[{"baseline", "advanced", "cim"}] = cell(0.65);
  report.human[{"ours", "foundational", "eda"}] = 0.75;

  auto rendered = render_report(report);
  CHECK(rendered.table_text.find("foundational (automatic)") != std::string::npos);
  CHECK(rendered.table_text.find("foundational (human)") != std::string::npos);
  CHECK(rendered.table_text.find("advanced (automatic)") != std::string::npos);
  CHECK(rendered.table_text.find("advanced (human)") == std::string::npos);
  CHECK(rendered.table_text.find("0.93") != std::string::npos);
  CHECK(rendered.table_text.find("0.87") != std::string::npos);
  CHECK(rendered.table_text.find("0.75") != std::string::npos);
  CHECK(rendered.table_text.find("0.28") != std::string::npos);  // |0.93 - 0.65| margin
  CHECK(rendered.table_text.find("margin") != std::string::npos);

  REQUIRE(rendered.radar_csvs.count("foundational_automatic.csv") == 1);
  REQUIRE(rendered.radar_csvs.count("advanced_automatic.csv") == 1);
  REQUIRE(rendered.radar_csvs.count("foundational_human.csv") == 1);
  const std::string& csv = rendered.radar_csvs.at("foundational_automatic.csv");
  CHECK(csv.rfind("subdomain,system,score\n", 0) == 0);
  CHECK(csv.find("eda,ours,0.93") != std::string::npos);

  // deterministic output
  auto again = render_report(report);
  CHECK(again.table_text == rendered.table_text);
  CHECK(again.radar_csvs == rendered.radar_csvs);

  CHECK_THROWS_AS(render_report(SubdomainReport{}), PipelineError);
}
