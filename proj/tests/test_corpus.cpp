// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "icpipe/corpus.hpp"
#include "icpipe/error.hpp"
#include "icpipe/rng.hpp"
#include "test_helpers.hpp"

using namespace icpipe;

// --- clean_text ----------------------------------------------------------

TEST_CASE("clean_text strips urls and counts them") {
  auto [text, report] = clean_text("see https://example.com/a?b=1 for details");
  CHECK(report.urls == 1);
  CHECK(text.find("http") == std::string::npos);
  CHECK(text.find("see") != std::string::npos);
  CHECK(text.find("for details") != std::string::npos);
}

TEST_CASE("clean_text removes page-number and form-feed boundary lines") {
  auto [text, report] = clean_text("first page text\n12\nsecond page text\n\f\nthird page");
  CHECK(report.page_numbers == 2);
  CHECK(text.find("12") == std::string::npos);
  CHECK(text.find("first page text") != std::string::npos);
  CHECK(text.find("third page") != std::string::npos);
}

TEST_CASE("clean_text drops repeated headers next to page boundaries") {
  std::string raw =
      "CHIP DESIGN HANDBOOK\n"
      "alpha body line\n"
      "1\n"
      "CHIP DESIGN HANDBOOK\n"
      "beta body line\n"
      "2\n"
      "CHIP DESIGN HANDBOOK\n"
      "gamma body line\n"
      "3\n"
      "CHIP DESIGN HANDBOOK\n";
  auto [text, report] = clean_text(raw);
  CHECK(report.page_numbers == 3);
  CHECK(report.headers_footers == 4);
  CHECK(text.find("CHIP DESIGN HANDBOOK") == std::string::npos);
  CHECK(text.find("alpha body line") != std::string::npos);
  CHECK(text.find("gamma body line") != std::string::npos);
}

TEST_CASE("clean_text removes figure and table captions") {
  auto [text, report] =
      clean_text("body before\nFigure 3: a schematic of the LNA\nTable 12 - results\nbody after");
  CHECK(report.figure_table_artifacts == 2);
  CHECK(text.find("schematic") == std::string::npos);
  CHECK(text == "body before\nbody after");
}

TEST_CASE("clean_text truncates a reference list in the document tail") {
  std::string body(2000, 'x');
  std::string raw = body + "\nmain text continues here\nReferences\n[1] someone, somewhere\n";
  auto [text, report] = clean_text(raw);
  CHECK(report.references == 1);
  CHECK(text.find("someone, somewhere") == std::string::npos);
  CHECK(text.find("main text continues here") != std::string::npos);

  // the same heading early in a long document is left alone
  std::string early = "References\nto models are common\n" + body;
  auto [text2, report2] = clean_text(early);
  CHECK(report2.references == 0);
  CHECK(text2.find("to models are common") != std::string::npos);
}

TEST_CASE("clean_text strips control characters and replacement garbles") {
  std::string raw = "good\x01text\xEF\xBF\xBDhere";
  auto [text, report] = clean_text(raw);
  CHECK(report.nontext_chars == 2);
  CHECK(text == "goodtexthere");
}

TEST_CASE("clean_text normalizes whitespace") {
  auto [text, report] = clean_text("  a   b\t c  \n\n\n\n d  \n");
  CHECK(text == "a b c\n\nd");
  (void)report;
}

TEST_CASE("clean_text leaves already-clean text untouched with a zero report") {
  std::string clean = "A perfectly ordinary paragraph.\n\nA second paragraph.";
  auto [text, report] = clean_text(clean);
  CHECK(text == clean);
  CHECK(report.all_zero());
}

TEST_CASE("clean_text is idempotent") {
  std::vector<std::string> fixtures = {
      "see https://x.y for more\n7\nFigure 1: caption\nbody   text\n\n\n\nmore",
      "  padded \t text with\x01junk  ",
      std::string(1500, 'a') + "\nBibliography\n[2] entry",
  };
  for (const auto& raw : fixtures) {
    auto [once, r1] = clean_text(raw);
    auto [twice, r2] = clean_text(once);
    CHECK(twice == once);
    CHECK(r2.all_zero());
  }
}

// --- dedup ---------------------------------------------------------------

namespace {

std::string word_doc(Rng& rng, size_t words) {
  // small vocabulary so shingles collide realistically
  static const char* vocab[] = {"gain",  "bias",  "node",   "clock", "gate",  "drain",
                                "source", "layout", "timing", "noise", "swing", "margin"};
  std::string out;
  for (size_t i = 0; i < words; ++i) {
    out += vocab[rng.bounded(12)];
    out += ' ';
  }
  return out;
}

double exact_jaccard(const std::string& a, const std::string& b, int shingle) {
  auto ha = shingle_hashes(a, shingle);
  auto hb = shingle_hashes(b, shingle);
  std::set<uint64_t> sa(ha.begin(), ha.end()), sb(hb.begin(), hb.end());
  size_t inter = 0;
  for (uint64_t x : sa) inter += sb.count(x);
  size_t uni = sa.size() + sb.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

TEST_CASE("deduplicate removes exact duplicates, first occurrence wins") {
  std::vector<CleanDocument> docs;
  docs.push_back({"d0", "one two three four five six seven eight nine ten", {}});
  docs.push_back({"d1", "totally distinct content with other words entirely present", {}});
  docs.push_back({"d2", docs[0].text, {}});  // exact dup of d0
  docs.push_back({"d3", docs[0].text, {}});  // another exact dup
  auto [kept, report] = deduplicate(docs);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].id == "d0");
  CHECK(kept[1].id == "d1");
  CHECK(report.input_count == 4);
  CHECK(report.kept_count == 2);
  CHECK(report.exact_duplicate_groups == 1);
}

TEST_CASE("minhash estimate tracks exact jaccard") {
  Rng rng(42);
  DedupParams params;
  for (int trial = 0; trial < 20; ++trial) {
    std::string a = word_doc(rng, 300);
    std::string b = a;
    // perturb a fraction of the text to create partial overlap
    size_t cut = 30 * (static_cast<size_t>(trial) % 8);
    b = word_doc(rng, cut) + b.substr(std::min(b.size(), cut * 6));
    double exact = exact_jaccard(a, b, params.shingle_size);
    double est = minhash_estimate(
        minhash_signature(shingle_hashes(a, params.shingle_size), params.num_permutations,
                          params.seed),
        minhash_signature(shingle_hashes(b, params.shingle_size), params.num_permutations,
                          params.seed));
    CHECK(std::abs(est - exact) < 0.15);  // 128 permutations => sigma ~ 0.044
  }
}

TEST_CASE("deduplicate collapses planted near-duplicates") {
  Rng rng(7);
  std::vector<CleanDocument> docs;
  for (int i = 0; i < 20; ++i) {
    docs.push_back({"base" + std::to_string(i), word_doc(rng, 400), {}});
  }
  // plant 5 near-duplicates: copy with a short distinct prefix
  for (int i = 0; i < 5; ++i) {
    docs.push_back({"near" + std::to_string(i),
                    "altered lead-in phrase " + std::to_string(i) + " " + docs[static_cast<size_t>(i)].text,
                    {}});
  }
  auto [kept, report] = deduplicate(docs);
  CHECK(kept.size() == 20);
  CHECK(report.near_duplicate_groups == 5);
  for (const auto& d : kept) CHECK(d.id.substr(0, 4) == "base");
}

TEST_CASE("deduplicate validates its threshold") {
  DedupParams params;
  params.jaccard_threshold = 0.0;
  CHECK_THROWS_AS(deduplicate({}, params), PipelineError);
}

// --- code normalization --------------------------------------------------

TEST_CASE("normalize_code_blocks reindents fenced code to a uniform unit") {
  CleanDocument doc;
  doc.id = "c";
  doc.text =
      "intro prose\n"
      "```\n"
      "module top;\n"
      "      wire a;\n"
      "            assign a = 1;\n"
      "endmodule\n"
      "```\n"
      "outro prose";
  auto result = normalize_code_blocks(doc);
  CHECK(result.blocks_normalized == 1);
  CHECK_FALSE(result.unbalanced_fence);
  CHECK(result.doc.text.find("module top;") != std::string::npos);
  CHECK(result.doc.text.find("\n  wire a;") != std::string::npos);
  CHECK(result.doc.text.find("\n    assign a = 1;") != std::string::npos);
}

TEST_CASE("normalize_code_blocks flags an unbalanced fence and passes the tail through") {
  CleanDocument doc;
  doc.id = "c";
  doc.text = "prose\n```\n        deep indent line\nno closing fence";
  auto result = normalize_code_blocks(doc);
  CHECK(result.unbalanced_fence);
  // tail is untouched
  CHECK(result.doc.text.find("        deep indent line") != std::string::npos);
}

TEST_CASE("normalize_code_blocks detects heuristic indented blocks") {
  CleanDocument doc;
  doc.id = "c";
  doc.text =
      "prose line\n"
      "    always @(posedge clk)\n"
      "        q <= d;\n"
      "    endcase\n"
      "after";
  auto result = normalize_code_blocks(doc);
  CHECK(result.blocks_normalized == 1);
}

TEST_CASE("normalize_code_blocks expands tabs and strips trailing whitespace") {
  CleanDocument doc;
  doc.id = "c";
  doc.text = "```\n\tint x;   \n```";
  auto result = normalize_code_blocks(doc);
  CHECK(result.doc.text.find("int x;") != std::string::npos);
  CHECK(result.doc.text.find("x;   ") == std::string::npos);
  CHECK(result.doc.text.find('\t') == std::string::npos);
}

TEST_CASE("normalize_code_blocks is idempotent") {
  CleanDocument doc;
  doc.id = "c";
  doc.text = "p\n```\n  a\n      b\n  c\n```\nq\n    one\n    two\n    three\nr";
  auto once = normalize_code_blocks(doc);
  auto twice = normalize_code_blocks(once.doc);
  CHECK(twice.doc.text == once.doc.text);
}

// --- mix planning --------------------------------------------------------

TEST_CASE("plan_mix reproduces the published repeat-and-ratio table") {
  auto plan = plan_mix({{"domain", 2.8, 4}, {"code", 0.6, 1}, {"wiki", 1.3, 1}});
  REQUIRE(plan.entries.size() == 3);
  CHECK(plan.entries[0].training_tokens == doctest::Approx(11.2).epsilon(1e-12));
  CHECK(plan.entries[1].training_tokens == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(plan.entries[2].training_tokens == doctest::Approx(1.3).epsilon(1e-12));

  double total = 11.2 + 0.6 + 1.3;
  CHECK(std::abs(plan.entries[0].ratio - 11.2 / total) < 1e-12);
  CHECK(std::abs(plan.entries[1].ratio - 0.6 / total) < 1e-12);
  CHECK(std::abs(plan.entries[2].ratio - 1.3 / total) < 1e-12);

  // two-decimal presentation matches the published 0.85 / 0.05 / 0.10
  auto round2 = [](double v) { return std::round(v * 100.0) / 100.0; };
  CHECK(round2(plan.entries[0].ratio) == doctest::Approx(0.85));
  CHECK(round2(plan.entries[1].ratio) == doctest::Approx(0.05));
  CHECK(round2(plan.entries[2].ratio) == doctest::Approx(0.10));
}

TEST_CASE("plan_mix schedule tracks the ratios over every window") {
  auto plan = plan_mix({{"domain", 2.8, 4}, {"code", 0.6, 1}, {"wiki", 1.3, 1}});
  REQUIRE(plan.schedule.size() == 10000);
  const size_t window = 1000;
  for (size_t start = 0; start + window <= plan.schedule.size(); start += 250) {
    std::vector<size_t> counts(3, 0);
    for (size_t i = start; i < start + window; ++i) counts[plan.schedule[i]] += 1;
    for (size_t s = 0; s < 3; ++s) {
      double expected = plan.entries[s].ratio * static_cast<double>(window);
      // the credit scheduler drifts by at most a few samples
      CHECK(std::abs(static_cast<double>(counts[s]) - expected) <= 6.0);
    }
  }
}

TEST_CASE("plan_mix validates its inputs") {
  CHECK_THROWS_AS(plan_mix({}), PipelineError);
  CHECK_THROWS_AS(plan_mix({{"a", 0.0, 1}}), PipelineError);
  CHECK_THROWS_AS(plan_mix({{"a", 1.0, 0}}), PipelineError);
}

// --- token counting ------------------------------------------------------

TEST_CASE("default token counter splits on whitespace and punctuation") {
  CHECK(count_tokens_default("") == 0);
  CHECK(count_tokens_default("one two three") == 3);
  CHECK(count_tokens_default("a,b;c") == 3);
  CHECK(count_tokens_default("  spaced   out  ") == 2);
  CHECK(count_tokens("one two", {}) == 2);
}

TEST_CASE("vocab token counter prefers the longest match") {
  testutil::TempDir tmp;
  write_file(tmp / "vocab.txt", "trans\ntransistor\nsis\ntor\n");
  auto counter = vocab_token_counter(tmp / "vocab.txt");
  // greedy longest match: "transistor" is one token, not trans+sis+tor
  CHECK(counter("transistor") == 1);
  CHECK(counter("trans tor") == 2);
  // unknown text falls back to single characters
  CHECK(counter("xyz") == 3);
}

// --- manifest ------------------------------------------------------------

TEST_CASE("load_manifest resolves paths and validates the schema") {
  testutil::TempDir tmp;
  write_file(tmp / "doc_a.txt", "document body a");
  write_file(tmp / "doc_b.txt", "document body b");
  append_jsonl(tmp / "manifest.jsonl",
               json{{"id", "a"}, {"path", "doc_a.txt"}, {"source_kind", "textbook"},
                    {"domain_tag", "analog"}});
  append_jsonl(tmp / "manifest.jsonl",
               json{{"id", "b"}, {"path", "doc_b.txt"}, {"source_kind", "paper"},
                    {"domain_tag", "eda"}});
  auto docs = load_manifest(tmp / "manifest.jsonl");
  REQUIRE(docs.size() == 2);
  CHECK(docs[0].text == "document body a");
  CHECK(docs[1].domain_tag == "eda");
}

TEST_CASE("load_manifest rejects bad kinds, tags, and duplicate ids") {
  testutil::TempDir tmp;
  write_file(tmp / "d.txt", "body");

  write_file(tmp / "bad_kind.jsonl",
             json{{"id", "a"}, {"path", "d.txt"}, {"source_kind", "blog"},
                  {"domain_tag", "analog"}}.dump() + "\n");
  CHECK_THROWS_AS(load_manifest(tmp / "bad_kind.jsonl"), PipelineError);

  write_file(tmp / "bad_tag.jsonl",
             json{{"id", "a"}, {"path", "d.txt"}, {"source_kind", "paper"},
                  {"domain_tag", "cooking"}}.dump() + "\n");
  CHECK_THROWS_AS(load_manifest(tmp / "bad_tag.jsonl"), PipelineError);

  json row{{"id", "a"}, {"path", "d.txt"}, {"source_kind", "paper"}, {"domain_tag", "analog"}};
  write_file(tmp / "dup.jsonl", row.dump() + "\n" + row.dump() + "\n");
  CHECK_THROWS_AS(load_manifest(tmp / "dup.jsonl"), PipelineError);
}
