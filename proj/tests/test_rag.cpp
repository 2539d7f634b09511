// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <set>

#include <httplib.h>

#include "icpipe/error.hpp"
#include "icpipe/rag.hpp"
#include "icpipe/rng.hpp"
#include "test_helpers.hpp"

using namespace icpipe;

namespace {

std::vector<float> random_unit(Rng& rng, size_t dim) {
  std::vector<float> v(dim);
  for (auto& x : v) x = static_cast<float>(rng.next_double() * 2.0 - 1.0);
  normalize_unit(v);
  return v;
}

Chunk tiny_chunk(const std::string& doc, size_t seq) {
  Chunk c;
  c.doc_id = doc;
  c.seq = seq;
  c.text = doc + "#" + std::to_string(seq);
  return c;
}

}  // namespace

// --- chunking ------------------------------------------------------------

TEST_CASE("chunks overlap exactly and reconstruct the document byte for byte") {
  Rng rng(3);
  std::string text;
  for (int p = 0; p < 40; ++p) {
    for (int w = 0; w < 30 + static_cast<int>(rng.bounded(40)); ++w)
      text += "word" + std::to_string(rng.bounded(100)) + " ";
    text += "\n\n";
  }

  ChunkingParams params{500, 80};
  auto chunks = chunk_document("d1", text, params);
  REQUIRE(!chunks.empty());

  std::string rebuilt = chunks[0].text;
  for (size_t i = 1; i < chunks.size(); ++i) {
    CHECK(chunks[i].seq == i);
    CHECK(chunks[i].text.size() <= params.max_chars);
    // the chunk starts exactly overlap_chars before the previous end
    size_t prev_end = chunks[i - 1].char_offset + chunks[i - 1].char_length;
    CHECK(chunks[i].char_offset == prev_end - params.overlap_chars);
    rebuilt += chunks[i].text.substr(params.overlap_chars);
  }
  CHECK(rebuilt == text);

  // offsets/lengths point into the original
  for (const auto& c : chunks)
    CHECK(text.substr(c.char_offset, c.char_length) == c.text);
}

TEST_CASE("short documents become a single chunk; empty ones are rejected") {
  auto one = chunk_document("d", "tiny text", {});
  REQUIRE(one.size() == 1);
  CHECK(one[0].text == "tiny text");
  CHECK_THROWS_AS(chunk_document("d", "", {}), PipelineError);
}

// --- index ---------------------------------------------------------------

TEST_CASE("the index only accepts unit vectors of the right dimension") {
  VectorIndex index(8);
  std::vector<float> good(8, 0.0f);
  good[0] = 1.0f;
  CHECK_NOTHROW(index.add(tiny_chunk("d", 0), good));

  std::vector<float> wrong_dim(4, 0.5f);
  CHECK_THROWS_AS(index.add(tiny_chunk("d", 1), wrong_dim), PipelineError);
  std::vector<float> not_unit(8, 0.5f);
  CHECK_THROWS_AS(index.add(tiny_chunk("d", 1), not_unit), PipelineError);
  CHECK(index.size() == 1);
  CHECK_THROWS_AS(VectorIndex(8).search(good, 1), PipelineError);  // empty index
}

TEST_CASE("graph search recalls what exact search finds") {
  const size_t dim = 32, n = 600;
  Rng rng(11);
  GraphParams params;
  params.exact_fallback_below = 1;  // force the graph in automatic mode too
  VectorIndex index(dim, params);
  std::vector<std::vector<float>> vecs;
  for (size_t i = 0; i < n; ++i) {
    auto v = random_unit(rng, dim);
    index.add(tiny_chunk("d", i), v);
    vecs.push_back(std::move(v));
  }

  size_t hits = 0, wanted = 0;
  for (int q = 0; q < 50; ++q) {
    auto query = random_unit(rng, dim);
    auto exact = index.search(query, 3, SearchMode::exact);
    auto approx = index.search(query, 3, SearchMode::approximate);
    REQUIRE(exact.size() == 3);
    REQUIRE(approx.size() == 3);
    // exact results are sorted by descending score
    CHECK(exact[0].score >= exact[1].score);
    CHECK(exact[1].score >= exact[2].score);
    std::set<size_t> truth;
    for (const auto& h : exact) truth.insert(h.chunk.seq);
    for (const auto& h : approx) hits += truth.count(h.chunk.seq);
    wanted += 3;
  }
  CHECK(static_cast<double>(hits) / wanted >= 0.9);
}

TEST_CASE("querying with a stored vector returns that item at score one") {
  const size_t dim = 16;
  Rng rng(5);
  VectorIndex index(dim);
  std::vector<std::vector<float>> vecs;
  for (size_t i = 0; i < 100; ++i) {
    auto v = random_unit(rng, dim);
    index.add(tiny_chunk("d", i), v);
    vecs.push_back(std::move(v));
  }
  for (size_t probe : {size_t(0), size_t(42), size_t(99)}) {
    auto hits = index.search(vecs[probe], 1);
    REQUIRE(hits.size() == 1);
    CHECK(hits[0].chunk.seq == probe);
    CHECK(hits[0].score == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("a reloaded index answers queries identically") {
  testutil::TempDir tmp;
  const size_t dim = 24;
  Rng rng(17);
  VectorIndex index(dim);
  for (size_t i = 0; i < 200; ++i) index.add(tiny_chunk("doc", i), random_unit(rng, dim));
  index.save(tmp.path);

  VectorIndex loaded = VectorIndex::load(tmp.path);
  CHECK(loaded.size() == 200);
  CHECK(loaded.dimension() == dim);
  for (int q = 0; q < 20; ++q) {
    auto query = random_unit(rng, dim);
    auto a = index.search(query, 5);
    auto b = loaded.search(query, 5);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].chunk.seq == b[i].chunk.seq);
      CHECK(a[i].score == doctest::Approx(b[i].score).epsilon(1e-9));
      CHECK(a[i].chunk.text == b[i].chunk.text);
    }
  }
}

// --- answering -----------------------------------------------------------

TEST_CASE("assemble_context numbers passages and drops the tail on a tight budget") {
  std::vector<SearchHit> hits;
  for (int i = 0; i < 3; ++i) {
    SearchHit h;
    h.chunk = tiny_chunk("d", i);
    h.chunk.text = "passage body " + std::to_string(i) + std::string(100, 'x');
    h.score = 1.0 - i * 0.1;
    hits.push_back(std::move(h));
  }
  std::string full = assemble_context("the question?", hits, 6000);
  CHECK(full.find("[1]") != std::string::npos);
  CHECK(full.find("[3]") != std::string::npos);
  CHECK(full.find("the question?") != std::string::npos);
  // top passage comes before the runner-up
  CHECK(full.find("passage body 0") < full.find("passage body 1"));

  std::string tight = assemble_context("the question?", hits, 300);
  CHECK(tight.find("passage body 0") != std::string::npos);
  CHECK(tight.find("passage body 2") == std::string::npos);  // lowest rank dropped first
  CHECK(tight.find("the question?") != std::string::npos);   // question always kept
}

TEST_CASE("answer_with_context grounds the reply in retrieved passages") {
  MockEmbedBackend embed(32, 7);
  MockChatBackend chat;
  VectorIndex index(32);
  std::vector<std::string> texts = {
      "Setup time is the interval data must be stable before the clock edge.",
      "Hold time is the interval data must stay stable after the clock edge.",
      "A charge pump converts the phase detector output into a control voltage."};
  std::vector<Chunk> chunks;
  for (size_t i = 0; i < texts.size(); ++i) {
    Chunk c = tiny_chunk("notes", i);
    c.text = texts[i];
    chunks.push_back(c);
  }
  ingest_chunks(index, chunks, embed);
  CHECK(index.size() == 3);

  auto result = answer_with_context(index, "What is setup time?", embed, chat, 2);
  CHECK(result.passages.size() == 2);
  CHECK(!result.answer.empty());
}

// --- http service --------------------------------------------------------

TEST_CASE("the rag service serves ingest, query and healthz over http") {
  MockEmbedBackend embed(32, 7);
  MockChatBackend chat;
  VectorIndex index(32);
  RagService service(index, embed, chat);
  REQUIRE(service.start(0));  // pick a free port

  httplib::Client client("127.0.0.1", service.port());
  client.set_read_timeout(10, 0);

  auto health = client.Get("/healthz");
  REQUIRE(health);
  CHECK(health->status == 200);

  json ingest_body{{"documents",
                    json::array({json{{"id", "n1"},
                                      {"text", "Setup time precedes the clock edge; hold time "
                                               "follows it. Both bound the data window."}}})}};
  auto ingest = client.Post("/ingest", ingest_body.dump(), "application/json");
  REQUIRE(ingest);
  CHECK(ingest->status == 200);
  json ingest_reply = json::parse(ingest->body);
  CHECK(ingest_reply.at("chunks_added").get<int>() >= 1);

  auto query = client.Post("/query", json{{"question", "what is hold time?"}, {"k", 1}}.dump(),
                           "application/json");
  REQUIRE(query);
  CHECK(query->status == 200);
  json query_reply = json::parse(query->body);
  CHECK(!query_reply.at("answer").get<std::string>().empty());
  CHECK(query_reply.at("passages").size() == 1);

  auto bad = client.Post("/query", "{not json", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);

  service.stop();
}
