// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <thread>

#include "icpipe/backends.hpp"
#include "icpipe/error.hpp"
#include "test_helpers.hpp"

using namespace icpipe;

namespace {

ChatRequest user_request(const std::string& text) {
  ChatRequest req;
  req.messages.push_back({ChatRole::user, text});
  return req;
}

}  // namespace

TEST_CASE("backend config validates its bounds") {
  BackendConfig c;
  CHECK_NOTHROW(c.validate());

  c.timeout_seconds = 0;
  CHECK_THROWS_AS(c.validate(), PipelineError);
  c = {};
  c.max_retries = -1;
  CHECK_THROWS_AS(c.validate(), PipelineError);
  c = {};
  c.max_concurrency = 0;
  CHECK_THROWS_AS(c.validate(), PipelineError);
  c = {};
  c.rate_limit_per_minute = 0.0;
  CHECK_THROWS_AS(c.validate(), PipelineError);
}

TEST_CASE("backend config round-trips through json") {
  BackendConfig c;
  c.endpoint_url = "http://localhost:9999";
  c.model_name = "m1";
  c.timeout_seconds = 12.5;
  c.max_retries = 2;
  c.max_concurrency = 3;
  c.rate_limit_per_minute = 60.0;
  c.api_key_env = "MY_KEY";
  BackendConfig back = BackendConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
}

TEST_CASE("chat request validation") {
  ChatRequest empty;
  CHECK_THROWS_AS(empty.validate(), PipelineError);

  ChatRequest ends_assistant;
  ends_assistant.messages.push_back({ChatRole::user, "hi"});
  ends_assistant.messages.push_back({ChatRole::assistant, "hello"});
  CHECK_THROWS_AS(ends_assistant.validate(), PipelineError);

  ChatRequest bad_temp = user_request("hi");
  bad_temp.sampling.temperature = 2.5;
  CHECK_THROWS_AS(bad_temp.validate(), PipelineError);

  CHECK_NOTHROW(user_request("hi").validate());
}

TEST_CASE("request fingerprint is stable and content-sensitive") {
  auto a = user_request("question one");
  auto b = user_request("question one");
  auto c = user_request("question two");
  CHECK(request_fingerprint(a) == request_fingerprint(b));
  CHECK(request_fingerprint(a) != request_fingerprint(c));

  // role changes matter too
  ChatRequest with_system = user_request("question one");
  with_system.messages.insert(with_system.messages.begin(), {ChatRole::system, "sys"});
  CHECK(request_fingerprint(a) != request_fingerprint(with_system));
}

TEST_CASE("call budget throws on exhaustion and stays consistent") {
  CallBudget budget(3);
  budget.charge();
  budget.charge();
  budget.charge();
  CHECK(budget.used() == 3);
  CHECK(budget.remaining() == 0);
  CHECK_THROWS_AS(budget.charge(), PipelineError);
  // a failed charge does not consume
  CHECK(budget.used() == 3);
}

TEST_CASE("mock chat serves scripted entries and falls back deterministically") {
  MockChatBackend mock;
  auto req = user_request("what is a latch?");
  mock.add_entry(req, "a bistable element");
  CHECK(mock.complete(req) == "a bistable element");

  auto other = user_request("unscripted question");
  std::string first = mock.complete(other);
  std::string second = mock.complete(other);
  CHECK(first == second);
  CHECK(first == mock_fallback_reply(other));
  CHECK(mock.calls() == 3);
}

TEST_CASE("mock chat respects a shared budget") {
  MockChatBackend mock;
  auto budget = std::make_shared<CallBudget>(1);
  mock.set_budget(budget);
  CHECK_NOTHROW(mock.complete(user_request("one")));
  CHECK_THROWS_AS(mock.complete(user_request("two")), PipelineError);
}

TEST_CASE("mock fallback understands the pipeline task markers") {
  auto extract = mock_fallback_reply(user_request("task: extract-qa\nsource..."));
  CHECK(extract.find("<<question>>") != std::string::npos);
  CHECK(extract.find("<<answer>>") != std::string::npos);
  CHECK(extract.find("<<end>>") != std::string::npos);

  auto verdict = mock_fallback_reply(user_request("task: verdict\n..."));
  CHECK(verdict.find("<<verdict>> A") != std::string::npos);

  auto manage = mock_fallback_reply(user_request("task: manage\n..."));
  CHECK(manage.find("<<continue>> yes") != std::string::npos);

  auto judge = mock_fallback_reply(user_request("task: judge-pair\n..."));
  CHECK(judge == "FIRST");
}

TEST_CASE("mock table loads from a fingerprint file") {
  testutil::TempDir tmp;
  auto req = user_request("scripted");
  json table{{request_fingerprint_hex(req), "canned reply"}};
  write_file(tmp / "table.json", table.dump());

  MockChatBackend mock;
  mock.load_table(tmp / "table.json");
  CHECK(mock.complete(req) == "canned reply");
}

TEST_CASE("mock embeddings are unit vectors, deterministic, similarity-aware") {
  MockEmbedBackend embed(64, 7);
  auto out = embed.embed({"low noise amplifier design", "low noise amplifier design",
                          "completely different topic entirely"});
  REQUIRE(out.size() == 3);
  for (const auto& v : out) {
    double norm2 = 0;
    for (float x : v) norm2 += static_cast<double>(x) * x;
    CHECK(norm2 == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK(out[0] == out[1]);

  double same = 0, diff = 0;
  for (size_t i = 0; i < 64; ++i) {
    same += static_cast<double>(out[0][i]) * out[1][i];
    diff += static_cast<double>(out[0][i]) * out[2][i];
  }
  CHECK(same == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(diff < 0.9);  // unrelated text should not look identical
}

TEST_CASE("mock embedding rejects whitespace-only input") {
  MockEmbedBackend embed(8, 1);
  CHECK_THROWS_AS(embed.embed({"   \n\t "}), PipelineError);
  CHECK_THROWS_AS(embed.embed({}), PipelineError);
}

TEST_CASE("mock safety classifier flags blocklist matches only") {
  MockSafetyBackend safety({"FORBIDDEN_MARKER"});
  CHECK(safety.classify("how do I X", "here is FORBIDDEN_MARKER content") ==
        SafetyLabel::unsafe);
  CHECK(safety.classify("how do I X", "a harmless reply") == SafetyLabel::safe);
  CHECK_THROWS_AS(safety.classify("", "reply"), PipelineError);
}

TEST_CASE("concurrency gate never exceeds its cap") {
  ConcurrencyGate gate(3);
  std::vector<std::thread> threads;
  for (int i = 0; i < 16; ++i) {
    threads.emplace_back([&] {
      for (int k = 0; k < 20; ++k) {
        ConcurrencyGate::Ticket ticket(gate);
        CHECK(gate.in_flight() <= 3);
      }
    });
  }
  for (auto& t : threads) t.join();
  CHECK(gate.peak_in_flight() <= 3);
  CHECK(gate.peak_in_flight() >= 1);
  CHECK(gate.in_flight() == 0);
}

TEST_CASE("normalize_unit scales to length one and rejects the zero vector") {
  std::vector<float> v{3.0f, 4.0f};
  normalize_unit(v);
  CHECK(v[0] == doctest::Approx(0.6f));
  CHECK(v[1] == doctest::Approx(0.8f));

  std::vector<float> zero{0.0f, 0.0f};
  CHECK_THROWS_AS(normalize_unit(zero), PipelineError);
}

TEST_CASE("remote chat surfaces connection failure after retries") {
  BackendConfig c;
  c.endpoint_url = "http://127.0.0.1:1";  // nothing listens here
  c.model_name = "m";
  c.max_retries = 0;
  c.timeout_seconds = 0.2;
  RemoteChatBackend remote(c);
  CHECK_THROWS_AS(remote.complete(user_request("hello")), PipelineError);
  try {
    remote.complete(user_request("hello"));
    FAIL("expected throw");
  } catch (const PipelineError& e) {
    CHECK(e.code() == Errc::remote_unavailable);
    CHECK(e.exit_code() == 5);
  }
}
