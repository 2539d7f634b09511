// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "icpipe/error.hpp"
#include "icpipe/util.hpp"

namespace icpipe {

// --- configuration -------------------------------------------------------

struct BackendConfig {
  std::string endpoint_url;
  std::string model_name;
  double timeout_seconds = 30.0;
  int max_retries = 3;
  int max_concurrency = 4;
  std::optional<double> rate_limit_per_minute;
  std::string api_key_env = "ICPIPE_API_KEY";

  void validate() const;
  static BackendConfig from_json(const json& j);
  json to_json() const;
};

// --- chat request --------------------------------------------------------

enum class ChatRole { system, user, assistant };

const char* chat_role_name(ChatRole r);

struct ChatMessage {
  ChatRole role;
  std::string text;
};

struct SamplingParams {
  double temperature = 0.0;  // [0, 2]
  int max_tokens = 2048;
};

struct ChatRequest {
  std::vector<ChatMessage> messages;
  SamplingParams sampling;
  std::optional<int64_t> seed;

  void validate() const;  // non-empty, last message is user
};

// Stable hash of the message list; the key for scripted mock tables.
uint64_t request_fingerprint(const ChatRequest& req);
std::string request_fingerprint_hex(const ChatRequest& req);

// --- call budget ---------------------------------------------------------

// Shared across all backends of a run; every backend call charges one unit.
class CallBudget {
 public:
  explicit CallBudget(uint64_t limit) : limit_(limit), used_(0) {}

  void charge() {
    uint64_t prev = used_.fetch_add(1);
    if (prev >= limit_) {
      used_.fetch_sub(1);
      throw PipelineError(Errc::budget_exceeded,
                          "call budget of " + std::to_string(limit_) + " exhausted");
    }
  }

  uint64_t used() const { return used_.load(); }
  uint64_t limit() const { return limit_; }
  uint64_t remaining() const {
    uint64_t u = used_.load();
    return u >= limit_ ? 0 : limit_ - u;
  }

 private:
  uint64_t limit_;
  std::atomic<uint64_t> used_;
};

using BudgetPtr = std::shared_ptr<CallBudget>;

// --- interfaces ----------------------------------------------------------

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string complete(const ChatRequest& req) = 0;
};

class EmbedBackend {
 public:
  virtual ~EmbedBackend() = default;
  virtual size_t dimension() const = 0;
  // One unit vector per input text.
  virtual std::vector<std::vector<float>> embed(const std::vector<std::string>& texts) = 0;
};

enum class SafetyLabel { safe, unsafe };

class SafetyBackend {
 public:
  virtual ~SafetyBackend() = default;
  virtual SafetyLabel classify(const std::string& prompt, const std::string& response) = 0;
};

struct Backends {
  std::shared_ptr<ChatBackend> chat;
  std::shared_ptr<EmbedBackend> embed;
  std::shared_ptr<SafetyBackend> safety;
};

// --- concurrency gate ----------------------------------------------------

// Counting gate enforcing max_concurrency; exposes a peak counter so tests
// can assert the cap was never exceeded.
class ConcurrencyGate {
 public:
  explicit ConcurrencyGate(int cap) : cap_(cap) {}

  class Ticket {
   public:
    explicit Ticket(ConcurrencyGate& g) : gate_(g) { gate_.enter(); }
    ~Ticket() { gate_.leave(); }
    Ticket(const Ticket&) = delete;
    Ticket& operator=(const Ticket&) = delete;

   private:
    ConcurrencyGate& gate_;
  };

  int peak_in_flight() const { return peak_.load(); }
  int in_flight() const { return in_flight_.load(); }
  int cap() const { return cap_; }

 private:
  friend class Ticket;
  void enter();
  void leave();

  int cap_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::atomic<int> in_flight_{0};
  std::atomic<int> peak_{0};
};

// --- mock backends -------------------------------------------------------

// Scripted chat mock: fingerprint -> canned text, deterministic fallback.
// The fallback recognizes the pipeline's task markers (first line of the
// last user message, "task: <name>") and emits a format-conforming reply
// embedding the request digest, so whole-pipeline runs work offline.
class MockChatBackend : public ChatBackend {
 public:
  MockChatBackend() = default;

  void add_entry(uint64_t fingerprint, std::string response);
  void add_entry(const ChatRequest& req, std::string response) {
    add_entry(request_fingerprint(req), std::move(response));
  }
  // JSON file: {"<hex fingerprint>": "response", ...}
  void load_table(const std::filesystem::path& p);

  void set_budget(BudgetPtr b) { budget_ = std::move(b); }

  std::string complete(const ChatRequest& req) override;

  uint64_t calls() const { return calls_.load(); }

 private:
  std::map<uint64_t, std::string> table_;
  BudgetPtr budget_;
  std::atomic<uint64_t> calls_{0};
};

// Chat backend backed by a function. Used by tests and by scripted stages.
class FnChatBackend : public ChatBackend {
 public:
  explicit FnChatBackend(std::function<std::string(const ChatRequest&)> fn)
      : fn_(std::move(fn)) {}

  void set_budget(BudgetPtr b) { budget_ = std::move(b); }

  std::string complete(const ChatRequest& req) override {
    if (budget_) budget_->charge();
    calls_.fetch_add(1);
    return fn_(req);
  }

  uint64_t calls() const { return calls_.load(); }

 private:
  std::function<std::string(const ChatRequest&)> fn_;
  BudgetPtr budget_;
  std::atomic<uint64_t> calls_{0};
};

// Deterministic embedding: seeded hash projection of character trigrams.
class MockEmbedBackend : public EmbedBackend {
 public:
  MockEmbedBackend(size_t dim, uint64_t seed) : dim_(dim), seed_(seed) {
    if (dim_ < 2) throw PipelineError(Errc::config_error, "embedding dim must be >= 2");
  }

  void set_budget(BudgetPtr b) { budget_ = std::move(b); }

  size_t dimension() const override { return dim_; }
  std::vector<std::vector<float>> embed(const std::vector<std::string>& texts) override;

 private:
  size_t dim_;
  uint64_t seed_;
  BudgetPtr budget_;
};

// Labels unsafe iff the response contains any blocklisted marker phrase.
class MockSafetyBackend : public SafetyBackend {
 public:
  explicit MockSafetyBackend(std::vector<std::string> blocklist)
      : blocklist_(std::move(blocklist)) {}

  void set_budget(BudgetPtr b) { budget_ = std::move(b); }

  SafetyLabel classify(const std::string& prompt, const std::string& response) override;

 private:
  std::vector<std::string> blocklist_;
  BudgetPtr budget_;
};

// --- remote backends (JSON-over-HTTP chat-completion shape) --------------

class RemoteChatBackend : public ChatBackend {
 public:
  explicit RemoteChatBackend(BackendConfig config);
  void set_budget(BudgetPtr b) { budget_ = std::move(b); }
  std::string complete(const ChatRequest& req) override;

 private:
  BackendConfig config_;
  BudgetPtr budget_;
  std::shared_ptr<ConcurrencyGate> gate_;
};

class RemoteEmbedBackend : public EmbedBackend {
 public:
  RemoteEmbedBackend(BackendConfig config, size_t dim);
  void set_budget(BudgetPtr b) { budget_ = std::move(b); }
  size_t dimension() const override { return dim_; }
  std::vector<std::vector<float>> embed(const std::vector<std::string>& texts) override;

 private:
  BackendConfig config_;
  size_t dim_;
  BudgetPtr budget_;
  std::shared_ptr<ConcurrencyGate> gate_;
};

class RemoteSafetyBackend : public SafetyBackend {
 public:
  explicit RemoteSafetyBackend(BackendConfig config);
  void set_budget(BudgetPtr b);
  SafetyLabel classify(const std::string& prompt, const std::string& response) override;

 private:
  RemoteChatBackend chat_;
};

// Shared by chat/embed remotes: POST json, retry with exponential backoff.
json http_post_json(const BackendConfig& config, const std::string& path, const json& body);

// Deterministic fallback reply for an unscripted mock request. Exposed so
// tests can predict mock output.
std::string mock_fallback_reply(const ChatRequest& req);

// L2-normalize in place; throws if the vector is all-zero.
void normalize_unit(std::vector<float>& v);

}  // namespace icpipe
