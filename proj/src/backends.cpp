// SPDX-License-Identifier: Apache-2.0
#include "icpipe/backends.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <thread>

#include <httplib.h>

namespace icpipe {

// --- config / request ----------------------------------------------------

void BackendConfig::validate() const {
  if (timeout_seconds <= 0) throw PipelineError(Errc::config_error, "timeout must be > 0");
  if (max_retries < 0) throw PipelineError(Errc::config_error, "max_retries must be >= 0");
  if (max_concurrency < 1) throw PipelineError(Errc::config_error, "max_concurrency must be >= 1");
  if (rate_limit_per_minute && *rate_limit_per_minute <= 0)
    throw PipelineError(Errc::config_error, "rate_limit must be > 0");
}

BackendConfig BackendConfig::from_json(const json& j) {
  BackendConfig c;
  c.endpoint_url = j.value("endpoint_url", "");
  c.model_name = j.value("model_name", "");
  c.timeout_seconds = j.value("timeout", 30.0);
  c.max_retries = j.value("max_retries", 3);
  c.max_concurrency = j.value("max_concurrency", 4);
  if (j.contains("rate_limit")) c.rate_limit_per_minute = j.at("rate_limit").get<double>();
  c.api_key_env = j.value("api_key_env", "ICPIPE_API_KEY");
  c.validate();
  return c;
}

json BackendConfig::to_json() const {
  json j;
  j["endpoint_url"] = endpoint_url;
  j["model_name"] = model_name;
  j["timeout"] = timeout_seconds;
  j["max_retries"] = max_retries;
  j["max_concurrency"] = max_concurrency;
  if (rate_limit_per_minute) j["rate_limit"] = *rate_limit_per_minute;
  j["api_key_env"] = api_key_env;
  return j;
}

const char* chat_role_name(ChatRole r) {
  switch (r) {
    case ChatRole::system: return "system";
    case ChatRole::user: return "user";
    case ChatRole::assistant: return "assistant";
  }
  return "?";
}

void ChatRequest::validate() const {
  if (messages.empty()) throw PipelineError(Errc::config_error, "chat request has no messages");
  if (messages.back().role != ChatRole::user)
    throw PipelineError(Errc::config_error, "last chat message must be from user");
  if (sampling.temperature < 0 || sampling.temperature > 2)
    throw PipelineError(Errc::config_error, "temperature outside [0,2]");
  if (sampling.max_tokens <= 0)
    throw PipelineError(Errc::config_error, "max_tokens must be positive");
}

uint64_t request_fingerprint(const ChatRequest& req) {
  uint64_t h = 1469598103934665603ULL;
  for (const auto& m : req.messages) {
    h = fnv1a64(chat_role_name(m.role), h);
    h = fnv1a64("\x1f", h);
    h = fnv1a64(m.text, h);
    h = fnv1a64("\x1e", h);
  }
  return h;
}

std::string request_fingerprint_hex(const ChatRequest& req) {
  return hex64(request_fingerprint(req));
}

// --- concurrency gate ----------------------------------------------------

void ConcurrencyGate::enter() {
  std::unique_lock<std::mutex> lk(mu_);
  cv_.wait(lk, [&] { return in_flight_.load() < cap_; });
  int now = in_flight_.fetch_add(1) + 1;
  int peak = peak_.load();
  while (now > peak && !peak_.compare_exchange_weak(peak, now)) {
  }
}

void ConcurrencyGate::leave() {
  {
    std::lock_guard<std::mutex> lk(mu_);
    in_flight_.fetch_sub(1);
  }
  cv_.notify_one();
}

// --- mock chat -----------------------------------------------------------

namespace {

std::string task_marker(const ChatRequest& req) {
  // First line of the last user message, when it looks like "task: <name>".
  const std::string& text = req.messages.back().text;
  size_t nl = text.find('\n');
  std::string first = trim(text.substr(0, nl));
  if (starts_with(first, "task:")) return trim(first.substr(5));
  return "";
}

}  // namespace

std::string mock_fallback_reply(const ChatRequest& req) {
  uint64_t fp = request_fingerprint(req);
  std::string digest = hex64(fp);
  std::string task = task_marker(req);
  if (task == "extract-qa") {
    std::string out;
    for (int i = 0; i < 2; ++i) {
      std::string tag = digest.substr(0, 8) + "-" + std::to_string(i);
      out += "<<question>>\nWhat does section " + tag + " of the source describe?\n";
      out += "<<answer>>\nIt describes the material identified by " + tag + ".\n<<end>>\n";
    }
    return out;
  }
  if (task == "ground-answer") {
    return "Based on the retrieved passages, the answer is grounded in digest " + digest + ".";
  }
  if (task == "debate-turn") {
    return "My answer covers the question more completely than my opponent's. [" + digest + "]";
  }
  if (task == "verdict") {
    return "<<verdict>> A\nThe first answer is better supported by the source. [" + digest + "]";
  }
  if (task == "regenerate") {
    std::string tag = digest.substr(0, 8);
    return "<<question>>\nCan you elaborate on topic " + tag + " in more depth?\n"
           "<<answer>>\nAn expanded treatment of topic " + tag + " follows from the winning answer.\n"
           "<<end>>\n";
  }
  if (task == "inspect") return "accept all\ncontinue";
  if (task == "manage") {
    return "<<type>> conceptual\n<<continue>> yes\n<<rationale>> mock directives " + digest;
  }
  if (task == "aspect-score") {
    double v = static_cast<double>(fp % 1001) / 1000.0;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return std::string(buf);
  }
  if (task == "judge-pair") return "FIRST";
  if (task == "refusal") return "I cannot help with that request. [" + digest + "]";
  return "mock-response digest=" + digest;
}

void MockChatBackend::add_entry(uint64_t fingerprint, std::string response) {
  table_[fingerprint] = std::move(response);
}

void MockChatBackend::load_table(const std::filesystem::path& p) {
  json j = json::parse(read_file(p));
  for (auto it = j.begin(); it != j.end(); ++it) {
    table_[std::stoull(it.key(), nullptr, 16)] = it.value().get<std::string>();
  }
}

std::string MockChatBackend::complete(const ChatRequest& req) {
  req.validate();
  if (budget_) budget_->charge();
  calls_.fetch_add(1);
  auto it = table_.find(request_fingerprint(req));
  if (it != table_.end()) return it->second;
  return mock_fallback_reply(req);
}

// --- mock embedding ------------------------------------------------------

void normalize_unit(std::vector<float>& v) {
  double norm2 = 0;
  for (float x : v) norm2 += static_cast<double>(x) * x;
  if (norm2 == 0) throw PipelineError(Errc::internal, "zero vector cannot be normalized");
  double inv = 1.0 / std::sqrt(norm2);
  for (float& x : v) x = static_cast<float>(x * inv);
}

std::vector<std::vector<float>> MockEmbedBackend::embed(const std::vector<std::string>& texts) {
  if (texts.empty()) throw PipelineError(Errc::config_error, "embed called with no texts");
  if (budget_) budget_->charge();
  std::vector<std::vector<float>> out;
  out.reserve(texts.size());
  uint64_t base = fnv1a64_u64(seed_);
  for (const auto& text : texts) {
    if (trim(text).empty()) throw PipelineError(Errc::empty_text, "whitespace-only embed input");
    std::vector<float> v(dim_, 0.0f);
    size_t n = text.size();
    size_t gram = n >= 3 ? 3 : n;
    for (size_t i = 0; i + gram <= n; ++i) {
      uint64_t h = fnv1a64(std::string_view(text).substr(i, gram), base);
      // two scattered updates per n-gram for denser similarity structure
      v[h % dim_] += ((h >> 32) & 1) ? 1.0f : -1.0f;
      uint64_t h2 = fnv1a64_u64(h);
      v[h2 % dim_] += ((h2 >> 32) & 1) ? 1.0f : -1.0f;
    }
    normalize_unit(v);
    out.push_back(std::move(v));
  }
  return out;
}

SafetyLabel MockSafetyBackend::classify(const std::string& prompt, const std::string& response) {
  if (trim(prompt).empty() || trim(response).empty())
    throw PipelineError(Errc::config_error, "safety classify needs non-empty prompt and response");
  if (budget_) budget_->charge();
  for (const auto& marker : blocklist_) {
    if (response.find(marker) != std::string::npos) return SafetyLabel::unsafe;
  }
  return SafetyLabel::safe;
}

// --- remote --------------------------------------------------------------

json http_post_json(const BackendConfig& config, const std::string& path, const json& body) {
  httplib::Client client(config.endpoint_url);
  client.set_connection_timeout(std::chrono::milliseconds(
      static_cast<int64_t>(config.timeout_seconds * 1000)));
  client.set_read_timeout(std::chrono::milliseconds(
      static_cast<int64_t>(config.timeout_seconds * 1000)));
  httplib::Headers headers;
  if (const char* key = std::getenv(config.api_key_env.c_str())) {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  std::string payload = body.dump();
  int attempts = config.max_retries + 1;
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(100LL << (attempt - 1)));
    }
    auto res = client.Post(path, headers, payload, "application/json");
    if (!res || res->status >= 500) continue;  // transient, retry
    if (res->status != 200) {
      throw PipelineError(Errc::remote_unavailable,
                          path + " returned status " + std::to_string(res->status));
    }
    json j = json::parse(res->body, nullptr, false);
    if (j.is_discarded())
      throw PipelineError(Errc::malformed_response, "non-JSON body from " + path);
    return j;
  }
  throw PipelineError(Errc::remote_unavailable,
                      "no response from " + config.endpoint_url + path + " after " +
                          std::to_string(attempts) + " attempts");
}

RemoteChatBackend::RemoteChatBackend(BackendConfig config) : config_(std::move(config)) {
  config_.validate();
  gate_ = std::make_shared<ConcurrencyGate>(config_.max_concurrency);
}

std::string RemoteChatBackend::complete(const ChatRequest& req) {
  req.validate();
  if (budget_) budget_->charge();
  ConcurrencyGate::Ticket ticket(*gate_);
  json body;
  body["model"] = config_.model_name;
  body["messages"] = json::array();
  for (const auto& m : req.messages) {
    body["messages"].push_back({{"role", chat_role_name(m.role)}, {"content", m.text}});
  }
  body["temperature"] = req.sampling.temperature;
  body["max_tokens"] = req.sampling.max_tokens;
  if (req.seed) body["seed"] = *req.seed;
  json res = http_post_json(config_, "/v1/chat/completions", body);
  if (!res.contains("choices") || !res["choices"].is_array() || res["choices"].empty())
    throw PipelineError(Errc::malformed_response, "chat reply missing choices");
  const json& msg = res["choices"][0];
  if (!msg.contains("message") || !msg["message"].contains("content") ||
      !msg["message"]["content"].is_string())
    throw PipelineError(Errc::malformed_response, "chat reply missing message content");
  std::string text = msg["message"]["content"].get<std::string>();
  if (text.empty()) throw PipelineError(Errc::malformed_response, "empty completion text");
  return text;
}

RemoteEmbedBackend::RemoteEmbedBackend(BackendConfig config, size_t dim)
    : config_(std::move(config)), dim_(dim) {
  config_.validate();
  if (dim_ < 2) throw PipelineError(Errc::config_error, "embedding dim must be >= 2");
  gate_ = std::make_shared<ConcurrencyGate>(config_.max_concurrency);
}

std::vector<std::vector<float>> RemoteEmbedBackend::embed(const std::vector<std::string>& texts) {
  if (texts.empty()) throw PipelineError(Errc::config_error, "embed called with no texts");
  for (const auto& t : texts) {
    if (trim(t).empty()) throw PipelineError(Errc::empty_text, "whitespace-only embed input");
  }
  if (budget_) budget_->charge();
  ConcurrencyGate::Ticket ticket(*gate_);
  json body;
  body["model"] = config_.model_name;
  body["input"] = texts;
  json res = http_post_json(config_, "/v1/embeddings", body);
  if (!res.contains("data") || !res["data"].is_array() || res["data"].size() != texts.size())
    throw PipelineError(Errc::malformed_response, "embedding reply size mismatch");
  std::vector<std::vector<float>> out;
  out.reserve(texts.size());
  for (const auto& item : res["data"]) {
    if (!item.contains("embedding") || !item["embedding"].is_array() ||
        item["embedding"].size() != dim_)
      throw PipelineError(Errc::malformed_response, "embedding entry has wrong dimension");
    std::vector<float> v = item["embedding"].get<std::vector<float>>();
    normalize_unit(v);
    out.push_back(std::move(v));
  }
  return out;
}

RemoteSafetyBackend::RemoteSafetyBackend(BackendConfig config) : chat_(std::move(config)) {}

void RemoteSafetyBackend::set_budget(BudgetPtr b) { chat_.set_budget(std::move(b)); }

SafetyLabel RemoteSafetyBackend::classify(const std::string& prompt, const std::string& response) {
  if (trim(prompt).empty() || trim(response).empty())
    throw PipelineError(Errc::config_error, "safety classify needs non-empty prompt and response");
  ChatRequest req;
  req.messages.push_back({ChatRole::system,
                          "You are a strict safety classifier. Reply with exactly one word: "
                          "safe or unsafe."});
  req.messages.push_back({ChatRole::user, "task: classify-safety\nPROMPT:\n" + prompt +
                                              "\nRESPONSE:\n" + response});
  std::string reply = to_lower(chat_.complete(req));
  if (reply.find("unsafe") != std::string::npos) return SafetyLabel::unsafe;
  if (reply.find("safe") != std::string::npos) return SafetyLabel::safe;
  throw PipelineError(Errc::malformed_response, "classifier reply names neither label");
}

}  // namespace icpipe
