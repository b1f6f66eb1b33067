#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpco/common.hpp"

namespace mpco {

// Retries exhausted, or the endpoint could not be reached at all.
class TransportError : public Error {
 public:
  using Error::Error;
};

// The provider refused the request (non-429 4xx, malformed reply, missing
// credential). Never retried.
class RequestError : public Error {
 public:
  RequestError(const std::string& what, int status = 0) : Error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

// Mock provider has no rule for a request: a bug in the test script.
class ScriptGapError : public Error {
 public:
  using Error::Error;
};

// Thrown by a provider for a single failed attempt that may be retried.
class TransientError : public Error {
 public:
  using Error::Error;
};

struct ModelConfig {
  std::string model_id;
  std::string provider = "http";  // "http" or "mock"
  std::string endpoint_url;       // mock: path of the script file
  std::string auth_env_var;       // name of the variable, never the secret
  std::chrono::milliseconds request_timeout{120000};
  int max_retries = 3;
  std::optional<double> temperature;  // absent: provider default
  std::optional<std::string> system_message;
  // Header templates; "{credential}" expands to the value of auth_env_var.
  // Empty means "Authorization: Bearer {credential}" when a credential is set.
  std::map<std::string, std::string> headers;
  // JSON pointer of the reply text in the response body.
  std::string response_pointer = "/choices/0/message/content";
  // Merged into the request body (e.g. max_tokens).
  nlohmann::json extra_body = nlohmann::json::object();

  // Throws ValidationError.
  void check() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct ChatExchange {
  std::string request_text;
  std::string response_text;
  double latency = 0;  // seconds, first attempt to final reply
  std::string model_id;
  int attempt_count = 1;
};

void to_json(nlohmann::json& j, const ChatExchange& e);
void from_json(const nlohmann::json& j, ChatExchange& e);

// One attempt at one chat completion.
class ChatProvider {
 public:
  virtual ~ChatProvider() = default;
  virtual std::string send(const ModelConfig& cfg, const std::string& prompt) = 0;
};

// JSON chat-completion over HTTP(S).
class HttpProvider : public ChatProvider {
 public:
  std::string send(const ModelConfig& cfg, const std::string& prompt) override;

  static nlohmann::json request_body(const ModelConfig& cfg, const std::string& prompt);
};

struct MockRule {
  enum class Match { substring, sha256 };
  Match match = Match::substring;
  std::string pattern;
  std::optional<std::string> model;  // restrict to one model id
  std::string reply;
  int failures_before_success = 0;  // negative: fail forever
};

// Deterministic scripted provider. The first matching rule answers; each rule
// fails `failures_before_success` times before replying. Rule state advances
// under a lock, so concurrent callers see a consistent failure count.
class MockProvider : public ChatProvider {
 public:
  explicit MockProvider(std::vector<MockRule> rules);

  std::string send(const ModelConfig& cfg, const std::string& prompt) override;

  std::size_t calls() const;

 private:
  mutable std::mutex mu_;
  std::vector<MockRule> rules_;
  std::vector<int> remaining_failures_;
  std::size_t calls_ = 0;
};

// Script: JSON list of {"match": "<substring>" | {"substring": ..} | {"sha256": ..},
// "reply": ".." | "reply_file": "<path relative to the script>", "model": "..",
// "failures_before_success": n}.
std::shared_ptr<MockProvider> load_mock(const fs::path& script_path);
std::shared_ptr<MockProvider> parse_mock(std::string_view script_json,
                                         const fs::path& base_dir = {});

struct RetryPolicy {
  std::chrono::milliseconds base{1000};
  double factor = 2.0;
  double jitter = 0.2;  // each delay is scaled by a uniform factor in [1-j, 1+j]

  std::chrono::milliseconds nominal_delay(int retry) const;  // retry >= 1
};

class Semaphore {
 public:
  explicit Semaphore(std::size_t count) : count_(count) {}
  void acquire();
  void release();

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::size_t count_;
};

// Routes requests to providers, applies retries and concurrency caps, and
// appends every successful exchange to the audit log.
class ChatClient {
 public:
  struct Options {
    std::size_t global_cap = 4;
    std::size_t per_provider_cap = 2;
    RetryPolicy retry;
    std::function<void(std::chrono::milliseconds)> sleep;  // default: this_thread
    std::optional<fs::path> audit_log;
    std::uint64_t seed = 0;
  };

  ChatClient();
  explicit ChatClient(Options options);

  // Overrides the provider that `cfg` resolves to.
  void set_provider(const ModelConfig& cfg, std::shared_ptr<ChatProvider> provider);

  ChatExchange complete(const ModelConfig& cfg, const std::string& prompt);

 private:
  struct Slot {
    std::shared_ptr<ChatProvider> provider;
    std::unique_ptr<Semaphore> cap;
  };

  static std::string provider_key(const ModelConfig& cfg);
  Slot& slot_for(const ModelConfig& cfg);
  std::chrono::milliseconds backoff(int retry);
  void audit(const ChatExchange& e);

  Options options_;
  Semaphore global_;
  std::mutex mu_;
  std::map<std::string, Slot> slots_;
  std::mt19937_64 rng_;
  std::mutex audit_mu_;
};

}  // namespace mpco
