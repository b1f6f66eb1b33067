#include "mpco/llm_client.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>

namespace mpco {

using nlohmann::json;

namespace {

std::string expand_credential(std::string value, const std::string& credential) {
  const std::string key = "{credential}";
  for (std::size_t pos = value.find(key); pos != std::string::npos;
       pos = value.find(key, pos + credential.size())) {
    value.replace(pos, key.size(), credential);
  }
  return value;
}

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Url split_url(const std::string& url) {
  std::size_t scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw RequestError("endpoint '" + url + "' has no scheme");
  std::size_t path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

void ModelConfig::check() const {
  if (trim(model_id).empty()) throw ValidationError("model_id must not be empty");
  if (provider != "http" && provider != "mock") {
    throw ValidationError("model " + model_id + ": provider must be http or mock");
  }
  if (endpoint_url.empty()) throw ValidationError("model " + model_id + ": endpoint_url is empty");
  if (request_timeout.count() <= 0) {
    throw ValidationError("model " + model_id + ": request_timeout must be positive");
  }
  if (max_retries < 0) throw ValidationError("model " + model_id + ": max_retries must be >= 0");
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"model_id", c.model_id},
           {"provider", c.provider},
           {"endpoint_url", c.endpoint_url},
           {"auth_env_var", c.auth_env_var},
           {"request_timeout_ms", c.request_timeout.count()},
           {"max_retries", c.max_retries},
           {"response_pointer", c.response_pointer},
           {"headers", c.headers},
           {"extra_body", c.extra_body}};
  if (c.temperature) j["temperature"] = *c.temperature;
  if (c.system_message) j["system_message"] = *c.system_message;
}

void from_json(const json& j, ModelConfig& c) {
  c = ModelConfig{};
  c.model_id = j.at("model_id").get<std::string>();
  c.provider = j.value("provider", c.provider);
  c.endpoint_url = j.value("endpoint_url", std::string());
  c.auth_env_var = j.value("auth_env_var", std::string());
  c.request_timeout = std::chrono::milliseconds(
      j.value("request_timeout_ms", static_cast<std::int64_t>(c.request_timeout.count())));
  c.max_retries = j.value("max_retries", c.max_retries);
  c.response_pointer = j.value("response_pointer", c.response_pointer);
  if (j.contains("temperature") && !j["temperature"].is_null()) {
    c.temperature = j["temperature"].get<double>();
  }
  if (j.contains("system_message") && !j["system_message"].is_null()) {
    c.system_message = j["system_message"].get<std::string>();
  }
  if (j.contains("headers")) c.headers = j["headers"].get<std::map<std::string, std::string>>();
  if (j.contains("extra_body")) c.extra_body = j["extra_body"];
}

void to_json(json& j, const ChatExchange& e) {
  j = json{{"request_text", e.request_text},
           {"response_text", e.response_text},
           {"latency", e.latency},
           {"model_id", e.model_id},
           {"attempt_count", e.attempt_count}};
}

void from_json(const json& j, ChatExchange& e) {
  e.request_text = j.at("request_text").get<std::string>();
  e.response_text = j.at("response_text").get<std::string>();
  e.latency = j.at("latency").get<double>();
  e.model_id = j.at("model_id").get<std::string>();
  e.attempt_count = j.at("attempt_count").get<int>();
}

// ---------------------------------------------------------------------------
// HTTP

json HttpProvider::request_body(const ModelConfig& cfg, const std::string& prompt) {
  json messages = json::array();
  if (cfg.system_message) messages.push_back({{"role", "system"}, {"content", *cfg.system_message}});
  messages.push_back({{"role", "user"}, {"content", prompt}});
  json body = {{"model", cfg.model_id}, {"messages", messages}};
  if (cfg.temperature) body["temperature"] = *cfg.temperature;
  if (cfg.extra_body.is_object()) body.merge_patch(cfg.extra_body);
  return body;
}

std::string HttpProvider::send(const ModelConfig& cfg, const std::string& prompt) {
  std::string credential;
  if (!cfg.auth_env_var.empty()) {
    const char* value = std::getenv(cfg.auth_env_var.c_str());
    if (value == nullptr) {
      throw RequestError("credential variable " + cfg.auth_env_var + " is not set");
    }
    credential = value;
  }

  Url url = split_url(cfg.endpoint_url);
  httplib::Client client(url.origin);
  auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg.request_timeout);
  auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg.request_timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());

  httplib::Headers headers;
  if (cfg.headers.empty()) {
    if (!credential.empty()) headers.emplace("Authorization", "Bearer " + credential);
  } else {
    for (const auto& [name, value] : cfg.headers) {
      headers.emplace(name, expand_credential(value, credential));
    }
  }

  auto res = client.Post(url.path, headers, request_body(cfg, prompt).dump(), "application/json");
  if (!res) {
    throw TransientError(fmt::format("{}: {}", cfg.endpoint_url, httplib::to_string(res.error())));
  }
  const int status = res->status;
  if (status == 408 || status == 429 || status >= 500) {
    throw TransientError(fmt::format("{}: HTTP {}", cfg.endpoint_url, status));
  }
  if (status < 200 || status >= 300) {
    throw RequestError(
        fmt::format("{}: HTTP {}: {}", cfg.endpoint_url, status, res->body.substr(0, 500)), status);
  }
  json reply;
  try {
    reply = json::parse(res->body);
  } catch (const json::parse_error&) {
    throw RequestError(cfg.endpoint_url + ": response is not JSON", status);
  }
  json::json_pointer ptr(cfg.response_pointer);
  if (!reply.contains(ptr) || !reply[ptr].is_string()) {
    throw RequestError(cfg.endpoint_url + ": response has no text at " + cfg.response_pointer,
                       status);
  }
  return reply[ptr].get<std::string>();
}

// ---------------------------------------------------------------------------
// Mock

MockProvider::MockProvider(std::vector<MockRule> rules) : rules_(std::move(rules)) {
  for (const MockRule& r : rules_) remaining_failures_.push_back(r.failures_before_success);
}

std::string MockProvider::send(const ModelConfig& cfg, const std::string& prompt) {
  std::lock_guard lock(mu_);
  ++calls_;
  std::optional<std::string> digest;
  for (std::size_t i = 0; i < rules_.size(); ++i) {
    const MockRule& rule = rules_[i];
    if (rule.model && *rule.model != cfg.model_id) continue;
    bool hit = false;
    if (rule.match == MockRule::Match::substring) {
      hit = prompt.find(rule.pattern) != std::string::npos;
    } else {
      if (!digest) digest = sha256_hex(prompt);
      hit = *digest == rule.pattern;
    }
    if (!hit) continue;
    int& remaining = remaining_failures_[i];
    if (remaining != 0) {
      if (remaining > 0) --remaining;
      throw TransientError(fmt::format("scripted failure (rule {})", i));
    }
    return rule.reply;
  }
  throw ScriptGapError(fmt::format("no mock rule matches request to {} (sha256 {})", cfg.model_id,
                                   sha256_hex(prompt)));
}

std::size_t MockProvider::calls() const {
  std::lock_guard lock(mu_);
  return calls_;
}

std::shared_ptr<MockProvider> parse_mock(std::string_view script_json, const fs::path& base_dir) {
  json doc;
  try {
    doc = json::parse(script_json);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("mock script: ") + e.what());
  }
  if (!doc.is_array()) throw ParseError("mock script must be a JSON list");
  std::vector<MockRule> rules;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const json& r = doc[i];
    const std::string where = fmt::format("mock rule {}", i);
    if (!r.is_object() || !r.contains("match")) throw ParseError(where + ": missing match");
    MockRule rule;
    const json& m = r["match"];
    if (m.is_string()) {
      rule.pattern = m.get<std::string>();
    } else if (m.is_object() && m.contains("substring")) {
      rule.pattern = m["substring"].get<std::string>();
    } else if (m.is_object() && m.contains("sha256")) {
      rule.match = MockRule::Match::sha256;
      rule.pattern = m["sha256"].get<std::string>();
    } else {
      throw ParseError(where + ": match must be a string, {substring} or {sha256}");
    }
    if (r.contains("reply")) {
      rule.reply = r["reply"].get<std::string>();
    } else if (r.contains("reply_file")) {
      rule.reply = read_file(base_dir / r["reply_file"].get<std::string>());
    } else {
      throw ParseError(where + ": needs reply or reply_file");
    }
    if (r.contains("model")) rule.model = r["model"].get<std::string>();
    rule.failures_before_success = r.value("failures_before_success", 0);
    rules.push_back(std::move(rule));
  }
  return std::make_shared<MockProvider>(std::move(rules));
}

std::shared_ptr<MockProvider> load_mock(const fs::path& script_path) {
  return parse_mock(read_file(script_path), script_path.parent_path());
}

// ---------------------------------------------------------------------------
// Client

std::chrono::milliseconds RetryPolicy::nominal_delay(int retry) const {
  double ms = static_cast<double>(base.count()) * std::pow(factor, retry - 1);
  return std::chrono::milliseconds(static_cast<std::int64_t>(ms));
}

void Semaphore::acquire() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [this] { return count_ > 0; });
  --count_;
}

void Semaphore::release() {
  {
    std::lock_guard lock(mu_);
    ++count_;
  }
  cv_.notify_one();
}

ChatClient::ChatClient() : ChatClient(Options{}) {}

ChatClient::ChatClient(Options options)
    : options_(std::move(options)),
      global_(std::max<std::size_t>(1, options_.global_cap)),
      rng_(options_.seed) {
  if (!options_.sleep) {
    options_.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  }
}

std::string ChatClient::provider_key(const ModelConfig& cfg) {
  if (cfg.provider == "mock") return "mock:" + cfg.endpoint_url;
  return "http:" + split_url(cfg.endpoint_url).origin;
}

ChatClient::Slot& ChatClient::slot_for(const ModelConfig& cfg) {
  std::lock_guard lock(mu_);
  const std::string key = provider_key(cfg);
  auto it = slots_.find(key);
  if (it != slots_.end()) return it->second;
  Slot slot;
  if (cfg.provider == "mock") {
    slot.provider = load_mock(cfg.endpoint_url);
  } else {
    slot.provider = std::make_shared<HttpProvider>();
  }
  slot.cap = std::make_unique<Semaphore>(std::max<std::size_t>(1, options_.per_provider_cap));
  return slots_.emplace(key, std::move(slot)).first->second;
}

void ChatClient::set_provider(const ModelConfig& cfg, std::shared_ptr<ChatProvider> provider) {
  std::lock_guard lock(mu_);
  Slot& slot = slots_[provider_key(cfg)];
  slot.provider = std::move(provider);
  if (!slot.cap) {
    slot.cap = std::make_unique<Semaphore>(std::max<std::size_t>(1, options_.per_provider_cap));
  }
}

std::chrono::milliseconds ChatClient::backoff(int retry) {
  double nominal = static_cast<double>(options_.retry.nominal_delay(retry).count());
  double scale = 1.0;
  if (options_.retry.jitter > 0) {
    std::lock_guard lock(mu_);
    std::uniform_real_distribution<double> dist(1.0 - options_.retry.jitter,
                                                1.0 + options_.retry.jitter);
    scale = dist(rng_);
  }
  return std::chrono::milliseconds(static_cast<std::int64_t>(nominal * scale));
}

void ChatClient::audit(const ChatExchange& e) {
  if (!options_.audit_log) return;
  std::lock_guard lock(audit_mu_);
  if (options_.audit_log->has_parent_path()) {
    fs::create_directories(options_.audit_log->parent_path());
  }
  std::ofstream out(*options_.audit_log, std::ios::app | std::ios::binary);
  if (!out) throw IoError("cannot append to " + options_.audit_log->string());
  out << json(e).dump() << '\n';
}

ChatExchange ChatClient::complete(const ModelConfig& cfg, const std::string& prompt) {
  cfg.check();
  if (prompt.empty()) throw ValidationError("prompt must not be empty");
  Slot& slot = slot_for(cfg);

  const auto start = std::chrono::steady_clock::now();
  std::string last_error;
  for (int attempt = 1; attempt <= cfg.max_retries + 1; ++attempt) {
    try {
      global_.acquire();
      slot.cap->acquire();
      struct Release {
        Semaphore& a;
        Semaphore& b;
        ~Release() {
          b.release();
          a.release();
        }
      } release{global_, *slot.cap};
      std::string reply = slot.provider->send(cfg, prompt);
      ChatExchange e;
      e.request_text = prompt;
      e.response_text = std::move(reply);
      e.latency = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      e.model_id = cfg.model_id;
      e.attempt_count = attempt;
      audit(e);
      return e;
    } catch (const TransientError& err) {
      last_error = err.what();
    }
    if (attempt <= cfg.max_retries) options_.sleep(backoff(attempt));
  }
  throw TransportError(fmt::format("{}: giving up after {} attempts: {}", cfg.model_id,
                                   cfg.max_retries + 1, last_error));
}

}  // namespace mpco
