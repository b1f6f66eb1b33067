#include <gtest/gtest.h>
#include <httplib.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#include "mpco/llm_client.hpp"
#include "test_util.hpp"

namespace mpco {
namespace {

using namespace std::chrono_literals;
using nlohmann::json;
using testing::TempDir;

ModelConfig mock_model(const fs::path& script, const std::string& id = "mock-a") {
  ModelConfig m;
  m.model_id = id;
  m.provider = "mock";
  m.endpoint_url = script.string();
  m.max_retries = 3;
  return m;
}

struct Sleeps {
  std::vector<std::chrono::milliseconds> seen;
  std::mutex mu;
  std::function<void(std::chrono::milliseconds)> fn() {
    return [this](std::chrono::milliseconds d) {
      std::lock_guard lock(mu);
      seen.push_back(d);
    };
  }
};

TEST(Mock, FirstMatchingRuleWins) {
  TempDir dir;
  dir.write("replies/long.txt", "from file\n");
  auto script = dir.write("script.json", R"([
    {"match": "alpha", "model": "mock-b", "reply": "b-only"},
    {"match": {"substring": "alpha"}, "reply": "first"},
    {"match": "alpha beta", "reply": "never"},
    {"match": {"sha256": ")" + sha256_hex("exact prompt") + R"("}, "reply_file": "replies/long.txt"}
  ])");
  ChatClient client;
  EXPECT_EQ(client.complete(mock_model(script), "alpha beta").response_text, "first");
  EXPECT_EQ(client.complete(mock_model(script, "mock-b"), "alpha").response_text, "b-only");
  EXPECT_EQ(client.complete(mock_model(script), "exact prompt").response_text, "from file\n");
  EXPECT_THROW(client.complete(mock_model(script), "nothing matches"), ScriptGapError);
}

TEST(Mock, ScriptGapIsNotRetried) {
  auto mock = parse_mock(R"([{"match": "x", "reply": "y"}])");
  Sleeps sleeps;
  ChatClient::Options opt;
  opt.sleep = sleeps.fn();
  ChatClient client(opt);
  ModelConfig m = mock_model("inline");
  client.set_provider(m, mock);
  EXPECT_THROW(client.complete(m, "zzz"), ScriptGapError);
  EXPECT_EQ(mock->calls(), 1u);
  EXPECT_TRUE(sleeps.seen.empty());
}

TEST(Mock, MalformedScripts) {
  EXPECT_THROW(parse_mock("{}"), ParseError);
  EXPECT_THROW(parse_mock(R"([{"reply": "x"}])"), ParseError);
  EXPECT_THROW(parse_mock(R"([{"match": "x"}])"), ParseError);
  EXPECT_THROW(parse_mock("not json"), ParseError);
}

TEST(Retry, TransientFailuresAreRetriedWithBackoff) {
  auto mock = parse_mock(R"([{"match": "go", "reply": "done", "failures_before_success": 2}])");
  Sleeps sleeps;
  ChatClient::Options opt;
  opt.sleep = sleeps.fn();
  opt.seed = 7;
  ChatClient client(opt);
  ModelConfig m = mock_model("inline");
  client.set_provider(m, mock);
  ChatExchange e = client.complete(m, "go");
  EXPECT_EQ(e.response_text, "done");
  EXPECT_EQ(e.attempt_count, 3);
  ASSERT_EQ(sleeps.seen.size(), 2u);
  // Base 1 s doubling, jitter within +-20%.
  EXPECT_GE(sleeps.seen[0].count(), 800);
  EXPECT_LE(sleeps.seen[0].count(), 1200);
  EXPECT_GE(sleeps.seen[1].count(), 1600);
  EXPECT_LE(sleeps.seen[1].count(), 2400);
}

TEST(Retry, ExhaustedRetriesRaiseTransportError) {
  auto mock = parse_mock(R"([{"match": "go", "reply": "x", "failures_before_success": -1}])");
  Sleeps sleeps;
  ChatClient::Options opt;
  opt.sleep = sleeps.fn();
  ChatClient client(opt);
  ModelConfig m = mock_model("inline");
  m.max_retries = 4;
  client.set_provider(m, mock);
  EXPECT_THROW(client.complete(m, "go"), TransportError);
  EXPECT_EQ(mock->calls(), 5u);
  EXPECT_EQ(sleeps.seen.size(), 4u);
}

TEST(Retry, NominalDelaysDouble) {
  RetryPolicy p;
  EXPECT_EQ(p.nominal_delay(1), 1000ms);
  EXPECT_EQ(p.nominal_delay(2), 2000ms);
  EXPECT_EQ(p.nominal_delay(4), 8000ms);
}

TEST(Audit, EveryExchangeIsLoggedWithRequiredKeys) {
  TempDir dir;
  auto mock = parse_mock(R"([{"match": "", "reply": "ok"}])");
  ChatClient::Options opt;
  opt.audit_log = dir.path() / "logs/exchanges.jsonl";
  ChatClient client(opt);
  ModelConfig m = mock_model("inline");
  client.set_provider(m, mock);
  client.complete(m, "one");
  client.complete(m, "two");
  const std::string text = read_file(*opt.audit_log);
  auto lines = split_lines(text);
  ASSERT_EQ(lines.size(), 2u);
  for (std::string_view l : lines) {
    json j = json::parse(l);
    for (const char* key : {"request_text", "response_text", "latency", "model_id", "attempt_count"}) {
      EXPECT_TRUE(j.contains(key)) << key;
    }
  }
  EXPECT_EQ(json::parse(lines[1])["request_text"], "two");
}

TEST(Client, RejectsEmptyPromptAndBadConfig) {
  ChatClient client;
  ModelConfig m = mock_model("inline");
  client.set_provider(m, parse_mock(R"([{"match": "", "reply": "ok"}])"));
  EXPECT_THROW(client.complete(m, ""), ValidationError);
  m.max_retries = -1;
  EXPECT_THROW(client.complete(m, "x"), ValidationError);
}

class CountingProvider : public ChatProvider {
 public:
  std::string send(const ModelConfig&, const std::string&) override {
    int now = ++active_;
    int prev = peak_.load();
    while (now > prev && !peak_.compare_exchange_weak(prev, now)) {
    }
    std::this_thread::sleep_for(20ms);
    --active_;
    return "ok";
  }
  std::atomic<int> active_{0};
  std::atomic<int> peak_{0};
};

TEST(Client, PerProviderCapBoundsConcurrency) {
  ChatClient::Options opt;
  opt.global_cap = 8;
  opt.per_provider_cap = 2;
  ChatClient client(opt);
  ModelConfig m = mock_model("inline");
  auto provider = std::make_shared<CountingProvider>();
  client.set_provider(m, provider);
  std::vector<std::thread> threads;
  for (int i = 0; i < 8; ++i) threads.emplace_back([&] { client.complete(m, "x"); });
  for (auto& t : threads) t.join();
  EXPECT_LE(provider->peak_.load(), 2);
  EXPECT_GE(provider->peak_.load(), 1);
}

TEST(Client, GlobalCapBoundsConcurrencyAcrossProviders) {
  ChatClient::Options opt;
  opt.global_cap = 1;
  opt.per_provider_cap = 4;
  ChatClient client(opt);
  ModelConfig a = mock_model("a");
  ModelConfig b = mock_model("b");
  auto shared = std::make_shared<CountingProvider>();
  client.set_provider(a, shared);
  client.set_provider(b, shared);
  std::vector<std::thread> threads;
  for (int i = 0; i < 6; ++i) {
    threads.emplace_back([&, i] { client.complete(i % 2 ? a : b, "x"); });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(shared->peak_.load(), 1);
}

// Local chat endpoint scripted per test.
class HttpFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      ++hits_;
      last_auth_ = req.get_header_value("Authorization");
      last_body_ = json::parse(req.body);
      int status = next_status();
      res.status = status;
      if (status == 200) res.set_content(reply_body_, "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  void TearDown() override {
    server_.stop();
    thread_.join();
  }

  int next_status() {
    std::lock_guard lock(mu_);
    if (statuses_.empty()) return 200;
    int s = statuses_.front();
    statuses_.erase(statuses_.begin());
    return s;
  }

  ModelConfig model() const {
    ModelConfig m;
    m.model_id = "remote-model";
    m.endpoint_url = "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions";
    m.request_timeout = 5000ms;
    m.max_retries = 3;
    return m;
  }

  ChatClient client() {
    ChatClient::Options opt;
    opt.sleep = sleeps_.fn();
    return ChatClient(opt);
  }

  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::mutex mu_;
  std::vector<int> statuses_;
  std::atomic<int> hits_{0};
  std::string last_auth_;
  json last_body_;
  std::string reply_body_ = R"({"choices":[{"message":{"role":"assistant","content":"hello"}}]})";
  Sleeps sleeps_;
};

TEST_F(HttpFixture, ParsesReplyAndSendsBody) {
  ModelConfig m = model();
  m.temperature = 0.0;
  m.extra_body = {{"max_tokens", 64}};
  ChatExchange e = client().complete(m, "prompt text");
  EXPECT_EQ(e.response_text, "hello");
  EXPECT_EQ(e.attempt_count, 1);
  EXPECT_EQ(last_body_["model"], "remote-model");
  EXPECT_EQ(last_body_["messages"][0]["content"], "prompt text");
  EXPECT_EQ(last_body_["temperature"], 0.0);
  EXPECT_EQ(last_body_["max_tokens"], 64);
  EXPECT_TRUE(last_auth_.empty());
}

TEST_F(HttpFixture, ServerErrorsAndRateLimitsAreRetried) {
  statuses_ = {500, 429, 503};
  ChatExchange e = client().complete(model(), "x");
  EXPECT_EQ(e.attempt_count, 4);
  EXPECT_EQ(hits_.load(), 4);
  EXPECT_EQ(sleeps_.seen.size(), 3u);
}

TEST_F(HttpFixture, ClientErrorsAreNotRetried) {
  statuses_ = {400};
  try {
    client().complete(model(), "x");
    FAIL();
  } catch (const RequestError& e) {
    EXPECT_EQ(e.status(), 400);
  }
  EXPECT_EQ(hits_.load(), 1);
}

TEST_F(HttpFixture, MissingReplyTextIsRequestError) {
  reply_body_ = R"({"choices":[]})";
  EXPECT_THROW(client().complete(model(), "x"), RequestError);
  reply_body_ = "not json";
  EXPECT_THROW(client().complete(model(), "x"), RequestError);
}

TEST_F(HttpFixture, CustomPointerAndCredentialHeader) {
  ::setenv("MPCO_TEST_KEY", "s3cret", 1);
  reply_body_ = R"({"output":{"text":"custom"}})";
  ModelConfig m = model();
  m.auth_env_var = "MPCO_TEST_KEY";
  m.response_pointer = "/output/text";
  EXPECT_EQ(client().complete(m, "x").response_text, "custom");
  EXPECT_EQ(last_auth_, "Bearer s3cret");

  m.headers = {{"Authorization", "Token {credential}"}};
  client().complete(m, "x");
  EXPECT_EQ(last_auth_, "Token s3cret");

  m.auth_env_var = "MPCO_TEST_KEY_UNSET";
  ::unsetenv("MPCO_TEST_KEY_UNSET");
  EXPECT_THROW(client().complete(m, "x"), RequestError);
}

TEST(Http, UnreachableEndpointIsTransportError) {
  ModelConfig m;
  m.model_id = "nowhere";
  m.endpoint_url = "http://127.0.0.1:1/v1/chat/completions";
  m.request_timeout = 500ms;
  m.max_retries = 2;
  Sleeps sleeps;
  ChatClient::Options opt;
  opt.sleep = sleeps.fn();
  ChatClient client(opt);
  EXPECT_THROW(client.complete(m, "x"), TransportError);
  EXPECT_EQ(sleeps.seen.size(), 2u);
}

TEST(ModelConfigJson, RoundTrip) {
  ModelConfig m;
  m.model_id = "x";
  m.endpoint_url = "https://api.example.com/v1/chat/completions";
  m.auth_env_var = "KEY";
  m.temperature = 0.2;
  m.headers = {{"X-Api-Key", "{credential}"}};
  ModelConfig back = json(m).get<ModelConfig>();
  EXPECT_EQ(json(back), json(m));
}

}  // namespace
}  // namespace mpco
