#include <doctest.h>

#include <httplib.h>

#include <set>
#include <thread>

#include "emostim/gateway.hpp"
#include "emostim/rng.hpp"
#include "support.hpp"

using namespace emostim;
using namespace std::chrono_literals;
using testing::ScriptedTransport;

namespace {

CompletionRequest simple_request() {
  CompletionRequest r;
  r.model_id = "gpt-4";
  r.messages.push_back({Role::user, "hi", std::nullopt});
  return r;
}

struct Harness {
  VirtualClock clock;
  ScriptedTransport* transport = nullptr;
  std::unique_ptr<ModelGateway> gateway;

  explicit Harness(std::vector<ScriptedTransport::Step> steps, GatewayConfig cfg = {}) {
    auto t = std::make_unique<ScriptedTransport>(std::move(steps));
    transport = t.get();
    cfg.api_key = "sk-test";
    gateway = std::make_unique<ModelGateway>(cfg, std::move(t), clock);
  }
};

}  // namespace

TEST_CASE("request validation") {
  auto r = simple_request();
  CHECK_NOTHROW(r.validate());
  r.temperature = -0.1;
  CHECK(testing::error_kind_of([&] { r.validate(); }) == ErrorKind::invalid_argument);
  r = simple_request();
  r.messages[0].role = Role::system;
  CHECK(testing::error_kind_of([&] { r.validate(); }) == ErrorKind::invalid_argument);
  r = simple_request();
  r.model_id.clear();
  CHECK(testing::error_kind_of([&] { r.validate(); }) == ErrorKind::invalid_argument);
  CHECK(simple_request().temperature == 0.7);
}

TEST_CASE("wire format") {
  auto r = simple_request();
  r.seed = 7;
  r.messages.insert(r.messages.begin(), {Role::system, "be brief", std::nullopt});
  const auto j = encode_chat_request(r);
  CHECK(j["model"] == "gpt-4");
  CHECK(j["temperature"] == 0.7);
  CHECK(j["seed"] == 7);
  CHECK(j["messages"][0]["role"] == "system");
  CHECK(j["messages"][1]["content"] == "hi");

  const auto resp = decode_chat_response(testing::ok_body("hello"));
  CHECK(resp.text == "hello");
  REQUIRE(resp.token_usage.has_value());
  CHECK(resp.token_usage->total == 5);
  CHECK(testing::error_kind_of([] { decode_chat_response("{}"); }) == ErrorKind::malformed_payload);
  CHECK(testing::error_kind_of([] { decode_chat_response("<html>"); }) == ErrorKind::malformed_payload);
}

TEST_CASE("base64") {
  CHECK(base64_encode("") == "");
  CHECK(base64_encode("f") == "Zg==");
  CHECK(base64_encode("fo") == "Zm8=");
  CHECK(base64_encode("foo") == "Zm9v");
  CHECK(base64_encode("foobar") == "Zm9vYmFy");
}

TEST_CASE("successful completion carries metadata") {
  Harness h({ScriptedTransport::reply(200, testing::ok_body("fine"))});
  const auto r = h.gateway->complete(simple_request());
  CHECK(r.text == "fine");
  CHECK(r.attempts == 1);
  CHECK(r.http_status == 200);
  CHECK(r.provider == "openai");
  const auto reqs = h.transport->requests();
  REQUIRE(reqs.size() == 1);
  CHECK(reqs[0].path == "/chat/completions");
  CHECK(reqs[0].headers.at("Authorization") == "Bearer sk-test");
  CHECK(reqs[0].headers.at("Idempotency-Key") == r.idempotency_key);
}

TEST_CASE("retries with deterministic backoff and one idempotency key") {
  Harness h({ScriptedTransport::reply(503, ""), ScriptedTransport::fail(ErrorKind::timeout),
             ScriptedTransport::reply(429, ""), ScriptedTransport::reply(200, testing::ok_body("ok"))});
  const auto r = h.gateway->complete(simple_request());
  CHECK(r.attempts == 4);
  CHECK(h.clock.slept() == 500ms + 1000ms + 2000ms);
  std::set<std::string> keys;
  for (const auto& req : h.transport->requests()) keys.insert(req.headers.at("Idempotency-Key"));
  CHECK(keys.size() == 1);
}

TEST_CASE("exhausted retries report the last failure") {
  SUBCASE("rate limited") {
    Harness h({ScriptedTransport::reply(429, "")});
    CHECK(testing::error_kind_of([&] { h.gateway->complete(simple_request()); }) == ErrorKind::rate_limited);
    CHECK(h.transport->requests().size() == 4);
  }
  SUBCASE("timeout") {
    Harness h({ScriptedTransport::fail(ErrorKind::timeout)});
    CHECK(testing::error_kind_of([&] { h.gateway->complete(simple_request()); }) == ErrorKind::timeout);
  }
  SUBCASE("server error") {
    GatewayConfig cfg;
    cfg.retry.retry_max = 0;
    Harness h({ScriptedTransport::reply(500, "")}, cfg);
    CHECK(testing::error_kind_of([&] { h.gateway->complete(simple_request()); }) == ErrorKind::transport);
    CHECK(h.transport->requests().size() == 1);
  }
}

TEST_CASE("non-retryable statuses fail immediately") {
  {
    Harness h({ScriptedTransport::reply(401, "")});
    CHECK(testing::error_kind_of([&] { h.gateway->complete(simple_request()); }) == ErrorKind::auth);
    CHECK(h.transport->requests().size() == 1);
  }
  {
    Harness h({ScriptedTransport::reply(400, "bad")});
    CHECK(testing::error_kind_of([&] { h.gateway->complete(simple_request()); }) == ErrorKind::bad_request);
  }
  {
    Harness h({ScriptedTransport::reply(200, "{\"choices\": []}")});
    CHECK(testing::error_kind_of([&] { h.gateway->complete(simple_request()); }) ==
          ErrorKind::malformed_payload);
  }
}

TEST_CASE("backoff schedule") {
  RetryPolicy p;
  CHECK(p.delay_before_retry(0) == 500ms);
  CHECK(p.delay_before_retry(1) == 1000ms);
  CHECK(p.delay_before_retry(5) == 16000ms);
  CHECK(p.delay_before_retry(6) == 30000ms);
  CHECK(p.delay_before_retry(20) == 30000ms);
}

TEST_CASE("rate limiter never exceeds the window") {
  SeededRng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    VirtualClock clock;
    const int rpm = 1 + static_cast<int>(rng.below(10));
    RateLimiter limiter(rpm, clock);
    std::vector<Clock::time_point> issued;
    for (int i = 0; i < 40; ++i) {
      clock.advance(std::chrono::milliseconds(rng.below(5000)));
      issued.push_back(limiter.acquire());
    }
    for (std::size_t i = 0; i < issued.size(); ++i) {
      int in_window = 0;
      for (std::size_t k = 0; k <= i; ++k)
        if (issued[k] + 1min > issued[i]) ++in_window;
      CHECK(in_window <= rpm);
    }
  }
  VirtualClock clock;
  CHECK(testing::error_kind_of([&] { RateLimiter(0, clock); }) == ErrorKind::invalid_argument);
}

TEST_CASE("gateway honours the rate limit") {
  GatewayConfig cfg;
  cfg.rpm_limit = 2;
  Harness h({ScriptedTransport::reply(200, testing::ok_body("ok"))}, cfg);
  for (int i = 0; i < 5; ++i) h.gateway->complete(simple_request());
  CHECK(h.clock.slept() >= 2min);
}

TEST_CASE("images") {
  testing::TempDir dir;
  testing::write_file(dir / "a.png", "foo");
  auto r = simple_request();
  r.messages[0].image_ref = dir / "a.png";
  {
    Harness h({ScriptedTransport::reply(200, testing::ok_body("ok"))});
    CHECK(testing::error_kind_of([&] { h.gateway->complete(r); }) == ErrorKind::unsupported_provider);
    CHECK(h.transport->requests().empty());
  }
  GatewayConfig vision;
  vision.supports_vision = true;
  {
    Harness h({ScriptedTransport::reply(200, testing::ok_body("ok"))}, vision);
    h.gateway->complete_multimodal(r);
    const auto body = nlohmann::json::parse(h.transport->requests().at(0).body);
    const auto& parts = body["messages"][0]["content"];
    CHECK(parts[0]["text"] == "hi");
    CHECK(parts[1]["image_url"]["url"] == "data:image/png;base64,Zm9v");
    CHECK(testing::error_kind_of([&] { h.gateway->complete_multimodal(simple_request()); }) ==
          ErrorKind::invalid_argument);
  }
  {
    Harness h({ScriptedTransport::reply(200, testing::ok_body("ok"))}, vision);
    r.messages[0].image_ref = dir / "missing.png";
    CHECK(testing::error_kind_of([&] { h.gateway->complete(r); }) == ErrorKind::asset_missing);
    CHECK(h.transport->requests().empty());
  }
}

TEST_CASE("concurrent completions stay bounded") {
  GatewayConfig cfg;
  cfg.max_concurrency = 2;
  cfg.rpm_limit = 1000;
  std::atomic<int> active{0}, peak{0};
  auto step = [&](const HttpRequest&) {
    const int now = ++active;
    int p = peak.load();
    while (now > p && !peak.compare_exchange_weak(p, now)) {
    }
    std::this_thread::sleep_for(5ms);
    --active;
    return HttpReply{200, testing::ok_body("ok")};
  };
  Harness h({step}, cfg);
  std::vector<std::thread> threads;
  for (int i = 0; i < 6; ++i) threads.emplace_back([&] { h.gateway->complete(simple_request()); });
  for (auto& t : threads) t.join();
  CHECK(peak.load() <= 2);
  std::set<std::string> keys;
  for (const auto& req : h.transport->requests()) keys.insert(req.headers.at("Idempotency-Key"));
  CHECK(keys.size() == 6);
}

TEST_CASE("http transport against a loopback server") {
  httplib::Server server;
  server.Post("/v1/chat/completions", [](const httplib::Request& req, httplib::Response& res) {
    if (req.get_header_value("Authorization") != "Bearer sk-test") {
      res.status = 401;
      return;
    }
    res.set_content(testing::ok_body("pong"), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  GatewayConfig cfg;
  cfg.api_key = "sk-test";
  cfg.api_base = "http://127.0.0.1:" + std::to_string(port) + "/v1";
  SystemClock clock;
  ModelGateway gw(cfg, make_http_transport({cfg.api_base, std::chrono::seconds(5)}), clock);
  CHECK(gw.complete(simple_request()).text == "pong");

  cfg.api_key = "wrong";
  ModelGateway bad(cfg, make_http_transport({cfg.api_base, std::chrono::seconds(5)}), clock);
  CHECK(testing::error_kind_of([&] { bad.complete(simple_request()); }) == ErrorKind::auth);

  server.stop();
  th.join();
  CHECK(testing::error_kind_of([] { make_http_transport({"no-scheme", std::chrono::seconds(1)}); }) ==
        ErrorKind::invalid_argument);
}
