#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <vector>

#include <json.hpp>

namespace emostim {

enum class Role { system, user, assistant };
std::string_view to_string(Role r);

struct ChatMessage {
  Role role = Role::user;
  std::string text;
  std::optional<std::filesystem::path> image_ref;
};

inline constexpr double kDefaultTemperature = 0.7;

struct CompletionRequest {
  std::string model_id;
  std::vector<ChatMessage> messages;
  double temperature = kDefaultTemperature;
  int max_tokens = 512;
  std::optional<std::int64_t> seed;

  bool has_image() const;
  // Throws Error(invalid_argument): no user message, negative temperature,
  // empty model id, non-positive max_tokens.
  void validate() const;
};

struct TokenUsage {
  std::int64_t prompt = 0;
  std::int64_t completion = 0;
  std::int64_t total = 0;
};

struct ModelResponse {
  std::string text;
  std::int64_t latency_ms = 0;
  std::optional<TokenUsage> token_usage;
  std::string provider;
  int http_status = 0;
  int attempts = 0;
  std::string idempotency_key;
};

// Anything that answers a chat completion. Transforms and the runner depend
// on this, so tests can substitute a scripted model directly.
class CompletionClient {
 public:
  virtual ~CompletionClient() = default;
  virtual ModelResponse complete(const CompletionRequest& request) = 0;
};

// ---- transport layer -------------------------------------------------------

struct HttpRequest {
  std::string path;
  std::string body;
  std::map<std::string, std::string> headers;
};

struct HttpReply {
  int status = 0;
  std::string body;
};

// A transport throws Error(timeout) or Error(transport) when no HTTP reply
// was obtained; any reply (including 4xx/5xx) is returned.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpReply post(const HttpRequest& request) = 0;
};

struct HttpTransportOptions {
  std::string api_base;  // e.g. https://api.openai.com/v1
  std::chrono::seconds timeout{60};
};

// cpp-httplib backed transport. Throws Error(invalid_argument) for a base URL
// it cannot parse.
std::unique_ptr<Transport> make_http_transport(const HttpTransportOptions& options);

// ---- time ------------------------------------------------------------------

class Clock {
 public:
  using time_point = std::chrono::steady_clock::time_point;
  virtual ~Clock() = default;
  virtual time_point now() = 0;
  virtual void sleep_for(std::chrono::milliseconds d) = 0;
};

class SystemClock final : public Clock {
 public:
  time_point now() override;
  void sleep_for(std::chrono::milliseconds d) override;
};

// Time advances only through sleep_for / advance.
class VirtualClock final : public Clock {
 public:
  time_point now() override;
  void sleep_for(std::chrono::milliseconds d) override;
  void advance(std::chrono::milliseconds d) { sleep_for(d); }
  std::chrono::milliseconds slept() const;

 private:
  mutable std::mutex mu_;
  time_point now_{};
  std::chrono::milliseconds slept_{0};
};

// Sliding one-minute window. acquire() blocks (through the clock) until a
// slot is free and records the issue time.
class RateLimiter {
 public:
  RateLimiter(int requests_per_minute, Clock& clock);

  Clock::time_point acquire();
  int limit() const { return limit_; }

 private:
  int limit_;
  Clock& clock_;
  std::mutex mu_;
  std::deque<Clock::time_point> issued_;
};

struct RetryPolicy {
  int retry_max = 3;  // retries after the first attempt
  std::chrono::milliseconds initial_backoff{500};
  double backoff_factor = 2.0;
  std::chrono::milliseconds max_backoff{30'000};

  std::chrono::milliseconds delay_before_retry(int retry_index) const;
};

struct GatewayConfig {
  std::string provider = "openai";
  std::string api_base = "https://api.openai.com/v1";
  std::string api_key;
  int rpm_limit = 60;
  int timeout_s = 60;
  int max_concurrency = 4;
  bool supports_vision = false;
  RetryPolicy retry;
};

// Applies EMOSTIM_API_KEY / EMOSTIM_API_BASE over the given config.
void apply_environment(GatewayConfig& config);

// Wire format of the open chat-completions dialect.
nlohmann::json encode_chat_request(const CompletionRequest& request,
                                   const std::map<std::filesystem::path, std::string>&
                                       image_data_urls = {});
// Throws Error(malformed_payload).
ModelResponse decode_chat_response(const std::string& body);

std::string base64_encode(std::string_view bytes);
// data:<mime>;base64,... for a readable image file; throws Error(asset_missing).
std::string image_data_url(const std::filesystem::path& path);

class ModelGateway final : public CompletionClient {
 public:
  ModelGateway(GatewayConfig config, std::unique_ptr<Transport> transport,
               Clock& clock);

  ModelResponse complete(const CompletionRequest& request) override;
  // Requires at least one image_ref; images are read before any network call.
  ModelResponse complete_multimodal(const CompletionRequest& request);

  const GatewayConfig& config() const { return config_; }

 private:
  std::string next_idempotency_key();

  GatewayConfig config_;
  std::unique_ptr<Transport> transport_;
  Clock& clock_;
  RateLimiter limiter_;
  std::counting_semaphore<1024> in_flight_;
  std::mutex key_mu_;
  std::uint64_t key_counter_ = 0;
  std::uint64_t key_salt_;
};

}  // namespace emostim
