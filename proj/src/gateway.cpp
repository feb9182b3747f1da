#include "emostim/gateway.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "emostim/error.hpp"

namespace emostim {

std::string_view to_string(Role r) {
  switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "user";
}

bool CompletionRequest::has_image() const {
  return std::any_of(messages.begin(), messages.end(),
                     [](const ChatMessage& m) { return m.image_ref.has_value(); });
}

void CompletionRequest::validate() const {
  if (model_id.empty())
    throw Error(ErrorKind::invalid_argument, "request has no model id");
  if (!(temperature >= 0.0))
    throw Error(ErrorKind::invalid_argument, "temperature must be >= 0");
  if (max_tokens <= 0)
    throw Error(ErrorKind::invalid_argument, "max_tokens must be positive");
  if (std::none_of(messages.begin(), messages.end(),
                   [](const ChatMessage& m) { return m.role == Role::user; }))
    throw Error(ErrorKind::invalid_argument, "request needs a user message");
}

// ---- clocks ----------------------------------------------------------------

Clock::time_point SystemClock::now() { return std::chrono::steady_clock::now(); }

void SystemClock::sleep_for(std::chrono::milliseconds d) {
  if (d.count() > 0) std::this_thread::sleep_for(d);
}

Clock::time_point VirtualClock::now() {
  std::lock_guard lock(mu_);
  return now_;
}

void VirtualClock::sleep_for(std::chrono::milliseconds d) {
  std::lock_guard lock(mu_);
  if (d.count() > 0) {
    now_ += d;
    slept_ += d;
  }
}

std::chrono::milliseconds VirtualClock::slept() const {
  std::lock_guard lock(mu_);
  return slept_;
}

// ---- rate limiting and retry ----------------------------------------------

RateLimiter::RateLimiter(int requests_per_minute, Clock& clock)
    : limit_(requests_per_minute), clock_(clock) {
  if (limit_ <= 0)
    throw Error(ErrorKind::invalid_argument, "rpm_limit must be positive");
}

Clock::time_point RateLimiter::acquire() {
  using namespace std::chrono;
  constexpr auto window = minutes(1);
  std::unique_lock lock(mu_);
  for (;;) {
    const auto now = clock_.now();
    while (!issued_.empty() && issued_.front() + window <= now) issued_.pop_front();
    if (static_cast<int>(issued_.size()) < limit_) {
      issued_.push_back(now);
      return now;
    }
    const auto wait = duration_cast<milliseconds>(issued_.front() + window - now);
    // Sleep outside the lock so other callers can observe the window.
    lock.unlock();
    clock_.sleep_for(std::max(wait, milliseconds(1)));
    lock.lock();
  }
}

std::chrono::milliseconds RetryPolicy::delay_before_retry(int retry_index) const {
  double ms = static_cast<double>(initial_backoff.count());
  for (int i = 0; i < retry_index; ++i) ms *= backoff_factor;
  ms = std::min(ms, static_cast<double>(max_backoff.count()));
  return std::chrono::milliseconds(static_cast<std::int64_t>(ms));
}

void apply_environment(GatewayConfig& config) {
  if (const char* key = std::getenv("EMOSTIM_API_KEY"); key && *key)
    config.api_key = key;
  if (const char* base = std::getenv("EMOSTIM_API_BASE"); base && *base)
    config.api_base = base;
}

// ---- wire format -----------------------------------------------------------

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string image_data_url(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error(ErrorKind::asset_missing, "cannot read image asset " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::string mime = "image/png";
  if (ext == ".jpg" || ext == ".jpeg") mime = "image/jpeg";
  else if (ext == ".webp") mime = "image/webp";
  else if (ext == ".gif") mime = "image/gif";
  return "data:" + mime + ";base64," + base64_encode(bytes);
}

nlohmann::json encode_chat_request(
    const CompletionRequest& request,
    const std::map<std::filesystem::path, std::string>& image_data_urls) {
  nlohmann::json body;
  body["model"] = request.model_id;
  body["temperature"] = request.temperature;
  body["max_tokens"] = request.max_tokens;
  if (request.seed) body["seed"] = *request.seed;
  auto& messages = body["messages"] = nlohmann::json::array();
  for (const auto& m : request.messages) {
    nlohmann::json msg;
    msg["role"] = to_string(m.role);
    if (!m.image_ref) {
      msg["content"] = m.text;
    } else {
      auto it = image_data_urls.find(*m.image_ref);
      if (it == image_data_urls.end())
        throw Error(ErrorKind::asset_missing,
                    "image not loaded: " + m.image_ref->string());
      msg["content"] = nlohmann::json::array(
          {{{"type", "text"}, {"text", m.text}},
           {{"type", "image_url"}, {"image_url", {{"url", it->second}}}}});
    }
    messages.push_back(std::move(msg));
  }
  return body;
}

ModelResponse decode_chat_response(const std::string& body) {
  ModelResponse r;
  try {
    const auto j = nlohmann::json::parse(body);
    const auto& content = j.at("choices").at(0).at("message").at("content");
    if (content.is_string()) {
      r.text = content.get<std::string>();
    } else if (content.is_array()) {
      for (const auto& part : content) {
        if (part.value("type", "") == "text") r.text += part.at("text").get<std::string>();
      }
    } else {
      throw Error(ErrorKind::malformed_payload, "message content is neither text nor parts");
    }
    if (j.contains("usage") && j["usage"].is_object()) {
      const auto& u = j["usage"];
      r.token_usage = TokenUsage{u.value("prompt_tokens", std::int64_t{0}),
                                 u.value("completion_tokens", std::int64_t{0}),
                                 u.value("total_tokens", std::int64_t{0})};
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::malformed_payload,
                std::string("malformed provider payload: ") + e.what());
  }
  return r;
}

// ---- HTTP transport ---------------------------------------------------------

namespace {

class HttpTransport final : public Transport {
 public:
  explicit HttpTransport(const HttpTransportOptions& options) {
    const auto& base = options.api_base;
    const auto scheme_end = base.find("://");
    if (scheme_end == std::string::npos)
      throw Error(ErrorKind::invalid_argument, "api base needs a scheme: " + base);
    const auto path_start = base.find('/', scheme_end + 3);
    origin_ = base.substr(0, path_start);
    if (path_start != std::string::npos) prefix_ = base.substr(path_start);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
    timeout_ = options.timeout;
  }

  HttpReply post(const HttpRequest& request) override {
    httplib::Client client(origin_);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    client.set_write_timeout(timeout_);
    httplib::Headers headers;
    for (const auto& [k, v] : request.headers) headers.emplace(k, v);
    auto res = client.Post(prefix_ + request.path, headers, request.body,
                           "application/json");
    if (!res) {
      const auto err = res.error();
      const auto kind = err == httplib::Error::Read || err == httplib::Error::Write ||
                                err == httplib::Error::ConnectionTimeout
                            ? ErrorKind::timeout
                            : ErrorKind::transport;
      throw Error(kind, "HTTP request failed: " + httplib::to_string(err));
    }
    return HttpReply{res->status, res->body};
  }

 private:
  std::string origin_;
  std::string prefix_;
  std::chrono::seconds timeout_{60};
};

bool retryable_status(int status) {
  return status == 408 || status == 409 || status == 429 || status >= 500;
}

}  // namespace

std::unique_ptr<Transport> make_http_transport(const HttpTransportOptions& options) {
  return std::make_unique<HttpTransport>(options);
}

// ---- gateway ---------------------------------------------------------------

ModelGateway::ModelGateway(GatewayConfig config, std::unique_ptr<Transport> transport,
                           Clock& clock)
    : config_(std::move(config)),
      transport_(std::move(transport)),
      clock_(clock),
      limiter_(config_.rpm_limit, clock),
      in_flight_(std::clamp(config_.max_concurrency, 1, 1024)),
      key_salt_(std::random_device{}()) {
  if (!transport_) throw Error(ErrorKind::invalid_argument, "gateway needs a transport");
  if (config_.retry.retry_max < 0)
    throw Error(ErrorKind::invalid_argument, "retry_max must be >= 0");
}

std::string ModelGateway::next_idempotency_key() {
  std::lock_guard lock(key_mu_);
  std::ostringstream os;
  os << "emostim-" << std::hex << key_salt_ << '-' << std::dec << ++key_counter_;
  return os.str();
}

ModelResponse ModelGateway::complete(const CompletionRequest& request) {
  request.validate();

  std::map<std::filesystem::path, std::string> images;
  if (request.has_image()) {
    if (!config_.supports_vision)
      throw Error(ErrorKind::unsupported_provider,
                  "provider '" + config_.provider + "' does not accept images");
    for (const auto& m : request.messages) {
      if (m.image_ref && !images.contains(*m.image_ref))
        images.emplace(*m.image_ref, image_data_url(*m.image_ref));
    }
  }

  HttpRequest http;
  http.path = "/chat/completions";
  http.body = encode_chat_request(request, images).dump();
  http.headers["Content-Type"] = "application/json";
  if (!config_.api_key.empty()) http.headers["Authorization"] = "Bearer " + config_.api_key;
  const std::string key = next_idempotency_key();
  http.headers["Idempotency-Key"] = key;

  in_flight_.acquire();
  struct Release {
    std::counting_semaphore<1024>& s;
    ~Release() { s.release(); }
  } release{in_flight_};

  const int max_attempts = config_.retry.retry_max + 1;
  std::string last_failure;
  ErrorKind last_kind = ErrorKind::transport;
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    if (attempt > 1) clock_.sleep_for(config_.retry.delay_before_retry(attempt - 2));
    limiter_.acquire();
    const auto started = std::chrono::steady_clock::now();
    HttpReply reply;
    try {
      reply = transport_->post(http);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::timeout && e.kind() != ErrorKind::transport) throw;
      last_kind = e.kind();
      last_failure = e.what();
      continue;
    }
    const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - started);

    if (reply.status >= 200 && reply.status < 300) {
      ModelResponse r = decode_chat_response(reply.body);
      r.latency_ms = elapsed.count();
      r.provider = config_.provider;
      r.http_status = reply.status;
      r.attempts = attempt;
      r.idempotency_key = key;
      return r;
    }
    if (reply.status == 401 || reply.status == 403)
      throw Error(ErrorKind::auth, "authentication failed (HTTP " +
                                       std::to_string(reply.status) + ")");
    if (!retryable_status(reply.status))
      throw Error(ErrorKind::bad_request, "provider rejected request (HTTP " +
                                              std::to_string(reply.status) +
                                              "): " + reply.body.substr(0, 200));
    last_kind = reply.status == 429 ? ErrorKind::rate_limited : ErrorKind::transport;
    last_failure = "HTTP " + std::to_string(reply.status);
  }
  throw Error(last_kind, "giving up after " + std::to_string(max_attempts) +
                             " attempts: " + last_failure);
}

ModelResponse ModelGateway::complete_multimodal(const CompletionRequest& request) {
  if (!request.has_image())
    throw Error(ErrorKind::invalid_argument, "multimodal request carries no image");
  return complete(request);
}

}  // namespace emostim
