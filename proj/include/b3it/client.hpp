#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

namespace b3it::client {

/// Recorded observation for an empty completion.
inline constexpr std::string_view kEmptyToken = "\xE2\x88\x85";  // U+2205

struct EndpointConfig {
  std::string name;
  std::string base_url;  // e.g. https://openrouter.ai/api/v1
  std::string model_id;
  std::string auth_token_env;  // bearer token variable; empty sends no Authorization header
  double default_temperature = 0.0;
  int output_token_index = 1;  // which generated token is observed
  int max_concurrent_requests = 4;
  int retry_limit = 3;
  std::chrono::milliseconds timeout{30000};
  std::chrono::milliseconds backoff_initial{500};
  std::chrono::milliseconds backoff_max{8000};
  double price_in = 0.0;   // currency per million input tokens
  double price_out = 0.0;  // currency per million output tokens
  std::optional<std::int64_t> seed;  // sent only when configured

  std::string fingerprint() const { return base_url + " " + model_id; }
  void validate() const;
};

EndpointConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const EndpointConfig& config);
/// Accepts a single object, an array, or {"endpoints": [...]}.
std::vector<EndpointConfig> load_endpoint_configs(const std::filesystem::path& path);

struct Usage {
  std::uint64_t input_tokens = 0;
  std::uint64_t output_tokens = 0;
  std::chrono::milliseconds latency{0};
};

struct TokenObservation {
  std::string token;
  Usage usage;
};

/// Transport failures that survived every retry.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Authentication or other 4xx answers, missing credentials: retrying won't help.
class ConfigurationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The server answered 2xx but not with a usable chat completion.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct HttpResponse {
  int status = 0;
  std::string body;
};

/// Minimal POST-JSON transport. nullopt means no HTTP response at all
/// (connect/read failure or timeout).
class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual std::optional<HttpResponse> post_json(const std::string& path, const std::string& body,
                                                const std::vector<std::pair<std::string, std::string>>& headers) = 0;
};

/// cpp-httplib backed transport; https requires the OpenSSL build.
std::shared_ptr<HttpTransport> make_http_transport(const std::string& base_url, std::chrono::milliseconds timeout);

/// Caps in-flight requests; remembers the largest count ever reached.
class RequestGate {
 public:
  explicit RequestGate(int limit) : limit_(limit) {}

  void acquire();
  void release();
  int high_water_mark() const;

 private:
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  int limit_;
  int in_flight_ = 0;
  int high_water_ = 0;
};

/// Single-token chat-completion client for one endpoint. Shareable across
/// threads; requests beyond max_concurrent_requests wait.
class ChatClient {
 public:
  explicit ChatClient(EndpointConfig config, std::shared_ptr<HttpTransport> transport = nullptr);

  /// Text of the observed generated token; "∅" for an empty completion.
  TokenObservation query_token(std::string_view prompt, double temperature);
  TokenObservation query_token(std::string_view prompt) { return query_token(prompt, config_.default_temperature); }

  /// The exact request body sent for (prompt, temperature).
  nlohmann::json build_request(std::string_view prompt, double temperature) const;

  const EndpointConfig& config() const { return config_; }
  int high_water_mark() const { return gate_.high_water_mark(); }

 private:
  std::string request_path() const;

  EndpointConfig config_;
  std::shared_ptr<HttpTransport> transport_;
  RequestGate gate_;
};

/// Convenience wrapper constructing a one-off client.
TokenObservation query_token(const EndpointConfig& config, std::string_view prompt, double temperature);

/// Extracts the observed token and usage from a chat-completion body.
TokenObservation parse_completion(const std::string& body);

struct EligibilityReport {
  bool cost_ok = false;      // price_in + price_out <= 30 per million
  bool not_free = false;     // some price is positive
  bool probe_ok = false;     // probe used <= 10 input and <= 1 output tokens
  bool eligible = false;
  std::optional<Usage> probe_usage;
  std::vector<std::string> reasons;
};

inline constexpr double kMaxPricePerMillion = 30.0;
inline constexpr std::uint64_t kMaxProbeInputTokens = 10;
inline constexpr std::uint64_t kMaxProbeOutputTokens = 1;

/// Pure rule evaluation; probe_usage nullopt means the probe failed.
EligibilityReport evaluate_eligibility(const EndpointConfig& config, const std::optional<Usage>& probe_usage,
                                       const std::string& probe_error = {});

/// Sends one probe request and evaluates the screening rules.
EligibilityReport screen_endpoint(ChatClient& client, std::string_view probe_prompt = "a");

}  // namespace b3it::client
