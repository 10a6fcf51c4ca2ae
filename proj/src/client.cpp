#include "b3it/client.hpp"

#include "httplib.h"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <thread>

namespace b3it::client {

using nlohmann::json;

void EndpointConfig::validate() const {
  if (base_url.empty()) throw ConfigurationError("endpoint config: base_url is empty");
  if (model_id.empty()) throw ConfigurationError("endpoint config: model_id is empty");
  if (output_token_index < 1) throw ConfigurationError("endpoint config: output_token_index must be >= 1");
  if (max_concurrent_requests < 1) throw ConfigurationError("endpoint config: max_concurrent_requests must be >= 1");
  if (retry_limit < 0) throw ConfigurationError("endpoint config: retry_limit must be >= 0");
  if (default_temperature < 0.0) throw ConfigurationError("endpoint config: default_temperature must be >= 0");
  if (price_in < 0.0 || price_out < 0.0) throw ConfigurationError("endpoint config: prices must be >= 0");
}

EndpointConfig config_from_json(const json& j) {
  EndpointConfig c;
  c.name = j.value("name", std::string{});
  c.base_url = j.value("base_url", std::string{});
  c.model_id = j.value("model_id", std::string{});
  c.auth_token_env = j.value("auth_token_env", std::string{});
  c.default_temperature = j.value("default_temperature", 0.0);
  c.output_token_index = j.value("output_token_index", 1);
  c.max_concurrent_requests = j.value("max_concurrent_requests", 4);
  c.retry_limit = j.value("retry_limit", 3);
  c.timeout = std::chrono::milliseconds(j.value("timeout_ms", std::int64_t{30000}));
  c.backoff_initial = std::chrono::milliseconds(j.value("backoff_initial_ms", std::int64_t{500}));
  c.backoff_max = std::chrono::milliseconds(j.value("backoff_max_ms", std::int64_t{8000}));
  c.price_in = j.value("price_in", 0.0);
  c.price_out = j.value("price_out", 0.0);
  if (j.contains("seed") && !j["seed"].is_null()) c.seed = j["seed"].get<std::int64_t>();
  c.validate();
  return c;
}

json config_to_json(const EndpointConfig& c) {
  json j = {{"name", c.name},
            {"base_url", c.base_url},
            {"model_id", c.model_id},
            {"auth_token_env", c.auth_token_env},
            {"default_temperature", c.default_temperature},
            {"output_token_index", c.output_token_index},
            {"max_concurrent_requests", c.max_concurrent_requests},
            {"retry_limit", c.retry_limit},
            {"timeout_ms", c.timeout.count()},
            {"backoff_initial_ms", c.backoff_initial.count()},
            {"backoff_max_ms", c.backoff_max.count()},
            {"price_in", c.price_in},
            {"price_out", c.price_out}};
  if (c.seed) j["seed"] = *c.seed;
  return j;
}

std::vector<EndpointConfig> load_endpoint_configs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("cannot read endpoint config: " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigurationError("endpoint config " + path.string() + ": " + e.what());
  }
  const json& list = doc.is_object() && doc.contains("endpoints") ? doc["endpoints"] : doc;
  std::vector<EndpointConfig> out;
  if (list.is_array()) {
    for (const auto& item : list) out.push_back(config_from_json(item));
  } else {
    out.push_back(config_from_json(list));
  }
  return out;
}

void RequestGate::acquire() {
  std::unique_lock lock(mutex_);
  cv_.wait(lock, [&] { return in_flight_ < limit_; });
  ++in_flight_;
  high_water_ = std::max(high_water_, in_flight_);
}

void RequestGate::release() {
  {
    std::lock_guard lock(mutex_);
    --in_flight_;
  }
  cv_.notify_one();
}

int RequestGate::high_water_mark() const {
  std::lock_guard lock(mutex_);
  return high_water_;
}

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path without trailing slash
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  const auto path_start = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  SplitUrl out;
  if (path_start == std::string::npos) {
    out.origin = url;
  } else {
    out.origin = url.substr(0, path_start);
    out.prefix = url.substr(path_start);
    while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
  }
  return out;
}

class HttplibTransport final : public HttpTransport {
 public:
  HttplibTransport(std::string origin, std::chrono::milliseconds timeout)
      : origin_(std::move(origin)), timeout_(timeout) {}

  std::optional<HttpResponse> post_json(const std::string& path, const std::string& body,
                                        const std::vector<std::pair<std::string, std::string>>& headers) override {
    // one connection per request; httplib::Client serialises requests internally
    httplib::Client cli(origin_);
    cli.set_connection_timeout(timeout_);
    cli.set_read_timeout(timeout_);
    cli.set_write_timeout(timeout_);
    httplib::Headers h;
    for (const auto& [k, v] : headers) h.emplace(k, v);
    auto res = cli.Post(path, h, body, "application/json");
    if (!res) return std::nullopt;
    return HttpResponse{res->status, res->body};
  }

 private:
  std::string origin_;
  std::chrono::milliseconds timeout_;
};

struct GateGuard {
  explicit GateGuard(RequestGate& g) : gate(g) { gate.acquire(); }
  ~GateGuard() { gate.release(); }
  GateGuard(const GateGuard&) = delete;
  GateGuard& operator=(const GateGuard&) = delete;
  RequestGate& gate;
};

bool retriable_status(int status) { return status == 408 || status == 429 || status >= 500; }

}  // namespace

std::shared_ptr<HttpTransport> make_http_transport(const std::string& base_url, std::chrono::milliseconds timeout) {
  return std::make_shared<HttplibTransport>(split_url(base_url).origin, timeout);
}

ChatClient::ChatClient(EndpointConfig config, std::shared_ptr<HttpTransport> transport)
    : config_(std::move(config)),
      transport_(std::move(transport)),
      gate_(std::max(1, config_.max_concurrent_requests)) {
  config_.validate();
  if (!transport_) transport_ = make_http_transport(config_.base_url, config_.timeout);
}

std::string ChatClient::request_path() const { return split_url(config_.base_url).prefix + "/chat/completions"; }

json ChatClient::build_request(std::string_view prompt, double temperature) const {
  json req = {{"model", config_.model_id},
              {"messages", json::array({{{"role", "user"}, {"content", std::string(prompt)}}})},
              {"temperature", temperature},
              {"max_tokens", config_.output_token_index}};
  if (config_.seed) req["seed"] = *config_.seed;
  return req;
}

TokenObservation parse_completion(const std::string& body) {
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("completion body is not JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("choices") || !doc["choices"].is_array() || doc["choices"].empty()) {
    throw ProtocolError("completion has no choices");
  }
  const json& choice = doc["choices"][0];
  std::string text;
  if (choice.contains("message") && choice["message"].is_object()) {
    const json& content = choice["message"].value("content", json());
    if (content.is_string()) text = content.get<std::string>();
  } else if (choice.contains("text") && choice["text"].is_string()) {
    text = choice["text"].get<std::string>();
  } else {
    throw ProtocolError("completion choice has neither message nor text");
  }

  TokenObservation obs;
  obs.token = text.empty() ? std::string(kEmptyToken) : text;
  if (doc.contains("usage") && doc["usage"].is_object()) {
    const json& u = doc["usage"];
    obs.usage.input_tokens = u.value("prompt_tokens", std::uint64_t{0});
    obs.usage.output_tokens = u.value("completion_tokens", std::uint64_t{0});
  }
  return obs;
}

TokenObservation ChatClient::query_token(std::string_view prompt, double temperature) {
  if (prompt.empty()) throw std::invalid_argument("query_token: prompt is empty");
  if (!(temperature >= 0.0)) throw std::invalid_argument("query_token: temperature must be >= 0");

  std::vector<std::pair<std::string, std::string>> headers;
  if (!config_.auth_token_env.empty()) {
    const char* token = std::getenv(config_.auth_token_env.c_str());
    if (token == nullptr || *token == '\0') {
      throw ConfigurationError("environment variable " + config_.auth_token_env + " is not set");
    }
    headers.emplace_back("Authorization", std::string("Bearer ") + token);
  }

  // serialised once so every retry replays identical bytes
  const std::string body = build_request(prompt, temperature).dump();
  const std::string path = request_path();

  std::string last_error;
  auto backoff = config_.backoff_initial;
  for (int attempt = 0; attempt <= config_.retry_limit; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(backoff);
      backoff = std::min(config_.backoff_max, backoff * 2);
    }
    std::optional<HttpResponse> res;
    const auto started = std::chrono::steady_clock::now();
    {
      GateGuard guard(gate_);
      res = transport_->post_json(path, body, headers);
    }
    const auto latency =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started);

    if (!res) {
      last_error = "no response from " + config_.base_url;
      continue;
    }
    if (res->status >= 200 && res->status < 300) {
      TokenObservation obs = parse_completion(res->body);
      obs.usage.latency = latency;
      return obs;
    }
    if (retriable_status(res->status)) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    throw ConfigurationError("HTTP " + std::to_string(res->status) + " from " + config_.base_url + ": " +
                             res->body.substr(0, 200));
  }
  throw TransportError("request to " + config_.base_url + " failed after " +
                       std::to_string(config_.retry_limit + 1) + " attempts: " + last_error);
}

TokenObservation query_token(const EndpointConfig& config, std::string_view prompt, double temperature) {
  ChatClient client(config);
  return client.query_token(prompt, temperature);
}

EligibilityReport evaluate_eligibility(const EndpointConfig& config, const std::optional<Usage>& probe_usage,
                                       const std::string& probe_error) {
  EligibilityReport r;
  const double price = config.price_in + config.price_out;
  r.cost_ok = price <= kMaxPricePerMillion;
  if (!r.cost_ok) r.reasons.push_back("cost: input + output price exceeds 30 per million tokens");
  r.not_free = price > 0.0;
  if (!r.not_free) r.reasons.push_back("free: free endpoints are excluded");
  r.probe_usage = probe_usage;
  if (!probe_usage) {
    r.reasons.push_back("probe failed: " + (probe_error.empty() ? std::string("no usage") : probe_error));
  } else {
    r.probe_ok = probe_usage->input_tokens <= kMaxProbeInputTokens &&
                 probe_usage->output_tokens <= kMaxProbeOutputTokens;
    if (probe_usage->input_tokens > kMaxProbeInputTokens) {
      r.reasons.push_back("token inflation: probe used " + std::to_string(probe_usage->input_tokens) +
                          " input tokens");
    }
    if (probe_usage->output_tokens > kMaxProbeOutputTokens) {
      r.reasons.push_back("token inflation: probe produced " + std::to_string(probe_usage->output_tokens) +
                          " output tokens");
    }
  }
  r.eligible = r.cost_ok && r.not_free && r.probe_ok;
  return r;
}

EligibilityReport screen_endpoint(ChatClient& client, std::string_view probe_prompt) {
  try {
    const TokenObservation obs = client.query_token(probe_prompt, client.config().default_temperature);
    return evaluate_eligibility(client.config(), obs.usage);
  } catch (const std::exception& e) {
    return evaluate_eligibility(client.config(), std::nullopt, e.what());
  }
}

}  // namespace b3it::client
