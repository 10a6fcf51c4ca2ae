#pragma once

#include "b3it/client.hpp"
#include "b3it/simulator.hpp"
#include "b3it/stats.hpp"

#include <chrono>
#include <filesystem>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace b3it {

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;
Timestamp now_ms();

/// Source of single output tokens for a prompt at a given temperature.
/// Implementations must tolerate concurrent calls.
class TokenSampler {
 public:
  virtual ~TokenSampler() = default;
  virtual Token sample(const std::string& prompt, double temperature) = 0;
  virtual std::string fingerprint() const = 0;
};

/// Samples a synthetic endpoint; prompts are the endpoint's prompt ids.
/// The endpoint can be swapped mid-run to inject a change.
class SimulatorSampler final : public TokenSampler {
 public:
  SimulatorSampler(sim::SyntheticEndpoint endpoint, std::uint64_t seed, std::string fingerprint = "simulator");

  Token sample(const std::string& prompt, double temperature) override;
  std::string fingerprint() const override { return fingerprint_; }

  void set_endpoint(sim::SyntheticEndpoint endpoint);
  std::uint64_t requests() const;

 private:
  mutable std::mutex mutex_;
  sim::SyntheticEndpoint endpoint_;
  sim::Rng rng_;
  std::string fingerprint_;
  std::uint64_t requests_ = 0;
};

/// Samples a real endpoint through the chat-completion client.
class ClientSampler final : public TokenSampler {
 public:
  explicit ClientSampler(client::ChatClient& client) : client_(client) {}

  Token sample(const std::string& prompt, double temperature) override;
  std::string fingerprint() const override { return client_.config().fingerprint(); }

 private:
  client::ChatClient& client_;
};

struct BorderInput {
  std::string prompt;
  std::set<Token> discovery_support;  // at least two distinct tokens
  int discovery_samples = 0;
  Timestamp discovered_at{};
  double temperature_used = 0.0;

  friend bool operator==(const BorderInput&, const BorderInput&) = default;
};

struct SkippedCandidate {
  std::string prompt;
  std::string reason;

  friend bool operator==(const SkippedCandidate&, const SkippedCandidate&) = default;
};

struct DiscoveryOptions {
  int max_samples = 3;     // m
  std::size_t target = 5;  // stop after this many border inputs
  double temperature = 0.0;
  bool shuffle = false;  // consume candidates in random instead of ranked order
  std::uint64_t shuffle_seed = 0;
};

struct DiscoveryResult {
  std::vector<BorderInput> border_inputs;
  std::uint64_t requests = 0;
  std::size_t candidates_examined = 0;
  std::vector<SkippedCandidate> skipped;
};

/// Samples each candidate up to m times, stopping at the first output that
/// differs from the first one; candidates with two distinct outputs are
/// border inputs.
DiscoveryResult discover(TokenSampler& sampler, const std::vector<std::string>& candidates,
                         const DiscoveryOptions& options = {});

struct ReferenceRecord {
  BorderInput border_input;
  EmpiricalDistribution reference;
  std::string endpoint_fingerprint;
  std::uint64_t requested_samples = 0;  // n1
  std::string failure;                  // set when sampling stopped early

  bool complete() const { return reference.total() == requested_samples; }

  friend bool operator==(const ReferenceRecord&, const ReferenceRecord&) = default;
};

/// Exactly n1 samples per border input; a sampler failure leaves an
/// incomplete record holding what was collected.
std::vector<ReferenceRecord> collect_reference(TokenSampler& sampler, const std::vector<BorderInput>& border_inputs,
                                               std::uint64_t n1, double temperature = 0.0);

struct PromptDetection {
  std::string prompt;
  double tv = 0.0;
  bool mismatch = false;
  EmpiricalDistribution detection;

  friend bool operator==(const PromptDetection&, const PromptDetection&) = default;
};

struct DetectionOutcome {
  std::vector<PromptDetection> per_prompt;
  double aggregate_tv = 0.0;     // mean of per-prompt TV
  bool binary_decision = false;  // any support mismatch
  std::uint64_t n2 = 0;
  Timestamp timestamp{};
  std::vector<SkippedCandidate> failed_prompts;
  std::size_t excluded_incomplete = 0;
};

struct DetectOptions {
  std::uint64_t n2 = 3;
  double temperature = 0.0;
  bool include_incomplete = false;
  unsigned parallelism = 1;  // border inputs sampled concurrently
};

class DetectionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Resamples every usable reference n2 times and compares supports and TV.
/// Throws DetectionError when no prompt could be evaluated.
DetectionOutcome detect(TokenSampler& sampler, const std::vector<ReferenceRecord>& records,
                        const DetectOptions& options = {});

struct MonitorPoint {
  Timestamp timestamp{};
  double aggregate_tv = 0.0;
  bool binary_decision = false;

  friend bool operator==(const MonitorPoint&, const MonitorPoint&) = default;
};

struct ChangeEvent {
  std::size_t index = 0;  // first round at or above the threshold
  Timestamp start{};      // last round below the threshold
  Timestamp end{};        // first round at or above it
  double pre_mean = 0.0;
  double post_mean = 0.0;

  friend bool operator==(const ChangeEvent&, const ChangeEvent&) = default;
};

struct MonitorHistory {
  std::string endpoint_fingerprint;
  std::vector<MonitorPoint> series;  // strictly increasing timestamps
  std::vector<ChangeEvent> change_events;

  /// Throws std::invalid_argument when the timestamp does not advance.
  void append(const MonitorPoint& point);

  friend bool operator==(const MonitorHistory&, const MonitorHistory&) = default;
};

inline constexpr double kDefaultChangeThreshold = 0.5;
inline constexpr std::size_t kDefaultPersistenceWindow = 4;

/// Indices i where values[i-window, i) are all < threshold and
/// values[i, i+window) are all >= threshold. Events never overlap.
std::vector<std::size_t> change_event_indices(std::span<const double> values,
                                              double threshold = kDefaultChangeThreshold,
                                              std::size_t window = kDefaultPersistenceWindow);

std::vector<ChangeEvent> change_event_scan(const MonitorHistory& history, double threshold = kDefaultChangeThreshold,
                                           std::size_t window = kDefaultPersistenceWindow);

struct MonitorOptions {
  DetectOptions detect;
  double threshold = kDefaultChangeThreshold;
  std::size_t window = kDefaultPersistenceWindow;
  std::optional<std::filesystem::path> history_path;  // append-only log
};

/// Detection rounds against fixed references, with the persistence rule
/// applied after each round. One monitor per endpoint.
class Monitor {
 public:
  Monitor(std::vector<ReferenceRecord> references, MonitorHistory history, MonitorOptions options);

  /// Runs one detection round; returns the outcome and any change events
  /// that became visible with it.
  std::pair<DetectionOutcome, std::vector<ChangeEvent>> run_round(TokenSampler& sampler,
                                                                  std::optional<Timestamp> at = std::nullopt);

  const MonitorHistory& history() const { return history_; }

 private:
  std::vector<ReferenceRecord> references_;
  MonitorHistory history_;
  MonitorOptions options_;
};

struct MonitoringProtocol {
  std::size_t prompt_count = 5;
  std::uint64_t n2 = 3;
  double rounds_per_day = 24.0;
};

/// prompt_count * n2 * rounds_per_day * 365 requests, each billed for
/// input_tokens_per_request input tokens and one output token.
double estimate_yearly_cost(const client::EndpointConfig& config, const MonitoringProtocol& protocol,
                            double input_tokens_per_request);

/// Cost of `requests` one-token requests (discovery plus reference sampling).
double estimate_request_cost(const client::EndpointConfig& config, std::uint64_t requests,
                             double input_tokens_per_request);

}  // namespace b3it
