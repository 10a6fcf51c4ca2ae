#include "b3it/engine.hpp"

#include "b3it/persistence.hpp"

#include <algorithm>
#include <future>
#include <numeric>
#include <random>

namespace b3it {

Timestamp now_ms() { return std::chrono::time_point_cast<std::chrono::milliseconds>(std::chrono::system_clock::now()); }

SimulatorSampler::SimulatorSampler(sim::SyntheticEndpoint endpoint, std::uint64_t seed, std::string fingerprint)
    : endpoint_(std::move(endpoint)), rng_(seed), fingerprint_(std::move(fingerprint)) {
  endpoint_.validate();
}

Token SimulatorSampler::sample(const std::string& prompt, double temperature) {
  std::lock_guard lock(mutex_);
  ++requests_;
  return endpoint_.token_label(sim::sample_token(endpoint_, prompt, temperature, rng_));
}

void SimulatorSampler::set_endpoint(sim::SyntheticEndpoint endpoint) {
  endpoint.validate();
  std::lock_guard lock(mutex_);
  endpoint_ = std::move(endpoint);
}

std::uint64_t SimulatorSampler::requests() const {
  std::lock_guard lock(mutex_);
  return requests_;
}

Token ClientSampler::sample(const std::string& prompt, double temperature) {
  return client_.query_token(prompt, temperature).token;
}

DiscoveryResult discover(TokenSampler& sampler, const std::vector<std::string>& candidates,
                         const DiscoveryOptions& options) {
  if (options.max_samples < 2) {
    throw std::invalid_argument("discover: m must be >= 2 to witness two distinct outputs");
  }
  if (candidates.empty()) throw std::invalid_argument("discover: no candidates");

  std::vector<std::string> order = candidates;
  if (options.shuffle) {
    std::mt19937_64 rng(options.shuffle_seed);
    std::shuffle(order.begin(), order.end(), rng);
  }

  DiscoveryResult result;
  for (const auto& prompt : order) {
    if (options.target > 0 && result.border_inputs.size() >= options.target) break;
    ++result.candidates_examined;
    try {
      ++result.requests;
      const Token first = sampler.sample(prompt, options.temperature);
      int samples = 1;
      std::optional<Token> other;
      while (samples < options.max_samples) {
        ++result.requests;
        Token t = sampler.sample(prompt, options.temperature);
        ++samples;
        if (t != first) {
          other = std::move(t);
          break;
        }
      }
      if (other) {
        result.border_inputs.push_back({prompt, {first, *other}, samples, now_ms(), options.temperature});
      }
    } catch (const std::exception& e) {
      result.skipped.push_back({prompt, e.what()});
    }
  }
  return result;
}

std::vector<ReferenceRecord> collect_reference(TokenSampler& sampler, const std::vector<BorderInput>& border_inputs,
                                               std::uint64_t n1, double temperature) {
  if (n1 == 0) throw std::invalid_argument("collect_reference: n1 must be >= 1");
  std::vector<ReferenceRecord> records;
  records.reserve(border_inputs.size());
  for (const auto& bi : border_inputs) {
    ReferenceRecord rec{bi, {}, sampler.fingerprint(), n1, {}};
    try {
      for (std::uint64_t i = 0; i < n1; ++i) rec.reference.add(sampler.sample(bi.prompt, temperature));
    } catch (const std::exception& e) {
      rec.failure = e.what();
    }
    records.push_back(std::move(rec));
  }
  return records;
}

namespace {

struct PromptResult {
  std::optional<PromptDetection> detection;
  std::string error;
};

PromptResult detect_one(TokenSampler& sampler, const ReferenceRecord& rec, const DetectOptions& options) {
  PromptResult out;
  try {
    EmpiricalDistribution det;
    for (std::uint64_t i = 0; i < options.n2; ++i) det.add(sampler.sample(rec.border_input.prompt, options.temperature));
    out.detection = PromptDetection{rec.border_input.prompt, tv_distance(rec.reference, det),
                                    support_mismatch(rec.reference, det), std::move(det)};
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  return out;
}

}  // namespace

DetectionOutcome detect(TokenSampler& sampler, const std::vector<ReferenceRecord>& records,
                        const DetectOptions& options) {
  if (records.empty()) throw std::invalid_argument("detect: no reference records");
  if (options.n2 == 0) throw std::invalid_argument("detect: n2 must be >= 1");

  DetectionOutcome outcome;
  outcome.n2 = options.n2;
  outcome.timestamp = now_ms();

  std::vector<const ReferenceRecord*> usable;
  for (const auto& rec : records) {
    if (rec.reference.empty() || (!rec.complete() && !options.include_incomplete)) {
      ++outcome.excluded_incomplete;
    } else {
      usable.push_back(&rec);
    }
  }

  std::vector<PromptResult> results(usable.size());
  const std::size_t lanes = std::max(1u, options.parallelism);
  for (std::size_t begin = 0; begin < usable.size(); begin += lanes) {
    const std::size_t end = std::min(usable.size(), begin + lanes);
    if (lanes == 1) {
      results[begin] = detect_one(sampler, *usable[begin], options);
      continue;
    }
    std::vector<std::future<PromptResult>> batch;
    for (std::size_t i = begin; i < end; ++i) {
      batch.push_back(std::async(std::launch::async, detect_one, std::ref(sampler), std::cref(*usable[i]),
                                 std::cref(options)));
    }
    for (std::size_t i = begin; i < end; ++i) results[i] = batch[i - begin].get();
  }

  std::vector<double> tvs;
  for (std::size_t i = 0; i < usable.size(); ++i) {
    if (results[i].detection) {
      tvs.push_back(results[i].detection->tv);
      outcome.binary_decision = outcome.binary_decision || results[i].detection->mismatch;
      outcome.per_prompt.push_back(std::move(*results[i].detection));
    } else {
      outcome.failed_prompts.push_back({usable[i]->border_input.prompt, results[i].error});
    }
  }
  if (tvs.empty()) {
    throw DetectionError("detect: no prompt could be evaluated (" + std::to_string(outcome.failed_prompts.size()) +
                         " failed, " + std::to_string(outcome.excluded_incomplete) + " incomplete)");
  }
  outcome.aggregate_tv = aggregate_statistic(tvs);
  return outcome;
}

void MonitorHistory::append(const MonitorPoint& point) {
  if (!series.empty() && point.timestamp <= series.back().timestamp) {
    throw std::invalid_argument("monitor history: timestamps must be strictly increasing");
  }
  series.push_back(point);
}

std::vector<std::size_t> change_event_indices(std::span<const double> values, double threshold, std::size_t window) {
  std::vector<std::size_t> out;
  if (window == 0 || values.size() < 2 * window) return out;
  std::size_t i = window;
  while (i + window <= values.size()) {
    const bool below = std::all_of(values.begin() + static_cast<std::ptrdiff_t>(i - window),
                                   values.begin() + static_cast<std::ptrdiff_t>(i),
                                   [&](double v) { return v < threshold; });
    const bool above = below && std::all_of(values.begin() + static_cast<std::ptrdiff_t>(i),
                                            values.begin() + static_cast<std::ptrdiff_t>(i + window),
                                            [&](double v) { return v >= threshold; });
    if (above) {
      out.push_back(i);
      i += window;
    } else {
      ++i;
    }
  }
  return out;
}

std::vector<ChangeEvent> change_event_scan(const MonitorHistory& history, double threshold, std::size_t window) {
  std::vector<double> values;
  values.reserve(history.series.size());
  for (const auto& p : history.series) values.push_back(p.aggregate_tv);

  std::vector<ChangeEvent> events;
  for (std::size_t i : change_event_indices(values, threshold, window)) {
    const auto mean = [&](std::size_t from, std::size_t to) {
      return std::accumulate(values.begin() + static_cast<std::ptrdiff_t>(from),
                             values.begin() + static_cast<std::ptrdiff_t>(to), 0.0) /
             static_cast<double>(to - from);
    };
    events.push_back({i, history.series[i - 1].timestamp, history.series[i].timestamp, mean(i - window, i),
                      mean(i, i + window)});
  }
  return events;
}

Monitor::Monitor(std::vector<ReferenceRecord> references, MonitorHistory history, MonitorOptions options)
    : references_(std::move(references)), history_(std::move(history)), options_(std::move(options)) {
  if (references_.empty()) throw std::invalid_argument("Monitor: no reference records");
  if (history_.endpoint_fingerprint.empty()) history_.endpoint_fingerprint = references_.front().endpoint_fingerprint;
}

std::pair<DetectionOutcome, std::vector<ChangeEvent>> Monitor::run_round(TokenSampler& sampler,
                                                                         std::optional<Timestamp> at) {
  DetectionOutcome outcome = detect(sampler, references_, options_.detect);
  if (at) {
    outcome.timestamp = *at;
  } else if (!history_.series.empty() && outcome.timestamp <= history_.series.back().timestamp) {
    // rounds closer than the clock resolution
    outcome.timestamp = history_.series.back().timestamp + std::chrono::milliseconds(1);
  }
  const MonitorPoint point{outcome.timestamp, outcome.aggregate_tv, outcome.binary_decision};
  history_.append(point);
  if (options_.history_path) persistence::append_round(*options_.history_path, history_.endpoint_fingerprint, point);

  std::vector<ChangeEvent> fresh;
  for (const auto& ev : change_event_scan(history_, options_.threshold, options_.window)) {
    const bool known = std::any_of(history_.change_events.begin(), history_.change_events.end(),
                                   [&](const ChangeEvent& e) { return e.index == ev.index; });
    if (known) continue;
    history_.change_events.push_back(ev);
    fresh.push_back(ev);
    if (options_.history_path) persistence::append_event(*options_.history_path, history_.endpoint_fingerprint, ev);
  }
  return {std::move(outcome), std::move(fresh)};
}

double estimate_request_cost(const client::EndpointConfig& config, std::uint64_t requests,
                             double input_tokens_per_request) {
  if (config.price_in < 0.0 || config.price_out < 0.0) throw std::invalid_argument("prices must be >= 0");
  if (input_tokens_per_request < 0.0) throw std::invalid_argument("input tokens per request must be >= 0");
  return static_cast<double>(requests) * (input_tokens_per_request * config.price_in + config.price_out) / 1e6;
}

double estimate_yearly_cost(const client::EndpointConfig& config, const MonitoringProtocol& protocol,
                            double input_tokens_per_request) {
  if (config.price_in < 0.0 || config.price_out < 0.0) throw std::invalid_argument("prices must be >= 0");
  if (input_tokens_per_request < 0.0) throw std::invalid_argument("input tokens per request must be >= 0");
  const double requests = static_cast<double>(protocol.prompt_count) * static_cast<double>(protocol.n2) *
                          protocol.rounds_per_day * 365.0;
  return requests * (input_tokens_per_request * config.price_in + config.price_out) / 1e6;
}

}  // namespace b3it
