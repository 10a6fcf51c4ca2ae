#include "b3it/budget.hpp"
#include "b3it/engine.hpp"
#include "b3it/persistence.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace b3it;
namespace fs = std::filesystem;

namespace {

sim::Logits vec(std::initializer_list<double> v) {
  sim::Logits z(static_cast<sim::Index>(v.size()));
  sim::Index i = 0;
  for (double x : v) z(i++) = x;
  return z;
}

/// Scripted sampler: answers from a per-prompt function, optionally failing.
class ScriptedSampler final : public TokenSampler {
 public:
  using Fn = std::function<Token(const std::string&, std::uint64_t call)>;
  explicit ScriptedSampler(Fn fn) : fn_(std::move(fn)) {}
  Token sample(const std::string& prompt, double) override { return fn_(prompt, calls_++); }
  std::string fingerprint() const override { return "scripted"; }
  std::uint64_t calls() const { return calls_; }

 private:
  Fn fn_;
  std::atomic<std::uint64_t> calls_{0};
};

fs::path temp_file(const std::string& stem) {
  std::random_device rd;
  return fs::temp_directory_path() / (stem + "_" + std::to_string(rd()) + ".jsonl");
}

Timestamp at(std::int64_t ms) { return Timestamp(std::chrono::milliseconds(ms)); }

BorderInput bi(const std::string& prompt) { return {prompt, {"t0", "t1"}, 2, at(1000), 0.0}; }

}  // namespace

TEST(Discover, NoTiesFindsNothing) {
  sim::SyntheticEndpoint ep;
  for (int i = 0; i < 20; ++i) ep.prompt_table["q" + std::to_string(i)] = vec({1.0, 0.0});
  SimulatorSampler sampler(ep, 1);
  std::vector<std::string> ids;
  for (const auto& [id, z] : ep.prompt_table) ids.push_back(id);
  const auto r = discover(sampler, ids, {.max_samples = 3, .target = 5});
  EXPECT_TRUE(r.border_inputs.empty());
  EXPECT_EQ(r.requests, 60u);
  EXPECT_EQ(r.candidates_examined, 20u);
}

TEST(Discover, StopsAtFirstDifference) {
  ScriptedSampler sampler([](const std::string&, std::uint64_t call) { return call % 2 ? "B" : "A"; });
  const auto r = discover(sampler, {"x"}, {.max_samples = 3, .target = 1});
  ASSERT_EQ(r.border_inputs.size(), 1u);
  EXPECT_EQ(r.requests, 2u);
  EXPECT_EQ(r.border_inputs[0].discovery_samples, 2);
  EXPECT_EQ(r.border_inputs[0].discovery_support, (std::set<Token>{"A", "B"}));
}

TEST(Discover, TargetAndFailures) {
  ScriptedSampler sampler([](const std::string& p, std::uint64_t call) -> Token {
    if (p == "bad") throw std::runtime_error("boom");
    return call % 2 ? "B" : "A";
  });
  const auto r = discover(sampler, {"bad", "a", "b", "c"}, {.max_samples = 3, .target = 2});
  EXPECT_EQ(r.border_inputs.size(), 2u);
  ASSERT_EQ(r.skipped.size(), 1u);
  EXPECT_EQ(r.skipped[0].prompt, "bad");
  EXPECT_EQ(r.candidates_examined, 3u);
  EXPECT_THROW(discover(sampler, {"a"}, {.max_samples = 1}), std::invalid_argument);
}

TEST(Discover, CostPerBorderInputMatchesBudget) {
  const auto ep = sim::generate_endpoint({.prompt_count = 10000, .vocab_size = 10, .border_fraction = 0.5,
                                          .tie_sizes = {2}, .seed = 12});
  SimulatorSampler sampler(ep, 13);
  std::vector<std::string> ids;
  for (const auto& [id, z] : ep.prompt_table) ids.push_back(id);
  const auto r = discover(sampler, ids, {.max_samples = 3, .target = 0});
  const double per_bi = static_cast<double>(r.requests) / static_cast<double>(r.border_inputs.size());
  EXPECT_NEAR(per_bi / budget::cost_per_bi(3, 0.5), 1.0, 0.05);
}

TEST(Reference, CollectsAndFlagsIncomplete) {
  sim::SyntheticEndpoint ep;
  ep.prompt_table["tie"] = vec({0.0, 0.0, -3.0});
  SimulatorSampler sampler(ep, 2);
  const auto recs = collect_reference(sampler, {bi("tie")}, 50);
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_TRUE(recs[0].complete());
  EXPECT_EQ(recs[0].reference.total(), 50u);
  EXPECT_EQ(recs[0].endpoint_fingerprint, "simulator");

  ScriptedSampler flaky([](const std::string&, std::uint64_t call) -> Token {
    if (call >= 30) throw std::runtime_error("rate limited");
    return "A";
  });
  const auto partial = collect_reference(flaky, {bi("p")}, 50);
  EXPECT_FALSE(partial[0].complete());
  EXPECT_EQ(partial[0].reference.total(), 30u);
  EXPECT_EQ(partial[0].failure, "rate limited");
}

TEST(Detect, NullEndpointRejectionRateBounded) {
  sim::SyntheticEndpoint ep;
  ep.prompt_table["tie"] = vec({0.0, 0.0, -3.0});
  SimulatorSampler sampler(ep, 3);
  const int trials = 4000;
  int rejections = 0;
  for (int t = 0; t < trials; ++t) {
    const auto refs = collect_reference(sampler, {bi("tie")}, 6);
    rejections += detect(sampler, refs, {.n2 = 6}).binary_decision ? 1 : 0;
  }
  const double bound = type1_bound(2, 6, 6);
  EXPECT_LE(rejections / static_cast<double>(trials), bound + 3 * std::sqrt(bound * (1 - bound) / trials));
}

TEST(Detect, CollapseDetected) {
  sim::SyntheticEndpoint ep;
  ep.prompt_table["tie"] = vec({0.0, 0.0, -3.0});
  SimulatorSampler sampler(ep, 4);
  const auto refs = collect_reference(sampler, {bi("tie")}, 50);
  auto collapsed = ep;
  collapsed.prompt_table["tie"] = vec({1.0, 0.0, -3.0});
  sampler.set_endpoint(collapsed);
  const auto out = detect(sampler, refs, {.n2 = 3});
  EXPECT_GE(out.aggregate_tv, 0.3);
  EXPECT_EQ(out.per_prompt.size(), 1u);
  // t0 only: reference held both tokens, so the supports differ unless the reference saw only t0
  EXPECT_EQ(out.binary_decision, refs[0].reference.contains("t1"));
  EXPECT_THROW(detect(sampler, refs, {.n2 = 0}), std::invalid_argument);
}

TEST(Detect, IncompleteAndFailingPrompts) {
  ReferenceRecord good{bi("a"), EmpiricalDistribution::from_counts({{"A", 5}}), "s", 5, {}};
  ReferenceRecord partial{bi("b"), EmpiricalDistribution::from_counts({{"A", 2}}), "s", 5, "stopped"};
  ReferenceRecord failing{bi("bad"), EmpiricalDistribution::from_counts({{"A", 5}}), "s", 5, {}};
  ScriptedSampler sampler([](const std::string& p, std::uint64_t) -> Token {
    if (p == "bad") throw std::runtime_error("down");
    return "A";
  });
  auto out = detect(sampler, {good, partial, failing}, {.n2 = 3});
  EXPECT_EQ(out.per_prompt.size(), 1u);
  EXPECT_EQ(out.excluded_incomplete, 1u);
  EXPECT_EQ(out.failed_prompts.size(), 1u);
  EXPECT_EQ(out.aggregate_tv, 0.0);

  out = detect(sampler, {good, partial}, {.n2 = 3, .include_incomplete = true, .parallelism = 2});
  EXPECT_EQ(out.per_prompt.size(), 2u);
  EXPECT_THROW(detect(sampler, {failing}, {}), DetectionError);
}

TEST(ChangeEvents, PersistenceRule) {
  EXPECT_EQ(change_event_indices(std::vector<double>{0.1, 0.1, 0.1, 0.1, 0.6, 0.6, 0.6, 0.6}),
            (std::vector<std::size_t>{4}));
  // one dip below the threshold breaks the post window
  EXPECT_TRUE(change_event_indices(std::vector<double>{0.1, 0.1, 0.1, 0.1, 0.6, 0.6, 0.4, 0.6}).empty());
  // a spike inside the pre window is not a clean baseline
  EXPECT_TRUE(change_event_indices(std::vector<double>{0.1, 0.7, 0.1, 0.1, 0.6, 0.6, 0.6, 0.6}).empty());
  EXPECT_TRUE(change_event_indices(std::vector<double>{0.1, 0.6}).empty());
  // exactly at the threshold counts as above
  EXPECT_EQ(change_event_indices(std::vector<double>{0, 0, 0, 0, 0.5, 0.5, 0.5, 0.5}), (std::vector<std::size_t>{4}));
  EXPECT_EQ(change_event_indices(std::vector<double>{0, 0.9, 0, 0.9}, 0.5, 1), (std::vector<std::size_t>{1, 3}));
}

TEST(ChangeEvents, ScanFillsTimestampsAndMeans) {
  MonitorHistory h;
  const std::vector<double> tv{0.1, 0.2, 0.1, 0.2, 0.6, 0.7, 0.6, 0.7, 0.8};
  for (std::size_t i = 0; i < tv.size(); ++i) h.append({at(1000 * static_cast<std::int64_t>(i + 1)), tv[i], false});
  const auto ev = change_event_scan(h);
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0].index, 4u);
  EXPECT_EQ(ev[0].start, at(4000));
  EXPECT_EQ(ev[0].end, at(5000));
  EXPECT_NEAR(ev[0].pre_mean, 0.15, 1e-12);
  EXPECT_NEAR(ev[0].post_mean, 0.65, 1e-12);
  EXPECT_THROW(h.append({at(1000), 0.0, false}), std::invalid_argument);
}

TEST(Monitor, RaisesOneEventAndPersists) {
  const auto path = temp_file("b3it_history");
  sim::SyntheticEndpoint ep;
  std::vector<BorderInput> bis;
  for (const char* id : {"a", "b", "c", "d", "e"}) {
    ep.prompt_table[id] = vec({0.0, 0.0, 0.0, -4.0});
    bis.push_back(bi(id));
  }
  SimulatorSampler sampler(ep, 21);
  const auto refs = collect_reference(sampler, bis, 50);
  Monitor monitor(refs, {}, {.detect = {.n2 = 3}, .history_path = path});

  std::size_t events = 0;
  std::int64_t t = 0;
  for (int round = 0; round < 8; ++round) events += monitor.run_round(sampler, at(t += 3600000)).second.size();
  auto collapsed = ep;
  for (auto& [id, z] : collapsed.prompt_table) z(0) += 1.0;
  sampler.set_endpoint(collapsed);
  for (int round = 0; round < 8; ++round) events += monitor.run_round(sampler, at(t += 3600000)).second.size();

  EXPECT_EQ(events, 1u);
  const auto reread = persistence::read_history(path);
  EXPECT_EQ(reread, monitor.history());
  EXPECT_EQ(reread.series.size(), 16u);
  fs::remove(path);
}

TEST(Cost, YearlyAndInitialization) {
  client::EndpointConfig c;
  c.price_in = 0.38;
  c.price_out = 1.2;
  EXPECT_NEAR(estimate_yearly_cost(c, {}, 7.0), 131400.0 * (7 * 0.38 + 1.2) / 1e6, 1e-12);
  EXPECT_NEAR(estimate_yearly_cost(c, {}, 7.0), 0.507204, 1e-9);
  EXPECT_NEAR(estimate_request_cost(c, 1000, 7.0), 1000 * 3.86 / 1e6, 1e-15);
  c.price_in = -1;
  EXPECT_THROW(estimate_yearly_cost(c, {}, 7.0), std::invalid_argument);
}

TEST(Persistence, RecordRoundTrips) {
  const BorderInput b = bi("  spaced prompt ");
  EXPECT_EQ(persistence::border_input_from_json(persistence::to_json(b)), b);

  ReferenceRecord rec{b, EmpiricalDistribution::from_counts({{"t0", 20}, {"t1", 30}}), "url model", 50, {}};
  EXPECT_EQ(persistence::reference_from_json(persistence::to_json(rec)), rec);
  ReferenceRecord broken{b, {}, "url model", 50, "no answer"};
  EXPECT_EQ(persistence::reference_from_json(persistence::to_json(broken)), broken);

  const auto path = temp_file("b3it_refs");
  persistence::write_references(path, {rec, broken});
  EXPECT_EQ(persistence::read_references(path), (std::vector<ReferenceRecord>{rec, broken}));
  persistence::write_border_inputs(path, {b});
  EXPECT_EQ(persistence::read_border_inputs(path), std::vector<BorderInput>{b});
  fs::remove(path);

  nlohmann::json wrong = persistence::to_json(b);
  wrong["schema"] = "b3it.other/1";
  EXPECT_THROW(persistence::border_input_from_json(wrong), persistence::FormatError);
}

TEST(Persistence, HistoryToleratesTruncatedTail) {
  const std::string round = persistence::round_to_json("e", {at(1), 0.25, false}).dump();
  std::istringstream in(round + "\n" + round.substr(0, round.size() / 2));
  const auto h = persistence::read_history(in);
  EXPECT_EQ(h.series.size(), 1u);
  EXPECT_EQ(h.endpoint_fingerprint, "e");

  std::istringstream corrupt("{not json\n" + round + "\n");
  EXPECT_THROW(persistence::read_history(corrupt), persistence::FormatError);
  EXPECT_TRUE(persistence::read_history(fs::path("/nonexistent/history.jsonl")).series.empty());
}

TEST(Persistence, HistoryRejectsMixedEndpoints) {
  std::istringstream in(persistence::round_to_json("e1", {at(1), 0.1, false}).dump() + "\n" +
                        persistence::round_to_json("e2", {at(2), 0.1, false}).dump() + "\n");
  EXPECT_THROW(persistence::read_history(in), persistence::FormatError);
}

TEST(Monitor, BackToBackRoundsGetDistinctTimestamps) {
  sim::SyntheticEndpoint ep;
  ep.prompt_table["a"] = vec({0.0, 0.0, -4.0});
  SimulatorSampler sampler(ep, 5);
  Monitor monitor(collect_reference(sampler, {bi("a")}, 20), {}, {});
  for (int i = 0; i < 5; ++i) monitor.run_round(sampler);
  const auto& s = monitor.history().series;
  ASSERT_EQ(s.size(), 5u);
  for (std::size_t i = 1; i < s.size(); ++i) EXPECT_GT(s[i].timestamp, s[i - 1].timestamp);
}
