// Acceptance suite: one PASS/FAIL line per criterion. Tolerances are fixed
// here; the process exits non-zero when any criterion fails.

#include "b3it/budget.hpp"
#include "b3it/client.hpp"
#include "b3it/engine.hpp"
#include "b3it/simulator.hpp"
#include "b3it/stats.hpp"
#include "b3it/theory.hpp"

#include "support/mock_openai_server.hpp"
#include "support/oracles.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace b3it;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double time_limit_s;
  std::function<Verdict()> run;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double se(double p, double n) { return std::sqrt(std::max(0.0, p * (1.0 - p)) / n); }

const std::vector<std::string>& token_names() {
  static const std::vector<std::string> names{"a", "b", "c", "d", "e", "f"};
  return names;
}

EmpiricalDistribution draw_uniform(std::mt19937_64& rng, int k, int n) {
  std::uniform_int_distribution<int> pick(0, k - 1);
  EmpiricalDistribution d;
  for (int i = 0; i < n; ++i) d.add(token_names()[static_cast<std::size_t>(pick(rng))]);
  return d;
}

// H0: both samples uniform over the same k tokens.
double null_rejection_rate(int k, int n1, int n2, int trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  int rejections = 0;
  for (int t = 0; t < trials; ++t) {
    rejections += support_mismatch(draw_uniform(rng, k, n1), draw_uniform(rng, k, n2)) ? 1 : 0;
  }
  return rejections / static_cast<double>(trials);
}

// H1 collapse: reference uniform over {a, b}, detection always a.
double collapse_miss_rate(int n1, int n2, int trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto detection = EmpiricalDistribution::from_counts({{"a", static_cast<std::uint64_t>(n2)}});
  int misses = 0;
  for (int t = 0; t < trials; ++t) misses += support_mismatch(draw_uniform(rng, 2, n1), detection) ? 0 : 1;
  return misses / static_cast<double>(trials);
}

theory::SoftmaxHead<double> random_head(std::mt19937_64& rng, VectorXd z, int q) {
  std::normal_distribution<double> n01;
  MatrixXd jz(z.size(), q);
  for (Eigen::Index i = 0; i < jz.size(); ++i) jz.data()[i] = n01(rng);
  return {std::move(z), std::move(jz), 1.0};
}

theory::Direction<double> random_direction(std::mt19937_64& rng, int q) {
  std::normal_distribution<double> n01;
  VectorXd h(q);
  for (int i = 0; i < q; ++i) h(i) = n01(rng);
  return theory::Direction<double>::normalized(h);
}

Verdict criterion1() {
  constexpr int trials = 100000;
  int checked = 0;
  double worst_margin = -1e9;
  std::string worst;
  for (int k : {2, 3, 4}) {
    for (int n1 : {3, 6, 12}) {
      for (int n2 : {3, 6, 12}) {
        const double rate = null_rejection_rate(k, n1, n2, trials, sim::mix_seed(1, k, n1 * 100 + n2));
        const double bound = type1_bound(k, n1, n2);
        const double margin = rate - (bound + 3 * se(bound, trials));
        ++checked;
        if (margin > worst_margin) {
          worst_margin = margin;
          worst = fmt("k=%d n1=%d n2=%d rate=%.5f bound=%.5f", k, n1, n2, rate, bound);
        }
      }
    }
  }
  return {worst_margin <= 0.0, fmt("%d configs, tightest: %s", checked, worst.c_str())};
}

Verdict criterion2() {
  constexpr int trials = 100000;
  bool ok = true;
  std::string detail;
  for (int n1 : {2, 4, 6}) {
    const double rate = collapse_miss_rate(n1, 3, trials, sim::mix_seed(2, n1));
    const double expected = std::ldexp(1.0, -n1);
    const double z = std::abs(rate - expected) / se(expected, trials);
    ok = ok && z <= 3.0;
    detail += fmt("n1=%d miss=%.5f expect=%.5f z=%.2f; ", n1, rate, expected, z);
  }
  return {ok, detail};
}

Verdict criterion3() {
  constexpr int trials = 100000;
  bool ok = true;
  std::string detail;
  for (int n = 1; n <= 6; ++n) {
    const double type1 = null_rejection_rate(2, n, n, trials, sim::mix_seed(3, n, 0));
    const double type2 = collapse_miss_rate(n, n, trials, sim::mix_seed(3, n, 1));
    const double risk = type1 + type2;
    const double lower = risk_lower_bound(static_cast<std::uint64_t>(n));
    const bool lo_ok = risk >= lower;
    const bool hi_ok = risk <= 8.0 * lower;
    ok = ok && lo_ok && hi_ok;
    detail += fmt("n=%d risk=%.4f [%.4f, %.4f]%s; ", n, risk, lower, 8.0 * lower, (lo_ok && hi_ok) ? "" : " OUT");
  }
  return {ok, detail};
}

Verdict criterion4() {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> dim(2, 6), params(1, 4);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> tau(0.2, 2.0);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const int d = dim(rng), q = params(rng);
    VectorXd z(d);
    for (int i = 0; i < d; ++i) z(i) = n01(rng);
    auto head = random_head(rng, z, q);
    head.temperature = tau(rng);
    const auto h = random_direction(rng, q);
    const double direct = theory::snr_squared(head, h);
    const VectorXd p = theory::softmax(head);
    const double reduced = theory::snr_squared_reduced(theory::reduced_output_jacobian(head), p.head(d - 1), h);
    worst = std::max(worst, std::abs(direct - reduced) / std::max(std::abs(direct), 1e-300));
  }
  return {worst <= 1e-8, fmt("100 heads, max relative gap %.3e (tol 1e-8)", worst)};
}

Verdict criterion5() {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> low(-3.0, 0.0);
  std::vector<double> taus;
  for (int i = 0; i <= 30; ++i) taus.push_back(std::pow(10.0, -0.1 * i));  // 1 down to 1e-3

  double worst_k1 = 0.0, least_k2 = 1e300, worst_slope_err = 0.0;
  for (int t = 0; t < 20; ++t) {
    const int d = 5, q = 3;
    // k = 1, gap exactly 1
    VectorXd z1(d);
    z1(0) = 1.0;
    z1(1) = 0.0;
    for (int i = 2; i < d; ++i) z1(i) = low(rng);
    const auto h1 = random_direction(rng, q);
    const auto sweep1 = theory::phase_transition_sweep(random_head(rng, z1, q), h1, taus);
    worst_k1 = std::max(worst_k1, sweep1.back().snr_squared);

    // k = 2 tie, h with a non-vanishing component inside the tie
    VectorXd z2(d);
    z2(0) = z2(1) = 0.0;
    for (int i = 2; i < d; ++i) z2(i) = -1.0 + low(rng);
    auto head2 = random_head(rng, z2, q);
    auto h2 = random_direction(rng, q);
    while (std::abs(((*head2.jacobian) * h2.vector())(0) - ((*head2.jacobian) * h2.vector())(1)) < 0.2) {
      h2 = random_direction(rng, q);
    }
    const auto sweep2 = theory::phase_transition_sweep(head2, h2, taus);
    least_k2 = std::min(least_k2, sweep2.back().snr_squared);

    // least-squares slope of log SNR^2 against log tau over tau <= 0.1
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (const auto& pt : sweep2) {
      if (pt.temperature > 0.1 + 1e-12) continue;
      const double x = std::log(pt.temperature), y = std::log(pt.snr_squared);
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
      ++n;
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    worst_slope_err = std::max(worst_slope_err, std::abs(slope + 2.0));
  }
  const bool ok = worst_k1 < 1e-6 && least_k2 > 1e4 && worst_slope_err <= 0.02;
  return {ok, fmt("k=1 max SNR2(1e-3)=%.3e (<1e-6), k=2 min SNR2(1e-3)=%.3e (>1e4), max |slope+2|=%.2e (<=0.02)",
                  worst_k1, least_k2, worst_slope_err)};
}

Verdict criterion6() {
  int violations = 0;
  for (int i = 1; i <= 1000; ++i) {
    const double f = i / 1000.0;
    violations += budget::cost_per_bi(3, f) < budget::cost_per_bi(2, f) ? 0 : 1;
  }
  // bisection on L(4) - L(3), positive below the crossover
  double lo = 0.5, hi = 0.95;
  const auto gap = [](double f) { return budget::cost_per_bi(4, f) - budget::cost_per_bi(3, f); };
  for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
    const double mid = 0.5 * (lo + hi);
    (gap(mid) > 0 ? lo : hi) = mid;
  }
  const double crossover = 0.5 * (lo + hi);

  const auto ep = sim::generate_endpoint(
      {.prompt_count = 10000, .vocab_size = 10, .border_fraction = 0.5, .tie_sizes = {2}, .seed = 6});
  SimulatorSampler sampler(ep, 66);
  std::vector<std::string> ids;
  ids.reserve(ep.prompt_table.size());
  for (const auto& [id, z] : ep.prompt_table) ids.push_back(id);
  const auto found = discover(sampler, ids, {.max_samples = 3, .target = 0});
  const double per_bi = static_cast<double>(found.requests) / static_cast<double>(found.border_inputs.size());
  const double target = budget::cost_per_bi(3, 0.5);
  const double rel = std::abs(per_bi / target - 1.0);

  const bool ok = violations == 0 && std::abs(crossover - 0.75) <= 1e-6 && rel <= 0.05;
  return {ok, fmt("L3<L2 violations=%d/1000, crossover=%.9f, simulated %.3f req/BI vs %.3f (rel %.2f%%)", violations,
                  crossover, per_bi, target, 100 * rel)};
}

Verdict criterion7() {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> dim(2, 6), params(1, 4);
  std::normal_distribution<double> n01;
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const int d = dim(rng), q = params(rng);
    VectorXd z(d);
    for (int i = 0; i < d; ++i) z(i) = n01(rng);
    auto head = random_head(rng, z, q);
    head.temperature = 0.5 + std::abs(n01(rng));
    const MatrixXd fd = oracle::reduced_softmax_fd_jacobian(head.logits, *head.jacobian, head.temperature);
    worst = std::max(worst, (theory::reduced_output_jacobian(head) - fd).cwiseAbs().maxCoeff());
  }
  return {worst <= 1e-5, fmt("100 heads, max abs diff %.3e (tol 1e-5)", worst)};
}

Verdict criterion8() {
  const auto ep = sim::generate_endpoint({.prompt_count = 60, .vocab_size = 10, .border_fraction = 0.5, .seed = 8});
  const sim::BenchmarkProtocol proto{.prompt_count = 5, .n1 = 50, .n2 = 3, .temperature = 0.0};
  constexpr std::size_t trials = 1000;
  const auto collapse = sim::run_benchmark(ep, sim::PerturbationKind::support_collapse, {0.0, 1.0}, trials, proto, 81);
  const std::vector<double> sigmas{0.0625, 0.125, 0.25, 0.5, 1.0, 2.0, 4.0};
  const auto gauss = sim::run_benchmark(ep, sim::PerturbationKind::gaussian_logit_noise, sigmas, trials, proto, 82);

  bool monotone = true;
  std::string curve;
  for (std::size_t i = 0; i < gauss.size(); ++i) {
    if (i > 0 && gauss[i].auc < gauss[i - 1].auc - 0.03) monotone = false;
    curve += fmt("%s%.3f", i ? "," : "", gauss[i].auc);
  }
  const bool ok = collapse[1].auc >= 0.95 && std::abs(collapse[0].auc - 0.5) <= 0.05 && monotone;
  return {ok, fmt("collapse AUC=%.4f (>=0.95), null AUC=%.4f (0.5+-0.05), gaussian AUC by sigma [%s]%s",
                  collapse[1].auc, collapse[0].auc, curve.c_str(), monotone ? "" : " NOT MONOTONE")};
}

Verdict criterion9() {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> dim(2, 8), rep(1, 6);
  std::normal_distribution<double> n01;
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    const int d = dim(rng), m = rep(rng);
    std::uniform_int_distribution<int> kk(1, d);
    const int k = kk(rng);
    VectorXd r(m);
    for (int i = 0; i < m; ++i) r(i) = 3 * n01(rng);
    std::vector<int> perm(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) perm[static_cast<std::size_t>(i)] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    theory::MaximizerSet ms;
    for (int i = 0; i < k; ++i) ms.indices.push_back(perm[static_cast<std::size_t>(i)]);
    const MatrixXd j = theory::head_jacobian(r, d);
    const double tr = (j.transpose() * theory::sigma_uniform_on(ms, d) * j).trace();
    worst = std::max(worst, std::abs(tr - (r.squaredNorm() + 1.0) * (1.0 - 1.0 / k)));
  }
  return {worst <= 1e-9, fmt("200 draws, max abs error %.3e (tol 1e-9)", worst)};
}

// Chat-completions mock answering from a synthetic endpoint; the prompt text
// is the endpoint's prompt id.
class SimulatedApi {
 public:
  explicit SimulatedApi(sim::SyntheticEndpoint ep)
      : endpoint_(std::move(ep)),
        rng_(1010),
        server_([this](const nlohmann::json& req) { return answer(req); }) {}

  void replace(sim::SyntheticEndpoint ep) {
    std::lock_guard lock(mutex_);
    endpoint_ = std::move(ep);
  }
  std::string base_url() const { return server_.base_url(); }
  std::size_t requests() const { return server_.request_count(); }

 private:
  testing::MockReply answer(const nlohmann::json& req) {
    const std::string prompt = req.at("messages").at(0).at("content").get<std::string>();
    const double tau = req.value("temperature", 1.0);
    std::lock_guard lock(mutex_);
    if (!endpoint_.prompt_table.contains(prompt)) return {400, R"({"error":"unknown prompt"})"};
    const auto idx = sim::sample_token(endpoint_, prompt, tau, rng_);
    return {200, testing::completion_body(endpoint_.token_label(idx), 7, 1)};
  }

  std::mutex mutex_;
  sim::SyntheticEndpoint endpoint_;
  sim::Rng rng_;
  testing::MockOpenAIServer server_;
};

Verdict criterion10() {
  const auto ep = sim::generate_endpoint(
      {.prompt_count = 200, .vocab_size = 10, .border_fraction = 0.2, .tie_sizes = {3, 2}, .seed = 10});
  SimulatedApi api(ep);

  client::EndpointConfig cfg;
  cfg.name = "simulated";
  cfg.base_url = api.base_url();
  cfg.model_id = "sim-1";
  cfg.price_in = 0.38;
  cfg.price_out = 1.2;
  cfg.backoff_initial = std::chrono::milliseconds(1);
  client::ChatClient chat(cfg);
  ClientSampler sampler(chat);

  std::vector<std::string> candidates;
  for (const auto& [id, z] : ep.prompt_table) candidates.push_back(id);
  const auto found = discover(sampler, candidates, {.max_samples = 3, .target = 5});
  if (found.border_inputs.size() != 5) return {false, fmt("discovery found %zu border inputs", found.border_inputs.size())};
  const auto refs = collect_reference(sampler, found.border_inputs, 50);
  const std::uint64_t init_requests = found.requests + 50 * refs.size();

  Monitor monitor(refs, {}, {.detect = {.n2 = 3}});
  std::size_t events = 0;
  std::size_t event_index = 0;
  std::int64_t t_ms = 1'700'000'000'000;
  std::string series;
  for (int round = 0; round < 16; ++round) {
    if (round == 8) api.replace(sim::perturb(ep, {sim::PerturbationKind::support_collapse, 1.0, 1011}));
    t_ms += 3'600'000;
    const auto [outcome, fresh] = monitor.run_round(sampler, Timestamp(std::chrono::milliseconds(t_ms)));
    series += fmt("%s%.2f", round ? "," : "", outcome.aggregate_tv);
    events += fresh.size();
    if (!fresh.empty()) event_index = fresh.front().index;
  }

  const double yearly = estimate_yearly_cost(cfg, MonitoringProtocol{}, 7.0);
  const double init_cost = estimate_request_cost(cfg, init_requests, 7.0);
  const double rel = std::abs(yearly / 0.52 - 1.0);
  const bool ok = events == 1 && event_index == 8 && rel <= 0.10;
  return {ok, fmt("events=%zu at round %zu, TV series [%s], yearly cost $%.4f (0.52+-10%%), init %llu req $%.6f, "
                  "%zu HTTP requests",
                  events, event_index, series.c_str(), yearly, static_cast<unsigned long long>(init_requests),
                  init_cost, api.requests())};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "Type-I bound holds under H0 (Monte-Carlo)", 60, criterion1},
      {2, "collapse miss rate equals 2^-n1", 60, criterion2},
      {3, "Type-I + Type-II within [2^-(n+1), 8*2^-(n+1)]", 60, criterion3},
      {4, "SNR^2 direct vs reduced Fisher form", 5, criterion4},
      {5, "temperature phase transition", 5, criterion5},
      {6, "discovery budget model", 30, criterion6},
      {7, "reduced softmax Jacobian vs finite differences", 5, criterion7},
      {8, "simulated benchmark AUC", 300, criterion8},
      {9, "head Jacobian trace identity", 1, criterion9},
      {10, "mock endpoint round trip and yearly cost", 60, criterion10},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs < c.time_limit_s;
    const bool pass = v.pass && in_time;
    failures += pass ? 0 : 1;
    std::printf("%s [%d] %s: %s | %.2fs (limit %.0fs)%s\n", pass ? "PASS" : "FAIL", c.id, c.name.c_str(),
                v.detail.c_str(), secs, c.time_limit_s, in_time ? "" : " TOO SLOW");
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
