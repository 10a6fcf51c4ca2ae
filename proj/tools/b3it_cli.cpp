// b3it: command-line front end for border-input change detection.
//
// Exit codes: 0 success / no change, 2 change detected, 1 operational error.

#include "b3it/budget.hpp"
#include "b3it/client.hpp"
#include "b3it/engine.hpp"
#include "b3it/persistence.hpp"
#include "b3it/prompts.hpp"
#include "b3it/simulator.hpp"
#include "b3it/theory.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

namespace {

using namespace b3it;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitChange = 2;

struct GlobalOptions {
  std::string config;
  std::string endpoint_name;
  std::string simulator;
  std::uint64_t seed = 0;
  double temperature = 0.0;
  std::uint64_t n1 = 50;
  std::uint64_t n2 = 3;
  std::size_t prompt_count = 5;
  std::string output;
};

client::EndpointConfig select_config(const GlobalOptions& g) {
  if (g.config.empty()) throw std::invalid_argument("--config is required for this command");
  const auto configs = client::load_endpoint_configs(g.config);
  if (configs.empty()) throw std::invalid_argument("no endpoints in " + g.config);
  if (g.endpoint_name.empty()) return configs.front();
  for (const auto& c : configs) {
    if (c.name == g.endpoint_name || c.model_id == g.endpoint_name) return c;
  }
  throw std::invalid_argument("endpoint '" + g.endpoint_name + "' not found in " + g.config);
}

/// Either a synthetic endpoint (--simulator) or a live one (--config).
struct SamplerHandle {
  std::unique_ptr<client::ChatClient> chat;
  std::unique_ptr<TokenSampler> sampler;
};

SamplerHandle make_sampler(const GlobalOptions& g) {
  SamplerHandle h;
  if (!g.simulator.empty()) {
    h.sampler = std::make_unique<SimulatorSampler>(sim::load_endpoint(g.simulator), g.seed, "simulator:" + g.simulator);
  } else {
    h.chat = std::make_unique<client::ChatClient>(select_config(g));
    h.sampler = std::make_unique<ClientSampler>(*h.chat);
  }
  return h;
}

/// Writes to --output, or stdout when it is empty.
void emit(const GlobalOptions& g, const std::string& text) {
  if (g.output.empty()) {
    std::cout << text;
  } else {
    persistence::atomic_write(g.output, text);
  }
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(std::stod(item));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Black-box change detection for LLM endpoints via border inputs"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--config", g.config, "Endpoint config file (JSON)");
  app.add_option("--endpoint", g.endpoint_name, "Endpoint name or model id within --config");
  app.add_option("--simulator", g.simulator, "Synthetic endpoint file used instead of a live endpoint");
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--temperature", g.temperature, "Sampling temperature")->check(CLI::NonNegativeNumber);
  app.add_option("--n1", g.n1, "Reference samples per border input")->check(CLI::PositiveNumber);
  app.add_option("--n2", g.n2, "Detection samples per border input")->check(CLI::PositiveNumber);
  app.add_option("--prompts", g.prompt_count, "Number of border inputs to use")->check(CLI::PositiveNumber);
  app.add_option("-o,--output", g.output, "Output path (stdout when omitted)");

  int exit_code = kExitOk;

  // candidates
  auto* cand = app.add_subcommand("candidates", "Rank minimal-length prompts from vocabulary files");
  std::vector<std::string> vocab_files;
  std::string exclusions;
  cand->add_option("vocab", vocab_files, "Vocabulary files, one decoded token per line")->required();
  cand->add_option("--exclude", exclusions, "File of prompts to drop (encode to more than 2 ids)");
  cand->callback([&] {
    prompts::RankingOptions opts;
    if (!exclusions.empty()) opts.excluded = prompts::read_exclusions(exclusions);
    const auto ranking = prompts::rank_candidates({vocab_files.begin(), vocab_files.end()}, opts);
    std::ostringstream out;
    prompts::write_candidates(out, ranking.prompts);
    emit(g, out.str());
    std::cerr << ranking.prompts.size() << " candidates; skipped " << ranking.invalid_utf8_lines
              << " invalid UTF-8 lines, " << ranking.special_or_empty_lines << " special/empty, "
              << ranking.excluded_by_encoder << " excluded\n";
  });

  // discover
  auto* disc = app.add_subcommand("discover", "Find border inputs among candidate prompts");
  std::string candidates_file;
  int max_samples = 3;
  std::size_t target = 0;
  bool shuffle = false;
  disc->add_option("--candidates", candidates_file, "Candidate prompt file")->required();
  disc->add_option("-m,--max-samples", max_samples, "Samples per candidate (m)")->check(CLI::Range(2, 1000));
  disc->add_option("--target", target, "Border inputs to find (default: --prompts)");
  disc->add_flag("--shuffle", shuffle, "Consume candidates in random order");
  disc->callback([&] {
    auto h = make_sampler(g);
    DiscoveryOptions opts{max_samples, target ? target : g.prompt_count, g.temperature, shuffle, g.seed};
    const auto result = discover(*h.sampler, prompts::read_candidates(candidates_file), opts);
    std::string out;
    for (const auto& bi : result.border_inputs) out += persistence::to_json(bi).dump() + '\n';
    emit(g, out);
    std::cerr << result.border_inputs.size() << " border inputs from " << result.candidates_examined
              << " candidates, " << result.requests << " requests, " << result.skipped.size() << " skipped\n";
    for (const auto& s : result.skipped) std::cerr << "  skipped '" << s.prompt << "': " << s.reason << '\n';
  });

  // reference
  auto* ref = app.add_subcommand("reference", "Collect reference distributions for border inputs");
  std::string bis_file;
  ref->add_option("--border-inputs", bis_file, "Border input file from `discover`")->required();
  ref->callback([&] {
    if (g.output.empty()) throw std::invalid_argument("reference requires --output");
    auto h = make_sampler(g);
    auto bis = persistence::read_border_inputs(bis_file);
    if (bis.size() > g.prompt_count) bis.resize(g.prompt_count);
    const auto records = collect_reference(*h.sampler, bis, g.n1, g.temperature);
    persistence::write_references(g.output, records);
    for (const auto& r : records) {
      if (!r.complete()) {
        std::cerr << "incomplete reference for '" << r.border_input.prompt << "' (" << r.reference.total() << "/"
                  << r.requested_samples << "): " << r.failure << '\n';
      }
    }
  });

  // detect
  auto* det = app.add_subcommand("detect", "Run one detection round against stored references");
  std::string refs_file;
  bool include_incomplete = false;
  det->add_option("--references", refs_file, "Reference file from `reference`")->required();
  det->add_flag("--include-incomplete", include_incomplete, "Use references with fewer than n1 samples");
  det->callback([&] {
    auto h = make_sampler(g);
    const auto records = persistence::read_references(refs_file);
    const auto outcome = detect(*h.sampler, records, {g.n2, g.temperature, include_incomplete, 1});
    emit(g, persistence::to_json(outcome).dump(2) + '\n');
    if (outcome.binary_decision) exit_code = kExitChange;
  });

  // monitor
  auto* mon = app.add_subcommand("monitor", "Periodic detection with the persistence rule");
  std::string history_file;
  int rounds = 1;
  double interval_seconds = 3600.0;
  double threshold = kDefaultChangeThreshold;
  std::size_t window = kDefaultPersistenceWindow;
  mon->add_option("--references", refs_file, "Reference file from `reference`")->required();
  mon->add_option("--history", history_file, "Append-only history log")->required();
  mon->add_option("--rounds", rounds, "Rounds to run in this invocation")->check(CLI::PositiveNumber);
  mon->add_option("--interval", interval_seconds, "Seconds between rounds")->check(CLI::NonNegativeNumber);
  mon->add_option("--threshold", threshold, "Mean-TV change threshold");
  mon->add_option("--window", window, "Rounds required on each side of a change")->check(CLI::PositiveNumber);
  mon->callback([&] {
    auto h = make_sampler(g);
    MonitorOptions opts;
    opts.detect = {g.n2, g.temperature, false, 1};
    opts.threshold = threshold;
    opts.window = window;
    opts.history_path = history_file;
    Monitor monitor(persistence::read_references(refs_file), persistence::read_history(history_file), opts);
    for (int r = 0; r < rounds; ++r) {
      if (r > 0) std::this_thread::sleep_for(std::chrono::duration<double>(interval_seconds));
      auto [outcome, events] = monitor.run_round(*h.sampler);
      std::cout << "round " << monitor.history().series.size() << ": mean TV " << outcome.aggregate_tv
                << (outcome.binary_decision ? " (support mismatch)" : "") << '\n';
      for (const auto& e : events) {
        std::cout << "change event at round " << e.index << ": mean TV " << e.pre_mean << " -> " << e.post_mean
                  << '\n';
        exit_code = kExitChange;
      }
    }
  });

  // simulate
  auto* simc = app.add_subcommand("simulate", "Generate a synthetic endpoint file");
  sim::GeneratorOptions gen;
  std::vector<long> tie_sizes{2};
  simc->add_option("--count", gen.prompt_count, "Number of prompts");
  simc->add_option("--vocab-size", gen.vocab_size, "Tokens per prompt")->check(CLI::Range(2, 1000));
  simc->add_option("--bi-fraction", gen.border_fraction, "Fraction of border inputs")->check(CLI::Range(0.0, 1.0));
  simc->add_option("--tie-sizes", tie_sizes, "Tie sizes assigned to border inputs in turn")->delimiter(',');
  simc->add_option("--step", gen.quantization_step, "Logit quantization step")->check(CLI::NonNegativeNumber);
  simc->callback([&] {
    gen.seed = g.seed;
    gen.tie_sizes.assign(tie_sizes.begin(), tie_sizes.end());
    std::ostringstream out;
    sim::write_endpoint(out, sim::generate_endpoint(gen));
    emit(g, out.str());
  });

  // bench
  auto* bench = app.add_subcommand("bench", "ROC AUC of the mean-TV statistic on a synthetic endpoint");
  std::string kind = "support_collapse";
  std::string magnitudes = "0,1";
  std::size_t trials = 500;
  unsigned threads = 0;
  bench->add_option("--kind", kind, "gaussian_logit_noise | support_collapse | logit_shift");
  bench->add_option("--magnitudes", magnitudes, "Comma-separated perturbation magnitudes");
  bench->add_option("--trials", trials, "Trials per magnitude")->check(CLI::PositiveNumber);
  bench->add_option("--threads", threads, "Worker threads (0 = all cores)");
  bench->callback([&] {
    if (g.simulator.empty()) throw std::invalid_argument("bench requires --simulator");
    const auto rows = sim::run_benchmark(sim::load_endpoint(g.simulator), sim::perturbation_kind_from_string(kind),
                                         parse_list(magnitudes), trials,
                                         {g.prompt_count, g.n1, g.n2, g.temperature}, g.seed, threads);
    std::ostringstream out;
    sim::write_benchmark_csv(out, rows);
    emit(g, out.str());
  });

  // theory-sweep
  auto* sweep = app.add_subcommand("theory-sweep", "SNR^2 of a softmax head over a temperature grid");
  std::string logits = "1,1,0";
  std::string direction;
  std::string taus;
  double tau_max = 1.0, tau_min = 1e-3;
  int points = 31;
  int params = 0;
  sweep->add_option("--logits", logits, "Comma-separated logits");
  sweep->add_option("--params", params, "Jacobian columns q (0 = identity Jacobian, q = d)");
  sweep->add_option("--direction", direction, "Comma-separated direction (normalized); random when omitted");
  sweep->add_option("--taus", taus, "Explicit comma-separated temperatures");
  sweep->add_option("--tau-max", tau_max)->check(CLI::PositiveNumber);
  sweep->add_option("--tau-min", tau_min)->check(CLI::PositiveNumber);
  sweep->add_option("--points", points)->check(CLI::Range(2, 100000));
  sweep->callback([&] {
    const auto z = parse_list(logits);
    theory::SoftmaxHead<double> head;
    head.logits = Eigen::Map<const Eigen::VectorXd>(z.data(), static_cast<Eigen::Index>(z.size()));
    std::mt19937_64 rng(g.seed);
    std::normal_distribution<double> normal;
    const auto d = head.logits.size();
    if (params <= 0) {
      head.jacobian = Eigen::MatrixXd::Identity(d, d);
    } else {
      head.jacobian = Eigen::MatrixXd::NullaryExpr(d, params, [&] { return normal(rng); });
    }
    Eigen::VectorXd h(head.jacobian->cols());
    if (direction.empty()) {
      for (Eigen::Index i = 0; i < h.size(); ++i) h(i) = normal(rng);
    } else {
      const auto v = parse_list(direction);
      if (static_cast<Eigen::Index>(v.size()) != h.size()) throw std::invalid_argument("direction size mismatch");
      h = Eigen::Map<const Eigen::VectorXd>(v.data(), h.size());
    }
    std::vector<double> grid = parse_list(taus);
    if (grid.empty()) {
      for (int i = 0; i < points; ++i) {
        grid.push_back(tau_max * std::pow(tau_min / tau_max, static_cast<double>(i) / (points - 1)));
      }
    }
    std::ostringstream out;
    theory::write_sweep_csv(out, theory::phase_transition_sweep(head, theory::Direction<double>::normalized(h), grid));
    emit(g, out.str());
  });

  // budget
  auto* bud = app.add_subcommand("budget", "Discovery cost per border input for stop-at-m rules");
  budget::BudgetModel model;
  bud->add_option("--fb", model.border_fraction, "Fraction of candidates that are border inputs")->required();
  bud->add_option("--m-max", model.max_samples_limit, "Largest m to consider")->check(CLI::Range(2, 64));
  bud->callback([&] {
    std::ostringstream out;
    out << "m,expected_samples,success_probability,cost_per_bi\n" << std::setprecision(10);
    for (const auto& r : budget::budget_table(model)) {
      out << r.m << ',' << r.expected_samples << ',' << r.success_probability << ',' << r.cost_per_bi << '\n';
    }
    emit(g, out.str());
    std::cerr << "optimal m = " << budget::optimal_m(model) << '\n';
  });

  // screen
  auto* scr = app.add_subcommand("screen", "Check endpoint eligibility (price, probe token usage)");
  std::string probe = "a";
  scr->add_option("--probe", probe, "Single-letter probe prompt");
  scr->callback([&] {
    client::ChatClient chat(select_config(g));
    const auto report = client::screen_endpoint(chat, probe);
    json j = {{"endpoint", chat.config().fingerprint()},
              {"eligible", report.eligible},
              {"cost_ok", report.cost_ok},
              {"not_free", report.not_free},
              {"probe_ok", report.probe_ok},
              {"reasons", report.reasons}};
    if (report.probe_usage) {
      j["probe_input_tokens"] = report.probe_usage->input_tokens;
      j["probe_output_tokens"] = report.probe_usage->output_tokens;
    }
    emit(g, j.dump(2) + '\n');
  });

  // cost
  auto* cost = app.add_subcommand("cost", "Yearly monitoring and initialization cost estimate");
  double price_in = -1.0, price_out = -1.0, rounds_per_day = 24.0, input_tokens = 7.0;
  std::uint64_t init_requests = 0;
  cost->add_option("--price-in", price_in, "Input price per million tokens (overrides --config)");
  cost->add_option("--price-out", price_out, "Output price per million tokens (overrides --config)");
  cost->add_option("--rounds-per-day", rounds_per_day, "Detection rounds per day")->check(CLI::NonNegativeNumber);
  cost->add_option("--input-tokens", input_tokens, "Billed input tokens per request")->check(CLI::NonNegativeNumber);
  cost->add_option("--init-requests", init_requests, "Discovery requests to include in the initialization cost");
  cost->callback([&] {
    client::EndpointConfig cfg;
    if (!g.config.empty()) cfg = select_config(g);
    if (price_in >= 0.0) cfg.price_in = price_in;
    if (price_out >= 0.0) cfg.price_out = price_out;
    const double yearly = estimate_yearly_cost(cfg, {g.prompt_count, g.n2, rounds_per_day}, input_tokens);
    const double init = estimate_request_cost(cfg, init_requests + g.prompt_count * g.n1, input_tokens);
    json j = {{"yearly_detection_cost", yearly},
              {"initialization_cost", init},
              {"requests_per_year", static_cast<double>(g.prompt_count * g.n2) * rounds_per_day * 365.0}};
    emit(g, j.dump(2) + '\n');
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return exit_code;
}
