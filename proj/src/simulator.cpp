#include "b3it/simulator.hpp"

#include "b3it/stats.hpp"
#include "b3it/theory.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

namespace b3it::sim {

namespace {

double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

Index uniform_index(Rng& rng, Index n) {
  return std::min<Index>(n - 1, static_cast<Index>(uniform01(rng) * static_cast<double>(n)));
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

Logits rounded(const Logits& z, double step) { return step > 0.0 ? quantize_logits(z, step) : z; }

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(seed) ^ splitmix64(a + 0x632BE59BD9B4E019ULL) ^ splitmix64(b + 0x85157AF5ULL));
}

Index SyntheticEndpoint::vocab_size() const {
  return prompt_table.empty() ? static_cast<Index>(token_labels.size()) : prompt_table.begin()->second.size();
}

std::string SyntheticEndpoint::token_label(Index i) const {
  if (i >= 0 && static_cast<std::size_t>(i) < token_labels.size()) return token_labels[static_cast<std::size_t>(i)];
  return "t" + std::to_string(i);
}

const Logits& SyntheticEndpoint::logits(const std::string& prompt_id) const {
  auto it = prompt_table.find(prompt_id);
  if (it == prompt_table.end()) throw UnknownPromptError("unknown prompt id: " + prompt_id);
  return it->second;
}

Logits SyntheticEndpoint::effective_logits(const std::string& prompt_id) const {
  return rounded(logits(prompt_id), quantization_step);
}

void SyntheticEndpoint::validate() const {
  if (!(quantization_step >= 0.0)) throw std::invalid_argument("quantization step must be >= 0");
  if (!(temperature_floor >= 0.0)) throw std::invalid_argument("temperature floor must be >= 0");
  if (!(request_noise >= 0.0)) throw std::invalid_argument("request noise must be >= 0");
  Index d = -1;
  for (const auto& [id, z] : prompt_table) {
    if (z.size() < 2) throw std::invalid_argument("prompt '" + id + "' has fewer than 2 logits");
    if (d >= 0 && z.size() != d) throw std::invalid_argument("prompt '" + id + "' has a different vocabulary size");
    if (!z.allFinite()) throw std::invalid_argument("prompt '" + id + "' has non-finite logits");
    d = z.size();
  }
  if (!token_labels.empty() && d >= 0 && static_cast<Index>(token_labels.size()) != d) {
    throw std::invalid_argument("token label count does not match the vocabulary size");
  }
  for (const auto& [id, idx] : zero_temperature_overrides) {
    if (!prompt_table.contains(id)) throw std::invalid_argument("override for unknown prompt '" + id + "'");
    if (idx < 0 || idx >= d) throw std::invalid_argument("override index out of range for '" + id + "'");
  }
}

Logits quantize_logits(const Logits& z, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("quantize_logits: step must be > 0");
  // nearbyint honours the default round-half-to-even mode
  return z.unaryExpr([step](double v) { return std::nearbyint(v / step) * step; });
}

Index sample_token(const SyntheticEndpoint& endpoint, const std::string& prompt_id, double temperature, Rng& rng) {
  if (!(temperature >= 0.0)) throw std::invalid_argument("sample_token: temperature must be >= 0");
  const Logits& raw = endpoint.logits(prompt_id);
  const double tau = std::max(temperature, endpoint.temperature_floor);

  if (tau == 0.0) {
    if (auto it = endpoint.zero_temperature_overrides.find(prompt_id);
        it != endpoint.zero_temperature_overrides.end()) {
      return it->second;
    }
  }

  Logits z = raw;
  if (endpoint.request_noise > 0.0) {
    std::normal_distribution<double> jitter(0.0, endpoint.request_noise);
    for (Index i = 0; i < z.size(); ++i) z(i) += jitter(rng);
  }
  z = rounded(z, endpoint.quantization_step);

  if (tau == 0.0) {
    const auto top = theory::maximizer_set(z);
    return top.indices[static_cast<std::size_t>(uniform_index(rng, top.k()))];
  }
  const Logits p = theory::softmax<double>(z, tau);
  const double u = uniform01(rng);
  double acc = 0.0;
  for (Index i = 0; i < p.size(); ++i) {
    acc += p(i);
    if (u < acc) return i;
  }
  // rounding left u beyond the cumulative sum; take the last positive entry
  for (Index i = p.size() - 1; i > 0; --i) {
    if (p(i) > 0.0) return i;
  }
  return 0;
}

std::string to_string(PerturbationKind kind) {
  switch (kind) {
    case PerturbationKind::gaussian_logit_noise: return "gaussian_logit_noise";
    case PerturbationKind::support_collapse: return "support_collapse";
    case PerturbationKind::logit_shift: return "logit_shift";
  }
  return "unknown";
}

PerturbationKind perturbation_kind_from_string(const std::string& name) {
  if (name == "gaussian_logit_noise" || name == "gaussian") return PerturbationKind::gaussian_logit_noise;
  if (name == "support_collapse" || name == "collapse") return PerturbationKind::support_collapse;
  if (name == "logit_shift" || name == "shift") return PerturbationKind::logit_shift;
  throw std::invalid_argument("unknown perturbation kind: " + name);
}

SyntheticEndpoint perturb(const SyntheticEndpoint& endpoint, const Perturbation& perturbation) {
  if (!(perturbation.magnitude >= 0.0)) throw std::invalid_argument("perturb: magnitude must be >= 0");
  SyntheticEndpoint out = endpoint;
  if (perturbation.magnitude == 0.0) return out;

  Rng rng(perturbation.rng_seed);
  const double step = endpoint.quantization_step;
  switch (perturbation.kind) {
    case PerturbationKind::gaussian_logit_noise: {
      std::normal_distribution<double> noise(0.0, perturbation.magnitude);
      for (auto& [id, z] : out.prompt_table) {
        for (Index i = 0; i < z.size(); ++i) z(i) += noise(rng);
      }
      break;
    }
    case PerturbationKind::support_collapse: {
      // an offset below half a step would be rounded away again
      const double offset = step > 0.0 ? std::max(1.0, std::ceil(perturbation.magnitude / step)) * step
                                       : perturbation.magnitude;
      for (auto& [id, z] : out.prompt_table) {
        const Logits q = rounded(z, step);
        const auto top = theory::maximizer_set(q);
        if (top.k() < 2) continue;
        const Index winner = top.indices[static_cast<std::size_t>(uniform_index(rng, top.k()))];
        z = q;
        z(winner) += offset;
      }
      break;
    }
    case PerturbationKind::logit_shift: {
      for (auto& [id, z] : out.prompt_table) {
        z(uniform_index(rng, z.size())) += perturbation.magnitude;
      }
      break;
    }
  }
  return out;
}

std::vector<std::string> border_prompts(const SyntheticEndpoint& endpoint) {
  std::vector<std::string> ids;
  for (const auto& [id, z] : endpoint.prompt_table) {
    if (theory::maximizer_set(rounded(z, endpoint.quantization_step)).k() >= 2) ids.push_back(id);
  }
  return ids;
}

SyntheticEndpoint generate_endpoint(const GeneratorOptions& options) {
  if (options.vocab_size < 2) throw std::invalid_argument("generate_endpoint: vocabulary size must be >= 2");
  if (!(options.border_fraction >= 0.0 && options.border_fraction <= 1.0)) {
    throw std::invalid_argument("generate_endpoint: border fraction must lie in [0, 1]");
  }
  if (options.tie_sizes.empty()) throw std::invalid_argument("generate_endpoint: no tie sizes given");
  for (Index k : options.tie_sizes) {
    if (k < 2 || k > options.vocab_size) throw std::invalid_argument("generate_endpoint: tie size out of range");
  }

  SyntheticEndpoint ep;
  ep.quantization_step = options.quantization_step;
  ep.rng_seed = options.seed;
  Rng rng(options.seed);
  const double step = options.quantization_step > 0.0 ? options.quantization_step : 0.5;
  const int width = std::max<int>(5, static_cast<int>(std::to_string(options.prompt_count).size()));
  std::size_t border_count = 0;

  for (std::size_t n = 0; n < options.prompt_count; ++n) {
    std::ostringstream id;
    id << 'p' << std::setw(width) << std::setfill('0') << n;

    const bool border = uniform01(rng) < options.border_fraction;
    const Index ties = border ? options.tie_sizes[border_count++ % options.tie_sizes.size()] : 1;

    // random permutation of the vocabulary; the first `ties` entries share the top
    std::vector<Index> order(static_cast<std::size_t>(options.vocab_size));
    for (Index i = 0; i < options.vocab_size; ++i) order[static_cast<std::size_t>(i)] = i;
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      std::swap(order[i], order[static_cast<std::size_t>(uniform_index(rng, static_cast<Index>(i + 1)))]);
    }

    const double top = std::round(4.0 * uniform01(rng)) * step;
    Logits z(options.vocab_size);
    for (std::size_t r = 0; r < order.size(); ++r) {
      const double grid = r < static_cast<std::size_t>(ties)
                              ? top
                              : top - step * static_cast<double>(1 + uniform_index(rng, 8));
      // raw values sit within 0.2 steps of their grid point when rounding is on
      const double jitter = options.quantization_step > 0.0 ? (uniform01(rng) - 0.5) * 0.4 * step : 0.0;
      z(order[r]) = grid + jitter;
    }
    ep.prompt_table.emplace(id.str(), std::move(z));
  }
  return ep;
}

namespace {

struct TrialScores {
  double negative;
  double positive;
};

TrialScores run_trial(const SyntheticEndpoint& base, const std::vector<std::string>& prompts, PerturbationKind kind,
                      double magnitude, const BenchmarkProtocol& protocol, std::uint64_t trial_seed) {
  Rng rng(trial_seed);
  const SyntheticEndpoint changed = perturb(base, {kind, magnitude, mix_seed(trial_seed, 0xC0FFEE)});

  auto draw = [&](const SyntheticEndpoint& ep, const std::string& id, std::uint64_t n) {
    EmpiricalDistribution dist;
    for (std::uint64_t s = 0; s < n; ++s) dist.add(ep.token_label(sample_token(ep, id, protocol.temperature, rng)));
    return dist;
  };

  std::vector<double> neg_tv, pos_tv;
  neg_tv.reserve(prompts.size());
  pos_tv.reserve(prompts.size());
  for (const auto& id : prompts) {
    const EmpiricalDistribution reference = draw(base, id, protocol.n1);
    neg_tv.push_back(tv_distance(reference, draw(base, id, protocol.n2)));
    pos_tv.push_back(tv_distance(reference, draw(changed, id, protocol.n2)));
  }
  return {aggregate_statistic(neg_tv), aggregate_statistic(pos_tv)};
}

}  // namespace

std::vector<BenchmarkRow> run_benchmark(const SyntheticEndpoint& base, PerturbationKind kind,
                                        const std::vector<double>& magnitudes, std::size_t trials,
                                        const BenchmarkProtocol& protocol, std::uint64_t seed, unsigned threads) {
  base.validate();
  if (trials == 0) throw std::invalid_argument("run_benchmark: trials must be >= 1");
  if (protocol.prompt_count == 0 || protocol.n1 == 0 || protocol.n2 == 0) {
    throw std::invalid_argument("run_benchmark: prompt count, n1 and n2 must be >= 1");
  }
  std::vector<std::string> prompts = border_prompts(base);
  if (prompts.size() < protocol.prompt_count) {
    throw InsufficientBorderInputs("run_benchmark: endpoint has " + std::to_string(prompts.size()) +
                                   " border inputs, protocol needs " + std::to_string(protocol.prompt_count));
  }
  prompts.resize(protocol.prompt_count);

  // only the monitored prompts matter; perturbing the rest would just cost time
  SyntheticEndpoint monitored = base;
  monitored.prompt_table.clear();
  monitored.zero_temperature_overrides.clear();
  for (const auto& id : prompts) {
    monitored.prompt_table.emplace(id, base.prompt_table.at(id));
    if (auto it = base.zero_temperature_overrides.find(id); it != base.zero_temperature_overrides.end()) {
      monitored.zero_temperature_overrides.insert(*it);
    }
  }

  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, trials));

  std::vector<BenchmarkRow> rows;
  rows.reserve(magnitudes.size());
  for (std::size_t j = 0; j < magnitudes.size(); ++j) {
    const double magnitude = magnitudes[j];
    if (!(magnitude >= 0.0)) throw std::invalid_argument("run_benchmark: magnitudes must be >= 0");
    std::vector<TrialScores> scores(trials);
    auto work = [&](std::size_t begin, std::size_t end) {
      for (std::size_t t = begin; t < end; ++t) {
        scores[t] = run_trial(monitored, prompts, kind, magnitude, protocol, mix_seed(seed, j, t));
      }
    };
    if (threads == 1) {
      work(0, trials);
    } else {
      std::vector<std::jthread> pool;
      const std::size_t chunk = (trials + threads - 1) / threads;
      for (std::size_t begin = 0; begin < trials; begin += chunk) {
        pool.emplace_back(work, begin, std::min(trials, begin + chunk));
      }
    }
    std::vector<double> pos, neg;
    pos.reserve(trials);
    neg.reserve(trials);
    for (const auto& s : scores) {
      pos.push_back(s.positive);
      neg.push_back(s.negative);
    }
    rows.push_back({magnitude, roc_auc(pos, neg), trials, seed});
  }
  return rows;
}

void write_benchmark_csv(std::ostream& os, const std::vector<BenchmarkRow>& rows) {
  const auto old = os.precision(17);
  os << "magnitude,auc,trials,seed\n";
  for (const auto& r : rows) os << r.magnitude << ',' << r.auc << ',' << r.trials << ',' << r.seed << '\n';
  os.precision(old);
}

void write_endpoint(std::ostream& os, const SyntheticEndpoint& ep) {
  const auto old = os.precision(17);
  os << "# synthetic endpoint v1\n";
  os << "quantization_step\t" << ep.quantization_step << '\n';
  os << "temperature_floor\t" << ep.temperature_floor << '\n';
  os << "request_noise\t" << ep.request_noise << '\n';
  os << "seed\t" << ep.rng_seed << '\n';
  if (!ep.token_labels.empty()) {
    os << "tokens";
    for (const auto& t : ep.token_labels) os << '\t' << t;
    os << '\n';
  }
  for (const auto& [id, idx] : ep.zero_temperature_overrides) os << "override\t" << id << '\t' << idx << '\n';
  for (const auto& [id, z] : ep.prompt_table) {
    os << "prompt\t" << id << '\t';
    for (Index i = 0; i < z.size(); ++i) os << (i ? "," : "") << z(i);
    os << '\n';
  }
  os.precision(old);
}

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, sep)) parts.push_back(cur);
  if (!line.empty() && line.back() == sep) parts.emplace_back();
  return parts;
}

double parse_double(const std::string& s, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("endpoint file line " + std::to_string(line_no) + ": bad number '" + s + "'");
  }
}

}  // namespace

SyntheticEndpoint read_endpoint(std::istream& is) {
  SyntheticEndpoint ep;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto f = split(line, '\t');
    const std::string& key = f[0];
    auto need = [&](std::size_t n) {
      if (f.size() != n) {
        throw std::invalid_argument("endpoint file line " + std::to_string(line_no) + ": expected " +
                                    std::to_string(n) + " fields for '" + key + "'");
      }
    };
    if (key == "quantization_step") {
      need(2);
      ep.quantization_step = parse_double(f[1], line_no);
    } else if (key == "temperature_floor") {
      need(2);
      ep.temperature_floor = parse_double(f[1], line_no);
    } else if (key == "request_noise") {
      need(2);
      ep.request_noise = parse_double(f[1], line_no);
    } else if (key == "seed") {
      need(2);
      ep.rng_seed = std::stoull(f[1]);
    } else if (key == "tokens") {
      ep.token_labels.assign(f.begin() + 1, f.end());
    } else if (key == "override") {
      need(3);
      ep.zero_temperature_overrides[f[1]] = static_cast<Index>(std::stoll(f[2]));
    } else if (key == "prompt") {
      need(3);
      const auto values = split(f[2], ',');
      Logits z(static_cast<Index>(values.size()));
      for (std::size_t i = 0; i < values.size(); ++i) z(static_cast<Index>(i)) = parse_double(values[i], line_no);
      if (!ep.prompt_table.emplace(f[1], std::move(z)).second) {
        throw std::invalid_argument("endpoint file line " + std::to_string(line_no) + ": duplicate prompt '" +
                                    f[1] + "'");
      }
    } else {
      throw std::invalid_argument("endpoint file line " + std::to_string(line_no) + ": unknown record '" + key +
                                  "'");
    }
  }
  ep.validate();
  return ep;
}

SyntheticEndpoint load_endpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read endpoint file: " + path.string());
  return read_endpoint(in);
}

void save_endpoint(const std::filesystem::path& path, const SyntheticEndpoint& endpoint) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write endpoint file: " + path.string());
  write_endpoint(out, endpoint);
}

}  // namespace b3it::sim
