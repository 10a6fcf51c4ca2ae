#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace b3it::sim {

using Logits = Eigen::VectorXd;
using Index = Eigen::Index;
using Rng = std::mt19937_64;

/// Desk-scale stand-in for a deployed model: per-prompt logit vectors over a
/// small vocabulary, rounded to a grid before sampling.
struct SyntheticEndpoint {
  std::map<std::string, Logits> prompt_table;
  /// Token text for each vocabulary index; "t<i>" when absent.
  std::vector<std::string> token_labels;
  /// Requested temperatures below this are raised to it; 0 keeps T=0 as
  /// uniform sampling over the argmax set.
  double temperature_floor = 0.0;
  /// Logit rounding grid; 0 disables rounding.
  double quantization_step = 0.0;
  /// Std-dev of i.i.d. per-request logit jitter (simulated traffic noise).
  double request_noise = 0.0;
  std::uint64_t rng_seed = 0;
  /// Hard-coded T=0 answers for specific prompts (index into the vocabulary).
  std::map<std::string, Index> zero_temperature_overrides;

  Index vocab_size() const;
  std::string token_label(Index i) const;
  /// Stored logits after rounding, without request jitter.
  Logits effective_logits(const std::string& prompt_id) const;
  const Logits& logits(const std::string& prompt_id) const;
  void validate() const;

  friend bool operator==(const SyntheticEndpoint&, const SyntheticEndpoint&) = default;
};

class UnknownPromptError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Round every entry to the nearest multiple of step, ties to even.
Logits quantize_logits(const Logits& z, double step);

/// One output token index. T=0 (after the floor) samples uniformly over the
/// maximizers of the rounded logits; T>0 draws from their softmax.
Index sample_token(const SyntheticEndpoint& endpoint, const std::string& prompt_id, double temperature, Rng& rng);

enum class PerturbationKind { gaussian_logit_noise, support_collapse, logit_shift };

std::string to_string(PerturbationKind kind);
PerturbationKind perturbation_kind_from_string(const std::string& name);

struct Perturbation {
  PerturbationKind kind = PerturbationKind::gaussian_logit_noise;
  double magnitude = 0.0;
  std::uint64_t rng_seed = 0;
};

/// gaussian_logit_noise: adds N(0, sigma^2) to every logit.
/// support_collapse: on every prompt with a tie at the top, raises one tied
///   logit by the magnitude (at least one rounding step) so k becomes 1.
/// logit_shift: adds the magnitude to one random index per prompt.
/// Magnitude 0 returns an identical endpoint.
SyntheticEndpoint perturb(const SyntheticEndpoint& endpoint, const Perturbation& perturbation);

/// Prompt ids whose rounded logits have k >= 2 maximizers, in id order.
std::vector<std::string> border_prompts(const SyntheticEndpoint& endpoint);

struct GeneratorOptions {
  std::size_t prompt_count = 200;
  Index vocab_size = 10;
  double border_fraction = 0.5;
  /// Tie sizes assigned to border prompts in turn.
  std::vector<Index> tie_sizes = {2};
  double quantization_step = 0.5;
  std::uint64_t seed = 0;
};

/// Random endpoint where each prompt is a border input with probability
/// border_fraction. Raw logits carry sub-step jitter so that the ties only
/// appear after rounding (or are exact when the step is 0).
SyntheticEndpoint generate_endpoint(const GeneratorOptions& options);

struct BenchmarkProtocol {
  std::size_t prompt_count = 5;
  std::uint64_t n1 = 50;
  std::uint64_t n2 = 3;
  double temperature = 0.0;
};

struct BenchmarkRow {
  double magnitude;
  double auc;
  std::size_t trials;
  std::uint64_t seed;

  friend bool operator==(const BenchmarkRow&, const BenchmarkRow&) = default;
};

class InsufficientBorderInputs : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// For each magnitude: `trials` negative rounds (unchanged endpoint) and
/// `trials` positive rounds (freshly perturbed endpoint), each scored by
/// the mean per-prompt TV against an n1-sample reference; returns the ROC
/// AUC per magnitude. Deterministic in `seed` regardless of thread count.
std::vector<BenchmarkRow> run_benchmark(const SyntheticEndpoint& base, PerturbationKind kind,
                                        const std::vector<double>& magnitudes, std::size_t trials,
                                        const BenchmarkProtocol& protocol, std::uint64_t seed,
                                        unsigned threads = 0);

void write_benchmark_csv(std::ostream& os, const std::vector<BenchmarkRow>& rows);

/// Tab-separated endpoint definition: settings lines, optional `tokens` and
/// `override` lines, then one `prompt<TAB>id<TAB>z0,z1,...` line per prompt.
void write_endpoint(std::ostream& os, const SyntheticEndpoint& endpoint);
SyntheticEndpoint read_endpoint(std::istream& is);
SyntheticEndpoint load_endpoint(const std::filesystem::path& path);
void save_endpoint(const std::filesystem::path& path, const SyntheticEndpoint& endpoint);

/// splitmix64 step, used to derive independent per-trial seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace b3it::sim
