#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace b3it::prompts {

struct CandidatePrompt {
  std::string text;
  int source_count = 0;  // number of vocabulary files containing it
  bool normalized = true;

  friend bool operator==(const CandidatePrompt&, const CandidatePrompt&) = default;
};

/// Special/control vocabulary entries: <|...|>, <s>, </s>, <unk>, <pad>,
/// <mask>, byte-fallback <0xNN>, and [UPPER_CASE] markers.
bool is_special_token(std::string_view raw);

bool is_valid_utf8(std::string_view bytes);

/// Maps the BPE/SentencePiece space markers U+0120 and U+2581 to ' '.
/// Returns nullopt for special entries and entries empty after mapping.
std::optional<std::string> normalize_token(std::string_view raw);

/// Number of token ids a prompt encodes to under some external tokenizer.
using TokenCounter = std::function<std::size_t(std::string_view)>;

struct RankingOptions {
  /// When set, prompts encoding to more than max_token_ids are dropped.
  TokenCounter encoder;
  std::size_t max_token_ids = 2;
  /// Precomputed exclusion list (same role as the encoder).
  std::unordered_set<std::string> excluded;
};

struct CandidateRanking {
  std::vector<CandidatePrompt> prompts;
  std::size_t invalid_utf8_lines = 0;
  std::size_t special_or_empty_lines = 0;
  std::size_t excluded_by_encoder = 0;
};

/// Thrown when a vocabulary file cannot be read; what() names the file.
class VocabFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Loads one-token-per-line UTF-8 files and ranks the deduplicated,
/// normalized prompts by how many files contain them (descending), then
/// lexicographically.
CandidateRanking rank_candidates(const std::vector<std::filesystem::path>& vocab_files,
                                 const RankingOptions& options = {});

/// One prompt per line, spaces preserved.
void write_candidates(std::ostream& os, const std::vector<CandidatePrompt>& prompts);
std::vector<std::string> read_candidates(std::istream& is);
std::vector<std::string> read_candidates(const std::filesystem::path& path);

/// One excluded prompt per line.
std::unordered_set<std::string> read_exclusions(const std::filesystem::path& path);

}  // namespace b3it::prompts
