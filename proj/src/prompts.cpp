#include "b3it/prompts.hpp"

#include <algorithm>
#include <fstream>
#include <future>
#include <map>
#include <set>

namespace b3it::prompts {

namespace {

constexpr std::string_view kSpaceG = "\xC4\xA0";          // U+0120
constexpr std::string_view kLowerBlock = "\xE2\x96\x81";  // U+2581

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
}

bool is_hex(char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f') || (c >= 'A' && c <= 'F');
}

struct FileTokens {
  std::set<std::string> prompts;
  std::size_t invalid_utf8 = 0;
  std::size_t skipped = 0;
};

FileTokens load_vocab_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw VocabFileError("cannot read vocabulary file: " + path.string());
  FileTokens out;
  std::string line;
  while (std::getline(in, line)) {
    if (!is_valid_utf8(line)) {
      ++out.invalid_utf8;
      continue;
    }
    if (auto norm = normalize_token(line)) {
      out.prompts.insert(std::move(*norm));
    } else {
      ++out.skipped;
    }
  }
  if (in.bad()) throw VocabFileError("error while reading vocabulary file: " + path.string());
  return out;
}

}  // namespace

bool is_special_token(std::string_view raw) {
  if (raw.size() >= 4 && raw.starts_with("<|") && raw.ends_with("|>")) return true;
  static const std::set<std::string_view> named = {"<s>",   "</s>",    "<unk>",  "<pad>", "<mask>",
                                                   "<bos>", "<eos>",   "<cls>",  "<sep>", "<start_of_turn>",
                                                   "<end_of_turn>"};
  if (named.contains(raw)) return true;
  if (raw.size() == 6 && raw.starts_with("<0x") && raw.back() == '>' && is_hex(raw[3]) && is_hex(raw[4])) {
    return true;
  }
  if (raw.size() >= 3 && raw.front() == '[' && raw.back() == ']') {
    const auto inner = raw.substr(1, raw.size() - 2);
    return std::all_of(inner.begin(), inner.end(),
                       [](char c) { return (c >= 'A' && c <= 'Z') || c == '_' || (c >= '0' && c <= '9'); });
  }
  return false;
}

bool is_valid_utf8(std::string_view bytes) {
  std::size_t i = 0;
  const auto n = bytes.size();
  while (i < n) {
    const auto c = static_cast<unsigned char>(bytes[i]);
    std::size_t len;
    std::uint32_t cp;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + len > n) return false;
    for (std::size_t k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(bytes[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // overlong forms, surrogates, out of range
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000)) return false;
    if (cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
    i += len;
  }
  return true;
}

std::optional<std::string> normalize_token(std::string_view raw) {
  if (raw.empty() || is_special_token(raw)) return std::nullopt;
  std::string s(raw);
  replace_all(s, kSpaceG, " ");
  replace_all(s, kLowerBlock, " ");
  if (s.empty()) return std::nullopt;
  return s;
}

CandidateRanking rank_candidates(const std::vector<std::filesystem::path>& vocab_files,
                                 const RankingOptions& options) {
  if (vocab_files.empty()) throw std::invalid_argument("rank_candidates: no vocabulary files given");

  std::vector<std::future<FileTokens>> loads;
  loads.reserve(vocab_files.size());
  for (const auto& path : vocab_files) {
    loads.push_back(std::async(std::launch::async, load_vocab_file, path));
  }

  CandidateRanking ranking;
  std::map<std::string, int> membership;
  for (auto& f : loads) {
    FileTokens tokens = f.get();
    ranking.invalid_utf8_lines += tokens.invalid_utf8;
    ranking.special_or_empty_lines += tokens.skipped;
    for (const auto& p : tokens.prompts) ++membership[p];
  }

  for (auto& [text, count] : membership) {
    if (options.excluded.contains(text) ||
        (options.encoder && options.encoder(text) > options.max_token_ids)) {
      ++ranking.excluded_by_encoder;
      continue;
    }
    ranking.prompts.push_back({text, count, true});
  }
  // membership is already lexicographic, so a stable sort keeps that order within ties
  std::stable_sort(ranking.prompts.begin(), ranking.prompts.end(),
                   [](const CandidatePrompt& a, const CandidatePrompt& b) { return a.source_count > b.source_count; });
  return ranking;
}

void write_candidates(std::ostream& os, const std::vector<CandidatePrompt>& prompts) {
  for (const auto& p : prompts) os << p.text << '\n';
}

std::vector<std::string> read_candidates(std::istream& is) {
  std::vector<std::string> out;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

std::vector<std::string> read_candidates(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw VocabFileError("cannot read candidate file: " + path.string());
  return read_candidates(in);
}

std::unordered_set<std::string> read_exclusions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw VocabFileError("cannot read exclusion file: " + path.string());
  std::unordered_set<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.insert(line);
  }
  return out;
}

}  // namespace b3it::prompts
