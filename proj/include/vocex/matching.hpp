#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vocex/corpus_io.hpp"

namespace vocex {

enum class MarkerStyle : std::uint8_t { None, SentencePiece, ByteBpe };

const char* marker_style_name(MarkerStyle m);
MarkerStyle marker_style_from_name(const std::string& name);

struct NormalizationConfig {
  MarkerStyle strip_marker = MarkerStyle::None;
  bool lowercase = false;  // ASCII case folding, applied to both sides of the comparison
  std::size_t max_matches = 256;
};

// Strips one leading word-boundary marker ("▁" for SentencePiece vocabs,
// "Ġ" for byte-BPE vocabs) and optionally lowercases.
std::string normalize_token(const std::string& token, const NormalizationConfig& config);

// Token id -> sorted word ids whose word contains the normalized token as a
// contiguous substring (unicode scalars). Over-matching tokens keep the
// lexicographically smallest max_matches words.
struct MatchTable {
  std::vector<std::vector<std::uint32_t>> entries;
  std::string vocab_id;  // fnv1a64 of the token list
  std::string store_id;  // fnv1a64 of the word list
  NormalizationConfig config;

  std::size_t size() const { return entries.size(); }
};

struct MatchStats {
  std::size_t matched = 0;
  std::size_t unmatched = 0;
  std::map<std::size_t, std::size_t> size_histogram;  // match-set size -> token count
};

MatchTable build_match_table(const Vocabulary& vocab, const WordVectorStore& store,
                             const NormalizationConfig& config = {});

MatchStats match_stats(const MatchTable& table);

// Deterministic cap shared by table construction, dataset building and
// prediction: keep the cap lexicographically smallest words, return ids sorted.
std::vector<std::uint32_t> cap_word_ids(const std::vector<std::uint32_t>& word_ids,
                                        const WordVectorStore& store, std::size_t cap);

// CSV: token_id,token,word_ids (semicolon-joined), preceded by provenance
// comment lines.
void save_match_table(const MatchTable& table, const Vocabulary& vocab, const std::string& path);
MatchTable load_match_table(const std::string& path);

// Content hashes used as provenance ids.
std::string vocab_content_id(const Vocabulary& vocab);
std::string store_content_id(const WordVectorStore& store);

// Decodes UTF-8 into unicode scalars; bytes that do not form a valid sequence
// are passed through one byte per scalar so arbitrary vocab files still load.
std::vector<char32_t> decode_utf8(const std::string& s);

// Naive contiguous-substring check on unicode scalars. Exposed because the
// matching oracle in the tests re-checks table soundness with it.
bool contains_scalar_substring(const std::vector<char32_t>& haystack,
                               const std::vector<char32_t>& needle);

}  // namespace vocex
