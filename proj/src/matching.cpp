#include "vocex/matching.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "vocex/hash.hpp"

namespace vocex {

namespace {

constexpr const char* kSentencePieceMarker = "\xe2\x96\x81";  // ▁ U+2581
constexpr const char* kByteBpeMarker = "\xc4\xa0";            // Ġ U+0120

std::string ascii_lower(const std::string& s) {
  std::string out = s;
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

// Packs up to three scalars (21 bits each) into an index key.
std::uint64_t gram_key(const std::vector<char32_t>& cps, std::size_t at, std::size_t n) {
  std::uint64_t key = 0;
  for (std::size_t i = 0; i < n; ++i) key = (key << 21) | (static_cast<std::uint64_t>(cps[at + i]) & 0x1fffff);
  return key;
}

}  // namespace

const char* marker_style_name(MarkerStyle m) {
  switch (m) {
    case MarkerStyle::None: return "none";
    case MarkerStyle::SentencePiece: return "sp";
    case MarkerStyle::ByteBpe: return "bpe";
  }
  return "?";
}

MarkerStyle marker_style_from_name(const std::string& name) {
  if (name == "none") return MarkerStyle::None;
  if (name == "sp") return MarkerStyle::SentencePiece;
  if (name == "bpe") return MarkerStyle::ByteBpe;
  throw IoError("unknown marker style \"" + name + "\" (expected none|sp|bpe)");
}

std::string normalize_token(const std::string& token, const NormalizationConfig& config) {
  std::string out = token;
  if (config.strip_marker == MarkerStyle::SentencePiece && out.rfind(kSentencePieceMarker, 0) == 0)
    out.erase(0, 3);
  else if (config.strip_marker == MarkerStyle::ByteBpe && out.rfind(kByteBpeMarker, 0) == 0)
    out.erase(0, 2);
  if (config.lowercase) out = ascii_lower(out);
  return out;
}

std::vector<char32_t> decode_utf8(const std::string& s) {
  std::vector<char32_t> out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const unsigned char b0 = static_cast<unsigned char>(s[i]);
    std::size_t len;
    char32_t cp;
    if (b0 < 0x80) {
      len = 1;
      cp = b0;
    } else if ((b0 >> 5) == 0x6) {
      len = 2;
      cp = b0 & 0x1f;
    } else if ((b0 >> 4) == 0xe) {
      len = 3;
      cp = b0 & 0x0f;
    } else if ((b0 >> 3) == 0x1e) {
      len = 4;
      cp = b0 & 0x07;
    } else {
      out.push_back(0xDC00 + b0);  // lone byte fallback
      ++i;
      continue;
    }
    if (i + len > s.size()) {
      out.push_back(0xDC00 + b0);
      ++i;
      continue;
    }
    bool ok = true;
    for (std::size_t k = 1; k < len; ++k) {
      const unsigned char bk = static_cast<unsigned char>(s[i + k]);
      if ((bk >> 6) != 0x2) {
        ok = false;
        break;
      }
      cp = (cp << 6) | (bk & 0x3f);
    }
    if (!ok) {
      out.push_back(0xDC00 + b0);
      ++i;
      continue;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

bool contains_scalar_substring(const std::vector<char32_t>& haystack,
                               const std::vector<char32_t>& needle) {
  if (needle.empty()) return false;
  if (needle.size() > haystack.size()) return false;
  for (std::size_t start = 0; start + needle.size() <= haystack.size(); ++start) {
    std::size_t k = 0;
    while (k < needle.size() && haystack[start + k] == needle[k]) ++k;
    if (k == needle.size()) return true;
  }
  return false;
}

std::vector<std::uint32_t> cap_word_ids(const std::vector<std::uint32_t>& word_ids,
                                        const WordVectorStore& store, std::size_t cap) {
  if (word_ids.size() <= cap) return word_ids;
  std::vector<std::uint32_t> kept = word_ids;
  std::sort(kept.begin(), kept.end(), [&](std::uint32_t a, std::uint32_t b) {
    return store.word(a) < store.word(b);
  });
  kept.resize(cap);
  std::sort(kept.begin(), kept.end());
  return kept;
}

MatchTable build_match_table(const Vocabulary& vocab, const WordVectorStore& store,
                             const NormalizationConfig& config) {
  // Inverted index over 1/2/3-scalar grams of the (case-folded) store words.
  std::vector<std::vector<char32_t>> word_cps(store.size());
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> idx1, idx2, idx3;
  for (std::uint32_t w = 0; w < store.size(); ++w) {
    const std::string& raw = store.word(w);
    word_cps[w] = decode_utf8(config.lowercase ? ascii_lower(raw) : raw);
    const auto& cps = word_cps[w];
    for (std::size_t n = 1; n <= 3; ++n) {
      if (cps.size() < n) break;
      auto& idx = (n == 1 ? idx1 : n == 2 ? idx2 : idx3);
      std::vector<std::uint64_t> seen;
      for (std::size_t at = 0; at + n <= cps.size(); ++at) seen.push_back(gram_key(cps, at, n));
      std::sort(seen.begin(), seen.end());
      seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
      for (std::uint64_t key : seen) idx[key].push_back(w);
    }
  }

  MatchTable table;
  table.vocab_id = vocab_content_id(vocab);
  table.store_id = store_content_id(store);
  table.config = config;
  table.entries.resize(vocab.size());

  for (std::size_t t = 0; t < vocab.size(); ++t) {
    const std::string norm = normalize_token(vocab.token(t), config);
    const auto cps = decode_utf8(norm);
    if (cps.empty()) continue;
    const std::size_t n = std::min<std::size_t>(cps.size(), 3);
    const auto& idx = (n == 1 ? idx1 : n == 2 ? idx2 : idx3);
    // Any word containing the token contains the token's leading n-gram.
    const auto it = idx.find(gram_key(cps, 0, n));
    if (it == idx.end()) continue;
    std::vector<std::uint32_t> matches;
    for (std::uint32_t w : it->second)
      if (contains_scalar_substring(word_cps[w], cps)) matches.push_back(w);
    table.entries[t] = cap_word_ids(matches, store, config.max_matches);
  }
  return table;
}

MatchStats match_stats(const MatchTable& table) {
  MatchStats stats;
  for (const auto& entry : table.entries) {
    if (entry.empty()) ++stats.unmatched;
    else ++stats.matched;
    ++stats.size_histogram[entry.size()];
  }
  return stats;
}

std::string vocab_content_id(const Vocabulary& vocab) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : vocab.tokens()) {
    h = fnv1a64(t, h);
    h = fnv1a64(std::string_view("\n", 1), h);
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string store_content_id(const WordVectorStore& store) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& w : store.words()) {
    h = fnv1a64(w, h);
    h = fnv1a64(std::string_view("\n", 1), h);
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void save_match_table(const MatchTable& table, const Vocabulary& vocab, const std::string& path) {
  if (table.size() != vocab.size())
    throw IoError(path + ": match table size does not match vocabulary");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << "# vocab=" << table.vocab_id << "\n# store=" << table.store_id
      << "\n# strip_marker=" << marker_style_name(table.config.strip_marker)
      << "\n# lowercase=" << (table.config.lowercase ? 1 : 0)
      << "\n# max_matches=" << table.config.max_matches << "\n";
  out << "token_id,token,word_ids\n";
  for (std::size_t t = 0; t < table.size(); ++t) {
    out << t << ',' << csv_escape(vocab.token(t)) << ',';
    const auto& entry = table.entries[t];
    for (std::size_t i = 0; i < entry.size(); ++i) {
      if (i) out << ';';
      out << entry[i];
    }
    out << '\n';
  }
  if (!out) throw IoError(path + ": write failed");
}

MatchTable load_match_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path + ": cannot open for reading");
  MatchTable table;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string key = line.substr(2, eq - 2);
      std::string value = line.substr(eq + 1);
      if (key == "vocab") table.vocab_id = value;
      else if (key == "store") table.store_id = value;
      else if (key == "strip_marker") table.config.strip_marker = marker_style_from_name(value);
      else if (key == "lowercase") table.config.lowercase = (value == "1");
      else if (key == "max_matches") table.config.max_matches = std::stoull(value);
      continue;
    }
    if (!header_seen) {
      if (line != "token_id,token,word_ids")
        throw IoError(path + ": unexpected header \"" + line + "\"");
      header_seen = true;
      continue;
    }
    const auto fields = csv_split_line(line);
    if (fields.size() != 3) throw IoError(path + ": malformed row \"" + line + "\"");
    const std::size_t id = std::stoull(fields[0]);
    if (id != table.entries.size())
      throw IoError(path + ": non-contiguous token id " + fields[0]);
    std::vector<std::uint32_t> entry;
    std::stringstream ss(fields[2]);
    std::string part;
    while (std::getline(ss, part, ';'))
      if (!part.empty()) entry.push_back(static_cast<std::uint32_t>(std::stoul(part)));
    table.entries.push_back(std::move(entry));
  }
  if (!header_seen) throw IoError(path + ": missing match table header");
  return table;
}

}  // namespace vocex
