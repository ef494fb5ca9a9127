#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "vocex/matrix.hpp"

namespace vocex {

// All file-format and validation failures surface as this.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Ordered token inventory of a tokenizer. IDs are dense, 0-based, in file order.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::optional<std::size_t> id_of(const std::string& token) const;
  bool contains(const std::string& token) const { return id_of(token).has_value(); }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

// External multilingual word -> vector map, file order preserved.
class WordVectorStore {
 public:
  WordVectorStore() = default;
  WordVectorStore(std::vector<std::string> words, Matrix vectors);

  std::size_t size() const { return words_.size(); }
  std::size_t dim() const { return vectors_.cols; }
  const std::string& word(std::size_t id) const { return words_.at(id); }
  const std::vector<std::string>& words() const { return words_; }
  const Matrix& vectors() const { return vectors_; }
  const double* vector(std::size_t id) const { return vectors_.row_ptr(id); }
  std::vector<double> vector_copy(std::size_t id) const;
  std::optional<std::size_t> id_of(const std::string& word) const;

 private:
  std::vector<std::string> words_;
  Matrix vectors_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class Provenance : std::uint8_t { Copied, Predicted, Random };

const char* provenance_name(Provenance p);

// Per-token accounting of how a target matrix was initialized.
struct InitReport {
  std::size_t copied = 0;
  std::size_t predicted = 0;
  std::size_t random = 0;
  std::size_t total = 0;
  std::vector<Provenance> tags;  // one per target token id

  void validate() const;  // copied + predicted + random == total == tags.size()
};

// Vocab files: UTF-8, one token per line (line number - 1 == id).
Vocabulary load_vocab(const std::string& path);
void save_vocab(const Vocabulary& vocab, const std::string& path);

// word2vec text format: header "<count> <dim>", then "<word> v1 ... vdim".
WordVectorStore load_word_vectors(const std::string& path);
void save_word_vectors(const WordVectorStore& store, const std::string& path);

// Canonical binary matrix container: magic "VXMAT001", u64 rows, u64 cols,
// rows*cols little-endian f64. Round-trips are bit-exact.
Matrix load_matrix(const std::string& path);
void save_matrix(const Matrix& m, const std::string& path);

// Named-tensor container (same value encoding as the matrix format, magic
// "VXTEN001"). Order is preserved; names must be unique.
using NamedTensors = std::vector<std::pair<std::string, Matrix>>;
NamedTensors load_tensors(const std::string& path);
void save_tensors(const NamedTensors& tensors, const std::string& path);

// InitReport CSV: token_id,token,provenance.
void save_init_report(const InitReport& report, const Vocabulary& target_vocab,
                      const std::string& path);
InitReport load_init_report(const std::string& path);

// CSV field quoting shared by every CSV emitter in the toolkit.
std::string csv_escape(const std::string& field);
std::vector<std::string> csv_split_line(const std::string& line);

// Shortest decimal form that parses back to the identical double.
std::string format_double(double v);

}  // namespace vocex
