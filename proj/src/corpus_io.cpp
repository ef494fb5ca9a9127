#include "vocex/corpus_io.hpp"

#include <charconv>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "vocex/hash.hpp"

namespace vocex {

namespace {

constexpr char kMatrixMagic[8] = {'V', 'X', 'M', 'A', 'T', '0', '0', '1'};
constexpr char kTensorMagic[8] = {'V', 'X', 'T', 'E', 'N', '0', '0', '1'};

void write_u64_le(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64_le(std::istream& in, const std::string& path, const char* what) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (in.gcount() != 8) throw IoError(path + ": short read in " + what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void write_f64_le(std::ostream& out, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  write_u64_le(out, v);
}

double read_f64_le(std::istream& in, const std::string& path, const char* what) {
  const std::uint64_t v = read_u64_le(in, path, what);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

std::ifstream open_input(const std::string& path, bool binary) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw IoError(path + ": cannot open for reading");
  return in;
}

std::ofstream open_output(const std::string& path, bool binary) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw IoError(path + ": cannot open for writing");
  return out;
}

// Strips one trailing \r so CRLF files load the same as LF files.
void chomp_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.empty()) throw IoError("vocabulary must contain at least one token");
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    auto [it, inserted] = index_.emplace(tokens_[i], i);
    if (!inserted)
      throw IoError("duplicate token \"" + tokens_[i] + "\" at lines " +
                    std::to_string(it->second + 1) + " and " + std::to_string(i + 1));
  }
}

std::optional<std::size_t> Vocabulary::id_of(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

WordVectorStore::WordVectorStore(std::vector<std::string> words, Matrix vectors)
    : words_(std::move(words)), vectors_(std::move(vectors)) {
  if (words_.size() != vectors_.rows)
    throw IoError("word vector store: " + std::to_string(words_.size()) + " words but " +
                  std::to_string(vectors_.rows) + " vector rows");
  if (!vectors_.all_finite()) throw IoError("word vector store: non-finite value");
  index_.reserve(words_.size());
  for (std::size_t i = 0; i < words_.size(); ++i) {
    auto [it, inserted] = index_.emplace(words_[i], i);
    if (!inserted) throw IoError("duplicate word \"" + words_[i] + "\" in vector store");
  }
}

std::vector<double> WordVectorStore::vector_copy(std::size_t id) const {
  const double* p = vectors_.row_ptr(id);
  return std::vector<double>(p, p + dim());
}

std::optional<std::size_t> WordVectorStore::id_of(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const char* provenance_name(Provenance p) {
  switch (p) {
    case Provenance::Copied: return "copied";
    case Provenance::Predicted: return "predicted";
    case Provenance::Random: return "random";
  }
  return "?";
}

void InitReport::validate() const {
  if (copied + predicted + random != total)
    throw IoError("init report: copied + predicted + random != total");
  if (tags.size() != total) throw IoError("init report: tag count != total");
}

Vocabulary load_vocab(const std::string& path) {
  std::ifstream in = open_input(path, false);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    chomp_cr(line);
    tokens.push_back(line);
  }
  if (tokens.empty()) throw IoError(path + ": empty vocabulary file");
  try {
    return Vocabulary(std::move(tokens));
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
}

void save_vocab(const Vocabulary& vocab, const std::string& path) {
  std::ofstream out = open_output(path, true);
  for (const auto& t : vocab.tokens()) out << t << '\n';
  if (!out) throw IoError(path + ": write failed");
}

WordVectorStore load_word_vectors(const std::string& path) {
  std::ifstream in = open_input(path, false);
  std::string line;
  if (!std::getline(in, line)) throw IoError(path + ": missing word2vec header");
  chomp_cr(line);
  std::istringstream header(line);
  std::size_t count = 0, dim = 0;
  if (!(header >> count >> dim) || count == 0 || dim == 0)
    throw IoError(path + ": malformed word2vec header \"" + line + "\"");
  std::string trailing;
  if (header >> trailing) throw IoError(path + ": malformed word2vec header \"" + line + "\"");

  std::vector<std::string> words;
  words.reserve(count);
  Matrix vectors(count, dim);
  std::size_t row = 0;
  while (std::getline(in, line)) {
    chomp_cr(line);
    if (line.empty() && row == count) break;  // tolerate one trailing newline
    if (row >= count)
      throw IoError(path + ": header claims " + std::to_string(count) + " rows but file has more");
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word)) throw IoError(path + ": empty row at line " + std::to_string(row + 2));
    double* v = vectors.row_ptr(row);
    for (std::size_t d = 0; d < dim; ++d) {
      if (!(ls >> v[d]))
        throw IoError(path + ": row \"" + word + "\" has fewer than " + std::to_string(dim) +
                      " values");
      if (!std::isfinite(v[d]))
        throw IoError(path + ": non-finite value in row \"" + word + "\"");
    }
    std::string extra;
    if (ls >> extra)
      throw IoError(path + ": row \"" + word + "\" has more than " + std::to_string(dim) +
                    " values");
    words.push_back(std::move(word));
    ++row;
  }
  if (row != count)
    throw IoError(path + ": header claims " + std::to_string(count) + " rows but file has " +
                  std::to_string(row));
  try {
    return WordVectorStore(std::move(words), std::move(vectors));
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
}

void save_word_vectors(const WordVectorStore& store, const std::string& path) {
  std::ofstream out = open_output(path, true);
  out << store.size() << ' ' << store.dim() << '\n';
  for (std::size_t i = 0; i < store.size(); ++i) {
    out << store.word(i);
    const double* v = store.vector(i);
    for (std::size_t d = 0; d < store.dim(); ++d) out << ' ' << format_double(v[d]);
    out << '\n';
  }
  if (!out) throw IoError(path + ": write failed");
}

Matrix load_matrix(const std::string& path) {
  std::ifstream in = open_input(path, true);
  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, kMatrixMagic, 8) != 0)
    throw IoError(path + ": not a matrix file (bad magic)");
  const std::uint64_t rows = read_u64_le(in, path, "matrix header");
  const std::uint64_t cols = read_u64_le(in, path, "matrix header");
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = read_f64_le(in, path, "matrix body");
  char probe;
  if (in.read(&probe, 1))
    throw IoError(path + ": header claims " + std::to_string(rows) + "x" + std::to_string(cols) +
                  " but file has trailing bytes");
  if (!m.all_finite()) throw IoError(path + ": non-finite value in matrix");
  return m;
}

void save_matrix(const Matrix& m, const std::string& path) {
  if (!m.all_finite()) throw IoError(path + ": refusing to save non-finite matrix");
  std::ofstream out = open_output(path, true);
  out.write(kMatrixMagic, 8);
  write_u64_le(out, m.rows);
  write_u64_le(out, m.cols);
  for (double v : m.data) write_f64_le(out, v);
  if (!out) throw IoError(path + ": write failed");
}

NamedTensors load_tensors(const std::string& path) {
  std::ifstream in = open_input(path, true);
  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, kTensorMagic, 8) != 0)
    throw IoError(path + ": not a tensor container (bad magic)");
  const std::uint64_t count = read_u64_le(in, path, "tensor header");
  NamedTensors tensors;
  tensors.reserve(count);
  for (std::uint64_t t = 0; t < count; ++t) {
    const std::uint64_t name_len = read_u64_le(in, path, "tensor name");
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    if (in.gcount() != static_cast<std::streamsize>(name_len))
      throw IoError(path + ": short read in tensor name");
    const std::uint64_t rows = read_u64_le(in, path, "tensor shape");
    const std::uint64_t cols = read_u64_le(in, path, "tensor shape");
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.data.size(); ++i)
      m.data[i] = read_f64_le(in, path, "tensor body");
    tensors.emplace_back(std::move(name), std::move(m));
  }
  char probe;
  if (in.read(&probe, 1)) throw IoError(path + ": trailing bytes after last tensor");
  return tensors;
}

void save_tensors(const NamedTensors& tensors, const std::string& path) {
  std::ofstream out = open_output(path, true);
  out.write(kTensorMagic, 8);
  write_u64_le(out, tensors.size());
  for (const auto& [name, m] : tensors) {
    write_u64_le(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64_le(out, m.rows);
    write_u64_le(out, m.cols);
    for (double v : m.data) write_f64_le(out, v);
  }
  if (!out) throw IoError(path + ": write failed");
}

void save_init_report(const InitReport& report, const Vocabulary& target_vocab,
                      const std::string& path) {
  report.validate();
  if (target_vocab.size() != report.total)
    throw IoError(path + ": report total does not match target vocabulary size");
  std::ofstream out = open_output(path, true);
  out << "token_id,token,provenance\n";
  for (std::size_t i = 0; i < report.tags.size(); ++i)
    out << i << ',' << csv_escape(target_vocab.token(i)) << ',' << provenance_name(report.tags[i])
        << '\n';
  if (!out) throw IoError(path + ": write failed");
}

InitReport load_init_report(const std::string& path) {
  std::ifstream in = open_input(path, false);
  std::string line;
  if (!std::getline(in, line)) throw IoError(path + ": empty report");
  InitReport report;
  while (std::getline(in, line)) {
    chomp_cr(line);
    if (line.empty()) continue;
    const auto fields = csv_split_line(line);
    if (fields.size() != 3) throw IoError(path + ": malformed report row \"" + line + "\"");
    Provenance p;
    if (fields[2] == "copied") p = Provenance::Copied;
    else if (fields[2] == "predicted") p = Provenance::Predicted;
    else if (fields[2] == "random") p = Provenance::Random;
    else throw IoError(path + ": unknown provenance \"" + fields[2] + "\"");
    report.tags.push_back(p);
    switch (p) {
      case Provenance::Copied: ++report.copied; break;
      case Provenance::Predicted: ++report.predicted; break;
      case Provenance::Random: ++report.random; break;
    }
  }
  report.total = report.tags.size();
  report.validate();
  return report;
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

std::vector<std::string> csv_split_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

std::string format_double(double v) {
  char buf[64];
  // %.17g always round-trips; prefer the shorter %.15g / %.16g when they do.
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    double back = 0.0;
    std::sscanf(buf, "%lf", &back);
    if (back == v) return buf;
  }
  return buf;
}

std::string fnv1a64_hex(std::string_view bytes) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, fnv1a64(bytes));
  return buf;
}

std::string fnv1a64_file_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open for hashing");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
    h = fnv1a64(std::string_view(buf, static_cast<std::size_t>(in.gcount())), h);
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016" PRIx64, h);
  return hex;
}

}  // namespace vocex
