#ifndef KFSC_IO_HPP
#define KFSC_IO_HPP

#include "kfsc/types.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace kfsc {

enum class MatrixFormat { CsvRowsAreSamples, CsvColsAreSamples, Binary };

/// Trained dictionary plus the two constants needed to reuse it.
struct Model {
  Dictionary dictionary;
  double lambda = 0.0;
  double ridge_small = 1e-5;
};

inline constexpr char kMatrixMagic[8] = {'K', 'F', 'S', 'C', 'M', 'A', 'T', '1'};
inline constexpr char kModelMagic[8] = {'K', 'F', 'S', 'C', 'M', 'D', 'L', '1'};

namespace detail {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "write failed on " + path);
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}

inline void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
}

/// Bounds-checked little-endian reader over a byte buffer.
class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  void expect_magic(const char (&magic)[8], const char* what) {
    need(8, what);
    if (std::memcmp(bytes_.data() + pos_, magic, 8) != 0)
      throw Error(ErrorCode::HeaderMismatch, std::string(what) + ": bad magic");
    pos_ += 8;
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + b])) << (8 * b);
    pos_ += 4;
    return v;
  }

  double f64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + b])) << (8 * b);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t count, const char* what) const {
    if (remaining() < count) throw Error(ErrorCode::HeaderMismatch, std::string(what) + ": truncated");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline bool is_missing_token(std::string_view s) {
  if (s.empty()) return true;
  if (s.size() != 3) return false;
  auto lower = [](char c) { return static_cast<char>(c | 0x20); };
  return lower(s[0]) == 'n' && lower(s[1]) == 'a' && lower(s[2]) == 'n';
}

inline DataMatrix finish(Matrix values) {
  Matrix mask = Matrix::Ones(values.rows(), values.cols());
  bool any_missing = false;
  for (Index i = 0; i < values.size(); ++i) {
    if (std::isnan(values.data()[i])) {
      values.data()[i] = 0.0;
      mask.data()[i] = 0.0;
      any_missing = true;
    }
  }
  if (!any_missing) return DataMatrix(std::move(values));
  return DataMatrix(std::move(values), std::move(mask));
}

}  // namespace detail

/// Parses CSV text. Empty fields and "nan" are missing; blank lines are skipped.
inline DataMatrix parse_csv(std::string_view text, MatrixFormat format) {
  std::vector<double> cells;
  Index width = -1, records = 0, line_no = 0;
  while (!text.empty()) {
    const auto eol = text.find('\n');
    std::string_view line = text.substr(0, eol);
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    ++line_no;
    if (detail::trim(line).empty()) continue;
    Index fields = 0;
    for (;;) {
      const auto comma = line.find(',');
      const std::string_view token = detail::trim(line.substr(0, comma));
      ++fields;
      if (detail::is_missing_token(token)) {
        cells.push_back(std::numeric_limits<double>::quiet_NaN());
      } else {
        double v = 0.0;
        const char* first = token.data();
        const char* last = token.data() + token.size();
        if (*first == '+') ++first;
        const auto [ptr, ec] = std::from_chars(first, last, v);
        if (ec != std::errc() || ptr != last || first == last)
          throw Error(ErrorCode::ParseError,
                      "line " + std::to_string(line_no) + ", field " + std::to_string(fields) + ": '" +
                          std::string(token) + "' is not a number",
                      line_no, fields);
        cells.push_back(v);
      }
      if (comma == std::string_view::npos) break;
      line.remove_prefix(comma + 1);
    }
    if (width < 0) width = fields;
    if (fields != width)
      throw Error(ErrorCode::HeaderMismatch,
                  "line " + std::to_string(line_no) + " has " + std::to_string(fields) + " fields, expected " +
                      std::to_string(width),
                  line_no);
    ++records;
  }
  if (records == 0) throw Error(ErrorCode::ParseError, "no data rows", Index{1}, Index{1});

  // Records are stored row-major as read.
  Matrix values(records, width);
  for (Index r = 0; r < records; ++r)
    for (Index c = 0; c < width; ++c) values(r, c) = cells[static_cast<std::size_t>(r * width + c)];
  if (format == MatrixFormat::CsvRowsAreSamples) values.transposeInPlace();
  return detail::finish(std::move(values));
}

/// 16-byte header ("KFSCMAT1", u32 m, u32 n) then m*n column-major f64, all
/// little-endian. NaN entries are missing.
inline DataMatrix decode_matrix(std::string_view bytes) {
  detail::ByteReader in(bytes);
  in.expect_magic(kMatrixMagic, "matrix file");
  const std::uint32_t m = in.u32("matrix file"), n = in.u32("matrix file");
  if (m == 0 || n == 0) throw Error(ErrorCode::HeaderMismatch, "matrix file: empty shape");
  const std::uint64_t count = static_cast<std::uint64_t>(m) * n;
  if (in.remaining() != count * 8)
    throw Error(ErrorCode::HeaderMismatch, "matrix file: payload size does not match header " + std::to_string(m) +
                                               "x" + std::to_string(n));
  Matrix values(m, n);
  for (std::uint64_t i = 0; i < count; ++i) values.data()[i] = in.f64("matrix file");
  return detail::finish(std::move(values));
}

/// Missing entries are written as NaN.
inline std::string encode_matrix(const DataMatrix& X) {
  if (X.rows() > std::numeric_limits<std::uint32_t>::max() || X.cols() > std::numeric_limits<std::uint32_t>::max())
    throw Error(ErrorCode::ShapeMismatch, "matrix too large for the binary format");
  std::string out(kMatrixMagic, 8);
  out.reserve(16 + static_cast<std::size_t>(X.values.size()) * 8);
  detail::put_u32(out, static_cast<std::uint32_t>(X.rows()));
  detail::put_u32(out, static_cast<std::uint32_t>(X.cols()));
  for (Index i = 0; i < X.values.size(); ++i) {
    const bool missing = X.mask && X.mask->data()[i] == 0.0;
    detail::put_f64(out, missing ? std::numeric_limits<double>::quiet_NaN() : X.values.data()[i]);
  }
  return out;
}

/// Shortest round-tripping decimal text; missing entries are empty fields.
inline std::string encode_csv(const DataMatrix& X, MatrixFormat format) {
  const bool rows_are_samples = format == MatrixFormat::CsvRowsAreSamples;
  const Index records = rows_are_samples ? X.cols() : X.rows();
  const Index width = rows_are_samples ? X.rows() : X.cols();
  std::string out;
  std::array<char, 32> buf{};
  for (Index r = 0; r < records; ++r) {
    for (Index c = 0; c < width; ++c) {
      const Index row = rows_are_samples ? c : r, col = rows_are_samples ? r : c;
      if (c > 0) out.push_back(',');
      if (X.mask && (*X.mask)(row, col) == 0.0) continue;
      const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), X.values(row, col));
      out.append(buf.data(), res.ptr);
    }
    out.push_back('\n');
  }
  return out;
}

inline DataMatrix load_matrix(const std::string& path, MatrixFormat format) {
  const std::string bytes = detail::read_file(path);
  if (format == MatrixFormat::Binary) return decode_matrix(bytes);
  return parse_csv(bytes, format);
}

inline void save_matrix(const std::string& path, const DataMatrix& X, MatrixFormat format) {
  detail::write_file(path, format == MatrixFormat::Binary ? encode_matrix(X) : encode_csv(X, format));
}

/// "KFSCMDL1", u32 m, k, d, f64 lambda, f64 ridge_small, then the k*m*d
/// dictionary entries block after block, each block column-major.
inline std::string encode_model(const Model& model) {
  const Dictionary& D = model.dictionary;
  std::string out(kModelMagic, 8);
  detail::put_u32(out, static_cast<std::uint32_t>(D.m()));
  detail::put_u32(out, static_cast<std::uint32_t>(D.k));
  detail::put_u32(out, static_cast<std::uint32_t>(D.d));
  detail::put_f64(out, model.lambda);
  detail::put_f64(out, model.ridge_small);
  // Blocks are adjacent column ranges, so the column-major buffer is already
  // block-major.
  for (Index i = 0; i < D.atoms.size(); ++i) detail::put_f64(out, D.atoms.data()[i]);
  return out;
}

inline Model decode_model(std::string_view bytes) {
  detail::ByteReader in(bytes);
  in.expect_magic(kModelMagic, "model file");
  const std::uint32_t m = in.u32("model file"), k = in.u32("model file"), d = in.u32("model file");
  if (m == 0 || k == 0 || d == 0) throw Error(ErrorCode::HeaderMismatch, "model file: empty shape");
  Model model;
  model.lambda = in.f64("model file");
  model.ridge_small = in.f64("model file");
  const std::uint64_t count = static_cast<std::uint64_t>(m) * k * d;
  if (in.remaining() != count * 8) throw Error(ErrorCode::HeaderMismatch, "model file: payload size does not match header");
  Matrix atoms(m, static_cast<Index>(k) * d);
  for (std::uint64_t i = 0; i < count; ++i) atoms.data()[i] = in.f64("model file");
  model.dictionary = Dictionary(std::move(atoms), k, d);
  return model;
}

inline void save_model(const std::string& path, const Model& model) { detail::write_file(path, encode_model(model)); }
inline Model load_model(const std::string& path) { return decode_model(detail::read_file(path)); }

/// One integer per line.
inline void save_labels(const std::string& path, const Labels& labels) {
  std::string out;
  for (int l : labels) {
    out += std::to_string(l);
    out.push_back('\n');
  }
  detail::write_file(path, out);
}

inline Labels load_labels(const std::string& path) {
  const std::string text = detail::read_file(path);
  Labels labels;
  std::istringstream in(text);
  std::string line;
  Index line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view token = detail::trim(line);
    if (token.empty()) continue;
    int v = 0;
    const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc() || ptr != token.data() + token.size())
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": not an integer label", line_no,
                  Index{1});
    labels.push_back(v);
  }
  return labels;
}

}  // namespace kfsc

#endif  // KFSC_IO_HPP
