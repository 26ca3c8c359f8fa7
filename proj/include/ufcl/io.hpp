#pragma once

// File formats:
//   binary matrix  "UFCL" | u32 version | u32 rows | u32 cols | f64[rows*cols]
//                  all integers and floats little-endian, values row-major
//   csv matrix     one row per line, comma separated
//   labels         UTF-8 text, one decimal integer per line (-1 = outlier)

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "ufcl/clustering.hpp"
#include "ufcl/common.hpp"

namespace ufcl {

inline constexpr char kMatrixMagic[4] = {'U', 'F', 'C', 'L'};
inline constexpr std::uint32_t kMatrixVersion = 1;

enum class MatrixFormat { binary, csv };

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}
inline std::uint64_t get_le(const std::string& in, std::size_t pos, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + static_cast<std::size_t>(i)])) << (8 * i);
  }
  return v;
}

inline std::string read_file(const std::filesystem::path& path, std::ios::openmode mode = std::ios::binary) {
  std::ifstream in(path, mode);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || s.empty()) {
    throw FormatError("not a number: '" + std::string(s) + "'");
  }
  return v;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

inline std::string encode_matrix(const Matrix& m) {
  if (m.rows() > UINT32_MAX || m.cols() > UINT32_MAX) throw ShapeError("matrix too large to serialize");
  std::string out(kMatrixMagic, 4);
  detail::put_u32(out, kMatrixVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(m.rows()));
  detail::put_u32(out, static_cast<std::uint32_t>(m.cols()));
  out.reserve(out.size() + 8 * m.size());
  for (double v : m.values()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

inline Matrix decode_matrix(const std::string& bytes) {
  if (bytes.size() < 16) throw FormatError("binary matrix: truncated header (" + std::to_string(bytes.size()) + " bytes)");
  if (std::memcmp(bytes.data(), kMatrixMagic, 4) != 0) throw FormatError("binary matrix: bad magic at offset 0");
  const auto version = static_cast<std::uint32_t>(detail::get_le(bytes, 4, 4));
  if (version != kMatrixVersion) {
    throw FormatError("binary matrix: unsupported version " + std::to_string(version) + " at offset 4");
  }
  const std::size_t rows = detail::get_le(bytes, 8, 4);
  const std::size_t cols = detail::get_le(bytes, 12, 4);
  const std::size_t expected = 16 + 8 * rows * cols;
  if (bytes.size() != expected) {
    throw FormatError("binary matrix: header declares " + std::to_string(rows) + "x" + std::to_string(cols) +
                      " (" + std::to_string(expected) + " bytes) but file has " + std::to_string(bytes.size()) +
                      " bytes");
  }
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows * cols; ++i) {
    m.values()[i] = std::bit_cast<double>(detail::get_le(bytes, 16 + 8 * i, 8));
  }
  return m;
}

inline std::string encode_csv(const Matrix& m) {
  std::string out;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (c) out.push_back(',');
      out += detail::format_double(m(r, c));
    }
    out.push_back('\n');
  }
  return out;
}

inline Matrix decode_csv(const std::string& text) {
  std::vector<double> values;
  std::size_t cols = 0, rows = 0, line_no = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    std::size_t count = 0;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      const auto field = std::string_view(line).substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      try {
        values.push_back(detail::parse_double(field));
      } catch (const FormatError& e) {
        throw FormatError("csv line " + std::to_string(line_no) + ": " + e.what());
      }
      ++count;
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (rows == 0) {
      cols = count;
    } else if (count != cols) {
      throw FormatError("csv line " + std::to_string(line_no) + ": expected " + std::to_string(cols) +
                        " values, found " + std::to_string(count));
    }
    ++rows;
  }
  return Matrix(rows, cols, std::move(values));
}

inline void save_matrix(const std::filesystem::path& path, const Matrix& m, MatrixFormat fmt = MatrixFormat::binary) {
  detail::write_file(path, fmt == MatrixFormat::binary ? encode_matrix(m) : encode_csv(m));
}

inline Matrix load_matrix(const std::filesystem::path& path, MatrixFormat fmt = MatrixFormat::binary) {
  const auto bytes = detail::read_file(path);
  try {
    return fmt == MatrixFormat::binary ? decode_matrix(bytes) : decode_csv(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline MatrixFormat format_from_path(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? MatrixFormat::csv : MatrixFormat::binary;
}

inline std::string encode_labels(std::span<const int> labels) {
  std::string out;
  for (int v : labels) {
    out += std::to_string(v);
    out.push_back('\n');
  }
  return out;
}

inline std::vector<int> decode_labels(const std::string& text) {
  std::vector<int> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = detail::trim(line);
    if (t.empty()) continue;
    int v = 0;
    const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
    if (res.ec != std::errc() || res.ptr != t.data() + t.size()) {
      throw FormatError("labels line " + std::to_string(line_no) + ": not an integer: '" + t + "'");
    }
    out.push_back(v);
  }
  return out;
}

inline void save_labels(const std::filesystem::path& path, std::span<const int> labels) {
  detail::write_file(path, encode_labels(labels));
}

inline std::vector<int> load_labels(const std::filesystem::path& path) {
  try {
    return decode_labels(detail::read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline void save_assignment(const std::filesystem::path& path, const ClusterAssignment& a) {
  save_labels(path, a.labels);
}

inline ClusterAssignment load_assignment(const std::filesystem::path& path) {
  const auto labels = load_labels(path);
  std::vector<long> raw(labels.begin(), labels.end());
  for (int v : labels) {
    if (v < kOutlier) throw FormatError(path.string() + ": label below -1");
  }
  return relabel_by_first_member(raw);
}

struct LoadedEmbeddings {
  EmbeddingMatrix features;
  std::vector<int> labels;  // empty when no label file was given
};

inline LoadedEmbeddings load_embeddings(const std::filesystem::path& path, MatrixFormat fmt,
                                        const std::filesystem::path& labels_path = {}) {
  LoadedEmbeddings out{load_matrix(path, fmt), {}};
  if (out.features.rows() == 0) throw FormatError(path.string() + ": embedding matrix is empty");
  if (!all_finite(out.features.values())) throw FormatError(path.string() + ": non-finite value");
  if (!labels_path.empty()) {
    out.labels = load_labels(labels_path);
    if (out.labels.size() != out.features.rows()) {
      throw FormatError(labels_path.string() + ": " + std::to_string(out.labels.size()) + " labels for " +
                        std::to_string(out.features.rows()) + " rows");
    }
  }
  return out;
}

}  // namespace ufcl
