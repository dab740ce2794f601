#pragma once

#include "dyncov/data.hpp"
#include "dyncov/types.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace dyncov {

// Sample tensor binary format: magic "DCOV", little-endian u32 version (1),
// u64 dims N, J, P, then N*J*P doubles ordered subject-major, then time,
// then variable.

namespace detail {

inline void require_little_endian() {
  if constexpr (std::endian::native != std::endian::little) {
    throw DataFormatError("binary tensor io requires a little-endian host");
  }
}

/// Writes through a temporary file and renames on success, so a failed
/// write never leaves a partial file at the target path.
class AtomicFile {
 public:
  explicit AtomicFile(const std::string& path)
      : path_(path), tmp_(path + ".tmp"), stream_(tmp_, std::ios::binary | std::ios::trunc) {
    if (!stream_) {
      throw DataFormatError("cannot open for writing: " + tmp_);
    }
  }

  ~AtomicFile() {
    if (!committed_) {
      stream_.close();
      std::error_code ec;
      std::filesystem::remove(tmp_, ec);
    }
  }

  std::ofstream& stream() { return stream_; }

  void commit() {
    stream_.flush();
    if (!stream_) {
      throw DataFormatError("write failed: " + tmp_);
    }
    stream_.close();
    std::error_code ec;
    std::filesystem::rename(tmp_, path_, ec);
    if (ec) {
      throw DataFormatError("cannot move " + tmp_ + " to " + path_);
    }
    committed_ = true;
  }

 private:
  std::string path_;
  std::string tmp_;
  std::ofstream stream_;
  bool committed_ = false;
};

inline std::string format_double(double value) {
  char buffer[40];
  std::snprintf(buffer, sizeof(buffer), "%.17g", value);
  return buffer;
}

}  // namespace detail

inline void write_sample_set_binary(const std::string& path, const SampleSet& samples) {
  detail::require_little_endian();
  detail::AtomicFile file(path);
  std::ofstream& out = file.stream();
  out.write("DCOV", 4);
  const std::uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  const std::uint64_t dims[3] = {static_cast<std::uint64_t>(samples.subjects()),
                                 static_cast<std::uint64_t>(samples.times()),
                                 static_cast<std::uint64_t>(samples.vars())};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  out.write(reinterpret_cast<const char*>(samples.data().data()),
            static_cast<std::streamsize>(samples.data().size() * sizeof(double)));
  file.commit();
}

inline SampleSet read_sample_set_binary(const std::string& path) {
  detail::require_little_endian();
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataFormatError("cannot open: " + path);
  }
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "DCOV") {
    throw DataFormatError("bad magic in " + path);
  }
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!in || version != 1) {
    throw DataFormatError("unsupported tensor version in " + path);
  }
  std::uint64_t dims[3] = {};
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!in || dims[0] == 0 || dims[1] == 0 || dims[2] == 0) {
    throw DataFormatError("bad dimensions in " + path);
  }
  SampleSet samples(static_cast<Index>(dims[0]), static_cast<Index>(dims[1]),
                    static_cast<Index>(dims[2]));
  std::vector<double>& data = samples.mutable_data();
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!in || in.gcount() != static_cast<std::streamsize>(data.size() * sizeof(double))) {
    throw DataFormatError("truncated tensor in " + path);
  }
  return samples;
}

/// CSV tensor: header "n,j,p1..pP", one row per (n, j) with 1-based indices.
inline void write_sample_set_csv(const std::string& path, const SampleSet& samples) {
  detail::AtomicFile file(path);
  std::ofstream& out = file.stream();
  out << "n,j";
  for (Index p = 0; p < samples.vars(); ++p) out << ",p" << (p + 1);
  out << "\n";
  for (Index n = 0; n < samples.subjects(); ++n) {
    for (Index j = 0; j < samples.times(); ++j) {
      out << (n + 1) << "," << (j + 1);
      for (Index p = 0; p < samples.vars(); ++p) {
        out << "," << detail::format_double(samples.at(n, j, p));
      }
      out << "\n";
    }
  }
  file.commit();
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  return fields;
}

inline double parse_double(const std::string& text, const std::string& context) {
  try {
    std::size_t used = 0;
    const double value = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return value;
  } catch (const std::exception&) {
    throw DataFormatError("bad number '" + text + "' in " + context);
  }
}

}  // namespace detail

inline SampleSet read_sample_set_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw DataFormatError("cannot open: " + path);
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw DataFormatError("empty tensor csv: " + path);
  }
  const auto header = detail::split_csv_line(line);
  if (header.size() < 3 || header[0] != "n" || header[1] != "j") {
    throw DataFormatError("bad tensor csv header in " + path);
  }
  const Index n_vars = static_cast<Index>(header.size() - 2);

  struct Row {
    Index n;
    Index j;
    std::vector<double> values;
  };
  std::vector<Row> rows;
  Index max_n = 0;
  Index max_j = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = detail::split_csv_line(line);
    if (static_cast<Index>(fields.size()) != n_vars + 2) {
      throw DataFormatError("ragged tensor csv row in " + path);
    }
    Row row;
    row.n = static_cast<Index>(detail::parse_double(fields[0], path)) - 1;
    row.j = static_cast<Index>(detail::parse_double(fields[1], path)) - 1;
    if (row.n < 0 || row.j < 0) {
      throw DataFormatError("indices must be 1-based in " + path);
    }
    for (Index p = 0; p < n_vars; ++p) {
      row.values.push_back(detail::parse_double(fields[static_cast<std::size_t>(p) + 2], path));
    }
    max_n = std::max(max_n, row.n + 1);
    max_j = std::max(max_j, row.j + 1);
    rows.push_back(std::move(row));
  }
  if (rows.empty() ||
      static_cast<Index>(rows.size()) != max_n * max_j) {
    throw DataFormatError("tensor csv does not cover each (n, j) once in " + path);
  }
  SampleSet samples(max_n, max_j, n_vars);
  for (const Row& row : rows) {
    for (Index p = 0; p < n_vars; ++p) samples.set(row.n, row.j, p, row.values[static_cast<std::size_t>(p)]);
  }
  return samples;
}

/// Matrix CSV with a generated header "<prefix>1,...,<prefix>C".
inline void write_matrix_csv(const std::string& path, const Matrix& m,
                             const std::string& col_prefix = "c") {
  detail::AtomicFile file(path);
  std::ofstream& out = file.stream();
  for (Index c = 0; c < m.cols(); ++c) {
    out << (c ? "," : "") << col_prefix << (c + 1);
  }
  out << "\n";
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      out << (c ? "," : "") << detail::format_double(m(r, c));
    }
    out << "\n";
  }
  file.commit();
}

inline Matrix read_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw DataFormatError("cannot open: " + path);
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw DataFormatError("empty matrix csv: " + path);
  }
  const Index n_cols = static_cast<Index>(detail::split_csv_line(line).size());
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = detail::split_csv_line(line);
    if (static_cast<Index>(fields.size()) != n_cols) {
      throw DataFormatError("ragged matrix csv row in " + path);
    }
    std::vector<double> row;
    row.reserve(fields.size());
    for (const std::string& field : fields) row.push_back(detail::parse_double(field, path));
    rows.push_back(std::move(row));
  }
  Matrix m(static_cast<Index>(rows.size()), n_cols);
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) m(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  }
  return m;
}

}  // namespace dyncov
