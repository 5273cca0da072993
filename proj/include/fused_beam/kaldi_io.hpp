#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fused_beam/binary_io.hpp"
#include "fused_beam/errors.hpp"

namespace fused_beam {

// One line of a Kaldi script file: `<utt_id> <ark_path>:<offset>`.
struct ScpEntry {
  std::string utt_id;
  std::filesystem::path ark_path;
  std::uint64_t offset = 0;

  bool operator==(const ScpEntry&) const = default;
};

// T x D float32 features, row-major.
struct FeatureMatrix {
  std::string utt_id;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const float> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  bool empty() const { return rows == 0 || cols == 0; }

  bool operator==(const FeatureMatrix&) const = default;
};

inline std::vector<ScpEntry> read_scp(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scp " + path.string());
  std::vector<ScpEntry> entries;
  std::set<std::string, std::less<>> keys;
  std::string line;
  std::size_t line_no = 0;
  constexpr std::string_view kBlank = " \t\r";
  while (std::getline(in, line)) {
    ++line_no;
    const auto begin = line.find_first_not_of(kBlank);
    if (begin == std::string::npos) continue;
    const auto key_end = line.find_first_of(kBlank, begin);
    if (key_end == std::string::npos) throw FormatError(path.string(), line_no, "missing feature file");
    const auto rest_begin = line.find_first_not_of(kBlank, key_end);
    if (rest_begin == std::string::npos) throw FormatError(path.string(), line_no, "missing feature file");
    const auto rest_end = line.find_last_not_of(kBlank);
    const std::string rest = line.substr(rest_begin, rest_end + 1 - rest_begin);

    const auto colon = rest.rfind(':');
    if (colon == std::string::npos || colon == 0) {
      throw FormatError(path.string(), line_no, "expected <path>:<offset>");
    }
    const std::string offset_text = rest.substr(colon + 1);
    std::uint64_t offset = 0;
    auto [ptr, ec] = std::from_chars(offset_text.data(), offset_text.data() + offset_text.size(), offset);
    if (offset_text.empty() || ec != std::errc{} || ptr != offset_text.data() + offset_text.size()) {
      throw FormatError(path.string(), line_no, "offset '" + offset_text + "' is not a non-negative integer");
    }
    ScpEntry entry{line.substr(begin, key_end - begin), rest.substr(0, colon), offset};
    if (!keys.insert(entry.utt_id).second) {
      throw FormatError(path.string(), line_no, "duplicate utterance id '" + entry.utt_id + "'");
    }
    entries.push_back(std::move(entry));
  }
  return entries;
}

namespace detail {

inline std::int32_t read_sized_int32(std::istream& in) {
  char size = 0;
  if (!in.get(size)) throw IoError("truncated matrix header");
  if (size != 4) throw FormatError("expected 4-byte integer size marker, got " + std::to_string(int(size)));
  return read_le<std::int32_t>(in);
}

}  // namespace detail

// Reads the binary float matrix whose `\0B` marker sits at `offset`.
inline FeatureMatrix read_ark_matrix(const std::filesystem::path& ark_path, std::uint64_t offset) {
  std::ifstream in(ark_path, std::ios::binary);
  if (!in) throw IoError("cannot open ark " + ark_path.string());
  in.seekg(static_cast<std::streamoff>(offset));
  if (!in) throw IoError("cannot seek to offset " + std::to_string(offset) + " in " + ark_path.string());

  char header[5] = {};
  in.read(header, sizeof(header));
  if (in.gcount() != sizeof(header)) throw IoError("truncated matrix header in " + ark_path.string());
  if (header[0] != '\0' || header[1] != 'B') {
    throw FormatError(ark_path.string() + ": no binary marker at offset " + std::to_string(offset));
  }
  if (header[2] != 'F' || header[3] != 'M' || header[4] != ' ') {
    throw FormatError(ark_path.string() + ": unsupported matrix type at offset " + std::to_string(offset) +
                      " (only float32 'FM' is supported)");
  }
  const std::int32_t rows = detail::read_sized_int32(in);
  const std::int32_t cols = detail::read_sized_int32(in);
  if (rows <= 0 || cols <= 0) {
    throw FormatError(ark_path.string() + ": invalid matrix shape " + std::to_string(rows) + "x" +
                      std::to_string(cols));
  }
  FeatureMatrix m;
  m.rows = static_cast<std::size_t>(rows);
  m.cols = static_cast<std::size_t>(cols);
  m.data.resize(m.rows * m.cols);
  for (float& v : m.data) {
    v = detail::read_le<float>(in);
    if (!std::isfinite(v)) throw FormatError(ark_path.string() + ": non-finite feature value");
  }
  return m;
}

inline FeatureMatrix read_ark_matrix(const ScpEntry& entry) {
  FeatureMatrix m = read_ark_matrix(entry.ark_path, entry.offset);
  m.utt_id = entry.utt_id;
  return m;
}

// Appends `utt_id ` + binary record to the ark and the matching line to the
// scp. Returns the offset of the `\0B` marker.
inline std::uint64_t write_ark_matrix(const std::string& utt_id, const FeatureMatrix& matrix,
                                      const std::filesystem::path& ark_path,
                                      const std::filesystem::path& scp_path) {
  if (matrix.empty() || matrix.data.size() != matrix.rows * matrix.cols) {
    throw ContractError("cannot write an empty or inconsistent matrix for '" + utt_id + "'");
  }
  if (utt_id.empty() || utt_id.find_first_of(" \t\r\n") != std::string::npos) {
    throw ContractError("utterance id must be non-empty and contain no whitespace");
  }
  std::ofstream ark(ark_path, std::ios::binary | std::ios::app);
  if (!ark) throw IoError("cannot open ark " + ark_path.string() + " for append");
  ark.seekp(0, std::ios::end);
  const auto start = static_cast<std::uint64_t>(ark.tellp());
  ark << utt_id << ' ';
  const std::uint64_t offset = start + utt_id.size() + 1;
  ark.write("\0BFM ", 5);
  ark.put(4);
  detail::write_le(ark, static_cast<std::int32_t>(matrix.rows));
  ark.put(4);
  detail::write_le(ark, static_cast<std::int32_t>(matrix.cols));
  for (float v : matrix.data) detail::write_le(ark, v);
  if (!ark.flush()) throw IoError("write failed on " + ark_path.string());

  std::ofstream scp(scp_path, std::ios::app);
  if (!scp) throw IoError("cannot open scp " + scp_path.string() + " for append");
  scp << utt_id << ' ' << ark_path.string() << ':' << offset << '\n';
  if (!scp.flush()) throw IoError("write failed on " + scp_path.string());
  return offset;
}

}  // namespace fused_beam
