#include "mllc/npy.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mllc::npy {

namespace {

static_assert(std::endian::native == std::endian::little,
              "NPY I/O assumes a little-endian host");

constexpr std::array<char, 6> kMagic = {'\x93', 'N', 'U', 'M', 'P', 'Y'};

std::string shape_literal(Index rows, Index cols, bool rank1) {
  std::ostringstream out;
  if (rank1) {
    out << "(" << rows << ",)";
  } else {
    out << "(" << rows << ", " << cols << ")";
  }
  return out.str();
}

void write_file(const std::filesystem::path& path, const std::string& descr,
                Index rows, Index cols, bool rank1, const char* data, std::size_t bytes) {
  std::string dict = "{'descr': '" + descr + "', 'fortran_order': False, 'shape': " +
                     shape_literal(rows, cols, rank1) + ", }";
  // magic(6) + version(2) + header_len(2) + dict padded so the total is a
  // multiple of 64, ending in '\n'.
  std::size_t unpadded = 10 + dict.size() + 1;
  std::size_t padded = (unpadded + 63) / 64 * 64;
  dict.append(padded - unpadded, ' ');
  dict.push_back('\n');

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(kMagic.data(), kMagic.size());
  const char version[2] = {'\x01', '\x00'};
  out.write(version, 2);
  const std::uint16_t header_len = static_cast<std::uint16_t>(dict.size());
  out.write(reinterpret_cast<const char*>(&header_len), 2);
  out.write(dict.data(), static_cast<std::streamsize>(dict.size()));
  out.write(data, static_cast<std::streamsize>(bytes));
  if (!out) throw IoError("write failed: " + path.string());
}

// Minimal parser for the header dict numpy writes. Keys may appear in any
// order; single or double quotes accepted.
std::string dict_value(const std::string& dict, const std::string& key) {
  const auto key_pos = dict.find("'" + key + "'");
  const auto alt_pos = dict.find("\"" + key + "\"");
  auto pos = key_pos != std::string::npos ? key_pos : alt_pos;
  if (pos == std::string::npos) throw FormatError("NPY header missing key '" + key + "'");
  pos = dict.find(':', pos);
  if (pos == std::string::npos) throw FormatError("NPY header malformed near '" + key + "'");
  ++pos;
  while (pos < dict.size() && dict[pos] == ' ') ++pos;
  std::size_t end = pos;
  if (dict[pos] == '\'' || dict[pos] == '"') {
    const char quote = dict[pos];
    end = dict.find(quote, pos + 1);
    if (end == std::string::npos) throw FormatError("NPY header unterminated string");
    return dict.substr(pos + 1, end - pos - 1);
  }
  if (dict[pos] == '(') {
    end = dict.find(')', pos);
    if (end == std::string::npos) throw FormatError("NPY header unterminated tuple");
    return dict.substr(pos, end - pos + 1);
  }
  while (end < dict.size() && dict[end] != ',' && dict[end] != '}') ++end;
  return dict.substr(pos, end - pos);
}

std::vector<Index> parse_shape(const std::string& tuple) {
  std::vector<Index> shape;
  std::string digits;
  for (char c : tuple) {
    if (c >= '0' && c <= '9') {
      digits.push_back(c);
    } else if (!digits.empty()) {
      shape.push_back(static_cast<Index>(std::stoll(digits)));
      digits.clear();
    }
  }
  return shape;
}

}  // namespace

Array load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());

  std::array<char, 8> preamble{};
  in.read(preamble.data(), preamble.size());
  if (in.gcount() != static_cast<std::streamsize>(preamble.size())) {
    throw FormatError("file too short for NPY preamble: " + path.string());
  }
  if (std::memcmp(preamble.data(), kMagic.data(), kMagic.size()) != 0) {
    throw FormatError("bad NPY magic: " + path.string());
  }
  if (preamble[6] != '\x01' || preamble[7] != '\x00') {
    throw UnsupportedError("only NPY v1.0 is supported: " + path.string());
  }

  std::uint16_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), 2);
  if (in.gcount() != 2) throw FormatError("truncated NPY header length");

  std::string dict(header_len, '\0');
  in.read(dict.data(), header_len);
  if (in.gcount() != header_len) throw FormatError("truncated NPY header");

  const std::string descr = dict_value(dict, "descr");
  if (descr != "<f8" && descr != "<i8") {
    throw UnsupportedError("unsupported dtype '" + descr + "' (want <f8 or <i8)");
  }
  const std::string order = dict_value(dict, "fortran_order");
  if (order.find("False") == std::string::npos) {
    throw UnsupportedError("fortran-order arrays are not supported");
  }
  const std::vector<Index> shape = parse_shape(dict_value(dict, "shape"));
  if (shape.empty() || shape.size() > 2) {
    throw UnsupportedError("only rank-1 and rank-2 arrays are supported");
  }

  std::size_t count = 1;
  for (Index d : shape) {
    if (d < 0) throw FormatError("negative dimension in NPY shape");
    count *= static_cast<std::size_t>(d);
  }

  Array result;
  result.shape = shape;
  if (descr == "<f8") {
    std::vector<double> data(count);
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (in.gcount() != static_cast<std::streamsize>(count * sizeof(double))) {
      throw FormatError("NPY payload shorter than header shape: " + path.string());
    }
    result.payload = std::move(data);
  } else {
    std::vector<std::int64_t> data(count);
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(count * sizeof(std::int64_t)));
    if (in.gcount() != static_cast<std::streamsize>(count * sizeof(std::int64_t))) {
      throw FormatError("NPY payload shorter than header shape: " + path.string());
    }
    result.payload = std::move(data);
  }
  return result;
}

Matrixd load_matrix(const std::filesystem::path& path) {
  Array a = load(path);
  if (!a.is_float()) {
    throw ValidationError("expected float64 array in " + path.string());
  }
  const auto& data = std::get<std::vector<double>>(a.payload);
  Matrixd m(a.rows(), a.cols());
  std::memcpy(m.data(), data.data(), data.size() * sizeof(double));
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (!std::isfinite(m(i, j))) {
        throw ValidationError("non-finite value at row " + std::to_string(i) + " in " +
                              path.string());
      }
    }
  }
  return m;
}

LabelMap load_labels(const std::filesystem::path& path) {
  Array a = load(path);
  if (a.is_float()) {
    throw ValidationError("expected int64 array in " + path.string());
  }
  if (a.shape.size() != 1) {
    throw ValidationError("labels must be rank 1 in " + path.string());
  }
  const auto& data = std::get<std::vector<std::int64_t>>(a.payload);
  LabelMap labels(static_cast<Index>(data.size()));
  std::memcpy(labels.data(), data.data(), data.size() * sizeof(std::int64_t));
  return labels;
}

void save(const Matrixd& matrix, const std::filesystem::path& path) {
  write_file(path, "<f8", matrix.rows(), matrix.cols(), /*rank1=*/false,
             reinterpret_cast<const char*>(matrix.data()),
             static_cast<std::size_t>(matrix.size()) * sizeof(double));
}

void save(const LabelMap& labels, const std::filesystem::path& path) {
  write_file(path, "<i8", labels.size(), 1, /*rank1=*/true,
             reinterpret_cast<const char*>(labels.data()),
             static_cast<std::size_t>(labels.size()) * sizeof(std::int64_t));
}

void save(const Vectord& vec, const std::filesystem::path& path) {
  write_file(path, "<f8", vec.size(), 1, /*rank1=*/true,
             reinterpret_cast<const char*>(vec.data()),
             static_cast<std::size_t>(vec.size()) * sizeof(double));
}

}  // namespace mllc::npy
