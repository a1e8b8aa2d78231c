#include "diffspeed/csi_io.hpp"

#include "diffspeed/errors.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <vector>

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace diffspeed {

namespace {

constexpr std::array<char, 8> kMagic{'D', 'S', 'C', 'S', 'I', '\0', '\0', '\0'};

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T take(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw IoError("CSI container: unexpected end of file");
  return v;
}

Eigen::VectorXd to_vector(const nlohmann::json& j, const char* field) {
  if (!j.contains(field) || !j.at(field).is_array()) throw SchemaError(std::string("CSI container: missing field '") + field + "'");
  const auto v = j.at(field).get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

void write_csi(std::ostream& os, const CsiSeries& csi) {
  nlohmann::json h;
  h["rows"] = csi.num_frames();
  h["cols"] = csi.num_subcarriers();
  h["csi_rate"] = csi.csi_rate;
  h["subcarrier_frequencies"] = std::vector<double>(csi.subcarrier_frequencies.data(),
                                                    csi.subcarrier_frequencies.data() + csi.subcarrier_frequencies.size());
  h["timestamps"] = std::vector<double>(csi.timestamps.data(), csi.timestamps.data() + csi.timestamps.size());
  h["metadata"] = csi.metadata;
  const std::string header = h.dump();

  os.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(os, kCsiFormatVersion);
  put<std::uint64_t>(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  // Row-major payload.
  const Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = csi.frames;
  os.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double) * 2));
  if (!os) throw IoError("CSI container: write failed");
}

CsiSeries read_csi(std::istream& is) {
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw SchemaError("CSI container: bad magic");
  const auto version = take<std::uint32_t>(is);
  if (version != kCsiFormatVersion) throw SchemaError("CSI container: unsupported version " + std::to_string(version));
  const auto len = take<std::uint64_t>(is);
  if (len > (1ull << 34)) throw SchemaError("CSI container: implausible header length");
  std::string header(len, '\0');
  is.read(header.data(), static_cast<std::streamsize>(len));
  if (!is) throw IoError("CSI container: truncated header");

  nlohmann::json h;
  try {
    h = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("CSI container: header is not JSON: ") + e.what());
  }
  for (const char* f : {"rows", "cols", "csi_rate"}) {
    if (!h.contains(f) || !h.at(f).is_number()) throw SchemaError(std::string("CSI container: missing field '") + f + "'");
  }
  CsiSeries csi;
  const auto rows = h.at("rows").get<Eigen::Index>();
  const auto cols = h.at("cols").get<Eigen::Index>();
  csi.csi_rate = h.at("csi_rate").get<double>();
  csi.subcarrier_frequencies = to_vector(h, "subcarrier_frequencies");
  csi.timestamps = to_vector(h, "timestamps");
  if (h.contains("metadata")) csi.metadata = h.at("metadata");
  if (rows < 0 || cols < 0 || csi.subcarrier_frequencies.size() != cols || csi.timestamps.size() != rows) {
    throw SchemaError("CSI container: header dimensions are inconsistent");
  }

  Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
  is.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double) * 2));
  if (!is) throw IoError("CSI container: truncated payload");
  csi.frames = rm;
  return csi;
}

void write_csi(const std::filesystem::path& path, const CsiSeries& csi) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_csi(os, csi);
}

CsiSeries read_csi(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read_csi(is);
}

}  // namespace diffspeed
