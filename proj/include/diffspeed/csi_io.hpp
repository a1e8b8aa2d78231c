#pragma once

#include "diffspeed/modem.hpp"

#include <filesystem>
#include <iosfwd>

namespace diffspeed {

/**
 * CsiSeries container.
 *
 *   bytes 0-7   magic "DSCSI\0\0\0"
 *   bytes 8-11  format version, uint32 LE (currently 1)
 *   bytes 12-19 header length in bytes, uint64 LE
 *   header      UTF-8 JSON: rows, cols, csi_rate, subcarrier_frequencies,
 *               timestamps, metadata
 *   payload     rows * cols complex values, row-major, each as two IEEE-754
 *               little-endian doubles (real, imaginary)
 */
inline constexpr std::uint32_t kCsiFormatVersion = 1;

void write_csi(std::ostream& os, const CsiSeries& csi);
CsiSeries read_csi(std::istream& is);

void write_csi(const std::filesystem::path& path, const CsiSeries& csi);
CsiSeries read_csi(const std::filesystem::path& path);

}  // namespace diffspeed
