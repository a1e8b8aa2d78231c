#pragma once

#include "diffspeed/modem.hpp"

#include <cstddef>
#include <filesystem>
#include <string>

namespace diffspeed {

struct WavReadResult {
  Recording recording;
  std::size_t warnings = 0;   // truncated data chunk, odd trailing byte, ...
  std::string note;
};

/// Mono 16-bit little-endian PCM RIFF/WAVE. Throws IoError when the file cannot be written.
void write_wav(const std::filesystem::path& path, const Recording& rec);
void write_wav(const std::filesystem::path& path, const TxWaveform& tx);

/**
 * Reads a mono 16-bit PCM WAV. A data chunk shorter than its declared size is
 * accepted; the samples present are returned and a warning is counted.
 * Throws IoError on unreadable files and SchemaError on unsupported formats.
 */
WavReadResult read_wav(const std::filesystem::path& path);

}  // namespace diffspeed
