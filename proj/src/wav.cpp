#include "diffspeed/wav.hpp"

#include "diffspeed/errors.hpp"

#include <array>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <vector>

namespace diffspeed {

namespace {

void put_u32(std::vector<char>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u16(std::vector<char>& b, std::uint16_t v) {
  b.push_back(static_cast<char>(v & 0xFF));
  b.push_back(static_cast<char>(v >> 8));
}
std::uint32_t get_u32(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t get_u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

}  // namespace

void write_wav(const std::filesystem::path& path, const Recording& rec) {
  if (rec.pcm_bits != 16) throw InvalidParameter("write_wav: only 16-bit PCM is supported");
  const auto rate = static_cast<std::uint32_t>(rec.sample_rate);
  const auto data_bytes = static_cast<std::uint32_t>(rec.pcm.size() * 2);

  std::vector<char> buf;
  buf.reserve(44 + data_bytes);
  buf.insert(buf.end(), {'R', 'I', 'F', 'F'});
  put_u32(buf, 36 + data_bytes);
  buf.insert(buf.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(buf, 16);
  put_u16(buf, 1);  // PCM
  put_u16(buf, 1);  // mono
  put_u32(buf, rate);
  put_u32(buf, rate * 2);
  put_u16(buf, 2);
  put_u16(buf, 16);
  buf.insert(buf.end(), {'d', 'a', 't', 'a'});
  put_u32(buf, data_bytes);
  for (std::int32_t s : rec.pcm) put_u16(buf, static_cast<std::uint16_t>(static_cast<std::int16_t>(s)));

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

void write_wav(const std::filesystem::path& path, const TxWaveform& tx) { write_wav(path, as_recording(tx)); }

WavReadResult read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  const std::vector<unsigned char> raw{std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
  if (raw.size() < 12 || std::string(raw.begin(), raw.begin() + 4) != "RIFF" ||
      std::string(raw.begin() + 8, raw.begin() + 12) != "WAVE") {
    throw SchemaError(path.string() + ": not a RIFF/WAVE file");
  }

  WavReadResult out;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= raw.size()) {
    const std::string id(raw.begin() + static_cast<long>(pos), raw.begin() + static_cast<long>(pos) + 4);
    const std::uint32_t size = get_u32(&raw[pos + 4]);
    const std::size_t body = pos + 8;
    if (id == "fmt ") {
      if (body + 16 > raw.size()) throw SchemaError(path.string() + ": truncated fmt chunk");
      const std::uint16_t format = get_u16(&raw[body]);
      const std::uint16_t channels = get_u16(&raw[body + 2]);
      const std::uint32_t rate = get_u32(&raw[body + 4]);
      const std::uint16_t bits = get_u16(&raw[body + 14]);
      if (format != 1) throw SchemaError(path.string() + ": only integer PCM is supported");
      if (channels != 1) throw SchemaError(path.string() + ": expected mono, got " + std::to_string(channels) + " channels");
      if (bits != 16) throw SchemaError(path.string() + ": expected 16-bit samples, got " + std::to_string(bits));
      out.recording.sample_rate = rate;
      out.recording.pcm_bits = bits;
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw SchemaError(path.string() + ": data chunk before fmt chunk");
      std::size_t avail = raw.size() - body;
      if (avail < size) {
        ++out.warnings;
        out.note = "data chunk truncated: " + std::to_string(avail) + " of " + std::to_string(size) + " bytes";
      } else {
        avail = size;
      }
      if (avail % 2 != 0) {
        ++out.warnings;
        --avail;
      }
      out.recording.pcm.resize(avail / 2);
      for (std::size_t i = 0; i < avail / 2; ++i) {
        out.recording.pcm[i] = static_cast<std::int16_t>(get_u16(&raw[body + 2 * i]));
      }
      return out;
    }
    pos = body + size + (size & 1u);
  }
  throw SchemaError(path.string() + ": no data chunk");
}

}  // namespace diffspeed
