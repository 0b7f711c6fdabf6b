#pragma once

// RIFF/WAVE PCM16 mono 16 kHz reader and writer. No resampling or channel
// mixing: anything else is rejected.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "msv/binary_io.hpp"
#include "msv/dsp/frontend.hpp"
#include "msv/error.hpp"

namespace msv::corpus {

namespace detail {

inline std::uint16_t ReadU16(std::istream &is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char *>(b), 2);
  if (is.gcount() != 2) Fail(ErrorKind::kUnsupportedFormat, "truncated WAV header");
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline void WriteU16(std::ostream &os, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  os.write(b, 2);
}

inline std::string ReadTag(std::istream &is) {
  char tag[4];
  is.read(tag, 4);
  if (is.gcount() != 4) return "";
  return std::string(tag, 4);
}

}  // namespace detail

inline dsp::Waveform ReadWav(std::istream &is, const std::string &what = "stream") {
  if (detail::ReadTag(is) != "RIFF") Fail(ErrorKind::kUnsupportedFormat, what + ": not a RIFF file");
  io::ReadU32(is);
  if (detail::ReadTag(is) != "WAVE") Fail(ErrorKind::kUnsupportedFormat, what + ": not a WAVE file");
  bool have_fmt = false;
  while (true) {
    const std::string tag = detail::ReadTag(is);
    if (tag.empty()) Fail(ErrorKind::kUnsupportedFormat, what + ": no data chunk");
    const std::uint32_t size = io::ReadU32(is);
    if (tag == "fmt ") {
      if (size < 16) Fail(ErrorKind::kUnsupportedFormat, what + ": short fmt chunk");
      const std::uint16_t format = detail::ReadU16(is);
      const std::uint16_t channels = detail::ReadU16(is);
      const std::uint32_t rate = io::ReadU32(is);
      io::ReadU32(is);  // byte rate
      detail::ReadU16(is);  // block align
      const std::uint16_t bits = detail::ReadU16(is);
      is.ignore(size - 16 + (size & 1));
      if (format != 1) Fail(ErrorKind::kUnsupportedFormat, what + ": only PCM encoding is supported");
      if (channels != 1)
        Fail(ErrorKind::kUnsupportedFormat, what + ": " + std::to_string(channels) + " channels, expected mono");
      if (rate != static_cast<std::uint32_t>(dsp::kSampleRate))
        Fail(ErrorKind::kUnsupportedFormat, what + ": sample rate " + std::to_string(rate) + ", expected 16000");
      if (bits != 16) Fail(ErrorKind::kUnsupportedFormat, what + ": " + std::to_string(bits) + "-bit, expected 16");
      have_fmt = true;
    } else if (tag == "data") {
      if (!have_fmt) Fail(ErrorKind::kUnsupportedFormat, what + ": data chunk before fmt chunk");
      const std::string raw = io::ReadBytes(is, size, std::size_t{1} << 31);
      dsp::Waveform w;
      w.sample_rate = dsp::kSampleRate;
      w.samples.resize(size / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i) {
        const auto lo = static_cast<unsigned char>(raw[2 * i]);
        const auto hi = static_cast<unsigned char>(raw[2 * i + 1]);
        const auto s = static_cast<std::int16_t>(static_cast<std::uint16_t>(lo | (hi << 8)));
        w.samples[i] = s / 32768.0;
      }
      return w;
    } else {
      is.ignore(size + (size & 1));
    }
  }
}

inline dsp::Waveform ReadWav(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) Fail(ErrorKind::kIoError, "cannot open " + path);
  return ReadWav(is, path);
}

inline std::int16_t QuantizePcm16(double x) {
  const double v = std::round(x * 32768.0);
  return static_cast<std::int16_t>(std::clamp(v, -32768.0, 32767.0));
}

inline void WriteWav(std::ostream &os, const dsp::Waveform &w) {
  if (w.sample_rate != dsp::kSampleRate) Fail(ErrorKind::kUnsupportedFormat, "only 16 kHz audio can be written");
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  os.write("RIFF", 4);
  io::WriteU32(os, 36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  io::WriteU32(os, 16);
  detail::WriteU16(os, 1);
  detail::WriteU16(os, 1);
  io::WriteU32(os, dsp::kSampleRate);
  io::WriteU32(os, dsp::kSampleRate * 2);
  detail::WriteU16(os, 2);
  detail::WriteU16(os, 16);
  os.write("data", 4);
  io::WriteU32(os, data_bytes);
  std::string buf(data_bytes, '\0');
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    const auto s = static_cast<std::uint16_t>(QuantizePcm16(w.samples[i]));
    buf[2 * i] = static_cast<char>(s & 0xff);
    buf[2 * i + 1] = static_cast<char>(s >> 8);
  }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline void WriteWav(const std::string &path, const dsp::Waveform &w) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) Fail(ErrorKind::kIoError, "cannot open " + path + " for writing");
  WriteWav(os, w);
  if (!os) Fail(ErrorKind::kIoError, "failed writing " + path);
}

}  // namespace msv::corpus
