#pragma once

// Deterministic synthetic speakers. Identity lives in two places: a
// harmonic source (f0 plus eight harmonic amplitudes, below ~2.4 kHz) and
// two noise resonances between 2 and 6 kHz. Both are gated by syllable-like
// on/off envelopes so that per-utterance mean normalization of the log
// filter-bank energies keeps the speaker's spectral contrast.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "msv/corpus/wav.hpp"
#include "msv/dsp/frontend.hpp"
#include "msv/error.hpp"
#include "msv/rng.hpp"

namespace msv::corpus {

struct Resonance {
  double center_hz = 0.0;
  double bandwidth_hz = 0.0;
};

struct SpeakerProfile {
  std::string id;
  double f0 = 150.0;
  std::array<double, 8> harmonic_amps{};
  std::array<Resonance, 2> hf_resonances{};
};

inline std::string SpeakerId(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "spk%03d", index);
  return buf;
}

inline SpeakerProfile MakeSpeaker(std::uint64_t corpus_seed, int index) {
  Rng rng = Rng::Derive(corpus_seed, 0x5eed0000ULL + static_cast<std::uint64_t>(index));
  SpeakerProfile p;
  p.id = SpeakerId(index);
  p.f0 = rng.Uniform(100.0, 300.0);
  for (double &a : p.harmonic_amps) a = rng.Uniform(0.1, 1.0);
  for (Resonance &r : p.hf_resonances) {
    r.center_hz = rng.Uniform(2000.0, 6000.0);
    r.bandwidth_hz = rng.Uniform(100.0, 400.0);
  }
  return p;
}

namespace detail {

/// Gate in [0, 1]: alternating on/off segments with 10 ms raised-cosine
/// edges. Durations in seconds are drawn uniformly from the given ranges.
inline std::vector<double> Envelope(std::size_t n, Rng &rng, double on_lo, double on_hi, double off_lo,
                                    double off_hi) {
  std::vector<double> env(n, 0.0);
  const double fs = dsp::kSampleRate;
  const std::size_t ramp = static_cast<std::size_t>(0.01 * fs);
  std::size_t pos = static_cast<std::size_t>(rng.Uniform(0.0, off_hi) * fs);
  while (pos < n) {
    const std::size_t len = static_cast<std::size_t>(rng.Uniform(on_lo, on_hi) * fs);
    for (std::size_t i = 0; i < len && pos + i < n; ++i) {
      double g = 1.0;
      if (i < ramp) g = 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(i) / ramp);
      if (len - i <= ramp) g = std::min(g, 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(len - i) / ramp));
      env[pos + i] = g;
    }
    pos += len + static_cast<std::size_t>(rng.Uniform(off_lo, off_hi) * fs);
  }
  return env;
}

/// Constant 0 dB peak-gain band-pass biquad applied to `x`.
inline std::vector<double> BandPass(const std::vector<double> &x, double center, double bandwidth) {
  const double w0 = 2.0 * std::numbers::pi * center / dsp::kSampleRate;
  const double q = center / bandwidth;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double a0 = 1.0 + alpha;
  const double b0 = alpha / a0, b2 = -alpha / a0;
  const double a1 = -2.0 * std::cos(w0) / a0, a2 = (1.0 - alpha) / a0;
  std::vector<double> y(x.size());
  double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = b0 * x[i] + b2 * x2 - a1 * y1 - a2 * y2;
    x2 = x1;
    x1 = x[i];
    y2 = y1;
    y1 = v;
    y[i] = v;
  }
  return y;
}

inline double MeanPower(const std::vector<double> &x) {
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return x.empty() ? 0.0 : acc / static_cast<double>(x.size());
}

}  // namespace detail

/// One utterance of `seconds` duration. Deterministic in (corpus_seed,
/// speaker, utterance index); independent of generation order.
inline dsp::Waveform SynthesizeUtterance(const SpeakerProfile &spk, int speaker_index, int utt_index,
                                         double seconds, std::uint64_t corpus_seed) {
  const std::size_t n = static_cast<std::size_t>(std::lround(seconds * dsp::kSampleRate));
  Rng rng = Rng::Derive(corpus_seed, (static_cast<std::uint64_t>(speaker_index) << 32) |
                                         static_cast<std::uint64_t>(utt_index));
  const double fs = dsp::kSampleRate;

  // Harmonic source, gated by "voiced" segments.
  std::vector<double> voiced(n, 0.0);
  for (std::size_t h = 0; h < spk.harmonic_amps.size(); ++h) {
    const double freq = spk.f0 * static_cast<double>(h + 1);
    const double amp = spk.harmonic_amps[h] * rng.Uniform(0.9, 1.1);
    const double phase = rng.Uniform(0.0, 2.0 * std::numbers::pi);
    if (freq >= fs / 2) continue;
    for (std::size_t i = 0; i < n; ++i)
      voiced[i] += amp * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / fs + phase);
  }
  const std::vector<double> voiced_env = detail::Envelope(n, rng, 0.15, 0.40, 0.05, 0.15);
  for (std::size_t i = 0; i < n; ++i) voiced[i] *= voiced_env[i];

  // Band-passed noise at the speaker's resonances, with its own gating.
  std::vector<double> excitation(n);
  for (double &v : excitation) v = rng.Normal();
  std::vector<double> hf(n, 0.0);
  for (const Resonance &r : spk.hf_resonances) {
    const std::vector<double> band = detail::BandPass(excitation, r.center_hz, r.bandwidth_hz);
    for (std::size_t i = 0; i < n; ++i) hf[i] += band[i];
  }
  const std::vector<double> hf_env = detail::Envelope(n, rng, 0.08, 0.25, 0.05, 0.20);
  for (std::size_t i = 0; i < n; ++i) hf[i] *= hf_env[i];

  const double pv = detail::MeanPower(voiced), ph = detail::MeanPower(hf);
  const double hf_gain = ph > 0.0 && pv > 0.0 ? std::sqrt(0.5 * pv / ph) : 0.0;
  std::vector<double> clean(n);
  for (std::size_t i = 0; i < n; ++i) clean[i] = voiced[i] + hf_gain * hf[i];

  // White noise at 20 dB SNR.
  const double noise_sd = std::sqrt(detail::MeanPower(clean) / 100.0);
  for (double &v : clean) v += noise_sd * rng.Normal();

  double peak = 0.0;
  for (double v : clean) peak = std::max(peak, std::abs(v));
  const double gain = rng.Uniform(0.5, 1.0) * (peak > 0.0 ? 0.9 / peak : 0.0);
  dsp::Waveform w;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) w.samples[i] = clean[i] * gain;
  return w;
}

struct ManifestEntry {
  std::string speaker;
  std::string path;  // as written in the manifest; also the utterance id
};

/// Utterance list plus the directory relative paths are resolved against.
struct Manifest {
  std::filesystem::path base_dir;
  std::vector<ManifestEntry> entries;

  std::filesystem::path Resolve(const ManifestEntry &e) const {
    const std::filesystem::path p(e.path);
    return p.is_absolute() ? p : base_dir / p;
  }

  std::vector<std::string> Speakers() const {
    std::vector<std::string> out;
    for (const auto &e : entries)
      if (std::find(out.begin(), out.end(), e.speaker) == out.end()) out.push_back(e.speaker);
    std::sort(out.begin(), out.end());
    return out;
  }
};

inline void WriteManifest(const std::string &path, const Manifest &m) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) Fail(ErrorKind::kIoError, "cannot open " + path + " for writing");
  for (const auto &e : m.entries) os << e.speaker << '\t' << e.path << '\n';
}

inline Manifest ReadManifest(const std::string &path) {
  std::ifstream is(path);
  if (!is) Fail(ErrorKind::kIoError, "cannot open " + path);
  Manifest m;
  m.base_dir = std::filesystem::path(path).parent_path();
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size() || line.find('\t', tab + 1) != std::string::npos)
      Fail(ErrorKind::kMalformedInput, path + ":" + std::to_string(lineno) + ": expected 'speaker_id<TAB>path'");
    m.entries.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return m;
}

struct CorpusSpec {
  int n_speakers = 20;
  int utts_per_speaker = 20;
  double seconds_per_utt = 3.0;
  std::uint64_t seed = 1;
};

/// Writes <out_dir>/wav/<spk>/<utt>.wav for every utterance and returns the
/// manifest (paths relative to out_dir). Does not write the manifest file.
inline Manifest GenerateCorpus(const CorpusSpec &spec, const std::string &out_dir) {
  if (spec.n_speakers < 2) Fail(ErrorKind::kInvalidArgument, "need at least two speakers");
  if (spec.utts_per_speaker < 2) Fail(ErrorKind::kInvalidArgument, "need at least two utterances per speaker");
  if (!(spec.seconds_per_utt >= 0.025)) Fail(ErrorKind::kInvalidArgument, "utterances must be at least 25 ms");
  Manifest m;
  m.base_dir = out_dir;
  std::error_code ec;
  for (int s = 0; s < spec.n_speakers; ++s) {
    const SpeakerProfile spk = MakeSpeaker(spec.seed, s);
    const std::filesystem::path dir = std::filesystem::path(out_dir) / "wav" / spk.id;
    std::filesystem::create_directories(dir, ec);
    if (ec) Fail(ErrorKind::kIoError, "cannot create " + dir.string() + ": " + ec.message());
    for (int u = 0; u < spec.utts_per_speaker; ++u) {
      char name[32];
      std::snprintf(name, sizeof(name), "utt%03d.wav", u);
      const std::string rel = "wav/" + spk.id + "/" + name;
      WriteWav((std::filesystem::path(out_dir) / rel).string(),
               SynthesizeUtterance(spk, s, u, spec.seconds_per_utt, spec.seed));
      m.entries.push_back({spk.id, rel});
    }
  }
  return m;
}

/// Splits every speaker's utterances in manifest order into consecutive
/// parts of the given sizes (the last part takes the remainder).
inline std::vector<Manifest> SplitPerSpeaker(const Manifest &m, const std::vector<int> &sizes) {
  std::vector<Manifest> parts(sizes.size() + 1);
  for (auto &p : parts) p.base_dir = m.base_dir;
  std::map<std::string, int> seen;
  for (const auto &e : m.entries) {
    int idx = seen[e.speaker]++;
    std::size_t part = 0;
    while (part < sizes.size() && idx >= sizes[part]) idx -= sizes[part++];
    parts[part].entries.push_back(e);
  }
  return parts;
}

}  // namespace msv::corpus
