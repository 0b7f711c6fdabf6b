#pragma once

// Log mel filter-bank energy (MFBE) front end with a selectable analysis
// band [f_min, f_max].

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "msv/dsp/fft.hpp"
#include "msv/error.hpp"

namespace msv::dsp {

inline constexpr int kSampleRate = 16000;

struct Waveform {
  std::vector<double> samples;
  int sample_rate = kSampleRate;

  std::size_t size() const { return samples.size(); }
};

struct FrontendConfig {
  int n_mels = 40;
  double f_min = 20.0;
  double f_max = 8000.0;
  double win_ms = 25.0;
  double step_ms = 10.0;
  int n_fft = 512;
  double preemph = 0.97;
  double log_floor = 1e-10;

  int WindowSamples(int sample_rate = kSampleRate) const {
    return static_cast<int>(std::lround(win_ms * sample_rate / 1000.0));
  }
  int StepSamples(int sample_rate = kSampleRate) const {
    return static_cast<int>(std::lround(step_ms * sample_rate / 1000.0));
  }

  /// Canonical text form; two configs are interchangeable iff these match.
  std::string Canonical() const {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "n_mels=%d;f_min=%.17g;f_max=%.17g;win_ms=%.17g;step_ms=%.17g;"
                  "n_fft=%d;preemph=%.17g;log_floor=%.17g",
                  n_mels, f_min, f_max, win_ms, step_ms, n_fft, preemph, log_floor);
    return buf;
  }

  /// FNV-1a over Canonical(). Stored with features and models so a stream
  /// never consumes features computed for another sub-band.
  std::uint64_t Hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : Canonical()) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  bool operator==(const FrontendConfig &) const = default;
};

inline void Validate(const FrontendConfig &cfg, int sample_rate = kSampleRate) {
  if (cfg.n_mels < 2) Fail(ErrorKind::kInvalidArgument, "n_mels must be >= 2");
  if (!(cfg.f_min >= 0.0) || !(cfg.f_min < cfg.f_max))
    Fail(ErrorKind::kBadRange, "require 0 <= f_min < f_max");
  if (cfg.f_max > sample_rate / 2.0) Fail(ErrorKind::kBadRange, "f_max above Nyquist");
  if (!(cfg.preemph >= 0.0 && cfg.preemph < 1.0))
    Fail(ErrorKind::kInvalidArgument, "pre-emphasis must lie in [0, 1)");
  if (!(cfg.log_floor > 0.0)) Fail(ErrorKind::kInvalidArgument, "log_floor must be positive");
  const int win = cfg.WindowSamples(sample_rate);
  const int step = cfg.StepSamples(sample_rate);
  if (win < 2 || step < 1 || step > win) Fail(ErrorKind::kInvalidArgument, "bad window/step");
  if (!IsPowerOfTwo(static_cast<std::size_t>(cfg.n_fft)) || cfg.n_fft < win)
    Fail(ErrorKind::kInvalidArgument, "n_fft must be a power of two >= window length");
}

inline Waveform PreEmphasize(const Waveform &w, double alpha) {
  Waveform out{std::vector<double>(w.size()), w.sample_rate};
  if (w.samples.empty()) return out;
  out.samples[0] = w.samples[0];
  for (std::size_t n = 1; n < w.size(); ++n)
    out.samples[n] = w.samples[n] - alpha * w.samples[n - 1];
  return out;
}

inline std::vector<double> HammingWindow(int length) {
  std::vector<double> win(static_cast<std::size_t>(length));
  const double denom = static_cast<double>(length - 1);
  for (int n = 0; n < length; ++n)
    win[n] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * n / denom);
  return win;
}

/// Frames stored row-major, one windowed frame of `frame_length` per row.
struct Frames {
  int n_frames = 0;
  int frame_length = 0;
  std::vector<double> data;

  std::span<const double> Frame(int t) const {
    return {data.data() + static_cast<std::size_t>(t) * frame_length,
            static_cast<std::size_t>(frame_length)};
  }
};

inline int FrameCount(std::size_t n_samples, const FrontendConfig &cfg, int sample_rate = kSampleRate) {
  return static_cast<int>(n_samples / static_cast<std::size_t>(cfg.StepSamples(sample_rate)));
}

/// The signal is right-padded with (win - step) zeros so that a T-sample
/// input yields exactly floor(T / step) full frames.
inline Frames FrameAndWindow(const Waveform &w, const FrontendConfig &cfg) {
  const int win = cfg.WindowSamples(w.sample_rate);
  const int step = cfg.StepSamples(w.sample_rate);
  if (w.size() < static_cast<std::size_t>(win))
    Fail(ErrorKind::kTooShort, "waveform has " + std::to_string(w.size()) +
                                   " samples, need at least " + std::to_string(win));
  Frames frames;
  frames.n_frames = FrameCount(w.size(), cfg, w.sample_rate);
  frames.frame_length = win;
  frames.data.assign(static_cast<std::size_t>(frames.n_frames) * win, 0.0);
  const std::vector<double> window = HammingWindow(win);
  for (int t = 0; t < frames.n_frames; ++t) {
    const std::size_t start = static_cast<std::size_t>(t) * step;
    double *dst = frames.data.data() + static_cast<std::size_t>(t) * win;
    for (int n = 0; n < win; ++n) {
      const std::size_t idx = start + n;
      const double x = idx < w.size() ? w.samples[idx] : 0.0;
      dst[n] = x * window[n];
    }
  }
  return frames;
}

/// |X_k|^2 for k = 0..n_fft/2 of the zero-padded frame.
inline std::vector<double> PowerSpectrum(std::span<const double> frame, const FftPlan &plan) {
  const std::size_t n_fft = plan.size();
  if (frame.size() > n_fft) Fail(ErrorKind::kShapeMismatch, "frame longer than FFT size");
  std::vector<std::complex<double>> buf(n_fft);
  std::copy(frame.begin(), frame.end(), buf.begin());
  plan.Forward(buf);
  std::vector<double> power(n_fft / 2 + 1);
  for (std::size_t k = 0; k < power.size(); ++k) power[k] = std::norm(buf[k]);
  return power;
}

inline std::vector<double> PowerSpectrum(std::span<const double> frame, int n_fft) {
  return PowerSpectrum(frame, FftPlan(static_cast<std::size_t>(n_fft)));
}

inline double MelScale(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double InverseMelScale(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

struct MelFilterbank {
  int n_mels = 0;
  int n_bins = 0;  // n_fft / 2 + 1
  std::vector<double> weights;  // n_mels x n_bins, row-major
  std::vector<double> center_freqs;
  std::vector<double> edge_freqs;  // n_mels + 2 triangle corners in Hz

  double Bandwidth(int m) const { return edge_freqs[m + 2] - edge_freqs[m]; }
  double Weight(int m, int k) const { return weights[static_cast<std::size_t>(m) * n_bins + k]; }
};

/// Triangular filters with corners equally spaced on the mel scale between
/// mel(f_min) and mel(f_max). Bins outside [f_min, f_max] get exactly zero
/// weight. A filter narrower than the FFT bin spacing would be empty; it is
/// given unit weight on the in-range bin nearest its center instead.
inline MelFilterbank BuildFilterbank(const FrontendConfig &cfg, int sample_rate = kSampleRate) {
  Validate(cfg, sample_rate);
  MelFilterbank fb;
  fb.n_mels = cfg.n_mels;
  fb.n_bins = cfg.n_fft / 2 + 1;
  fb.weights.assign(static_cast<std::size_t>(fb.n_mels) * fb.n_bins, 0.0);
  fb.center_freqs.resize(fb.n_mels);

  const double bin_hz = static_cast<double>(sample_rate) / cfg.n_fft;
  const double mel_lo = MelScale(cfg.f_min);
  const double mel_hi = MelScale(cfg.f_max);
  const double mel_step = (mel_hi - mel_lo) / (cfg.n_mels + 1);
  fb.edge_freqs.resize(fb.n_mels + 2);
  for (int i = 0; i < fb.n_mels + 2; ++i) fb.edge_freqs[i] = InverseMelScale(mel_lo + i * mel_step);
  fb.edge_freqs.front() = cfg.f_min;
  fb.edge_freqs.back() = cfg.f_max;

  for (int m = 0; m < fb.n_mels; ++m) {
    const double left = mel_lo + m * mel_step;
    const double center = mel_lo + (m + 1) * mel_step;
    const double right = mel_lo + (m + 2) * mel_step;
    fb.center_freqs[m] = InverseMelScale(center);
    bool any = false;
    for (int k = 0; k < fb.n_bins; ++k) {
      const double hz = k * bin_hz;
      if (hz < cfg.f_min || hz > cfg.f_max) continue;
      const double mel = MelScale(hz);
      double w = 0.0;
      if (mel > left && mel <= center)
        w = (mel - left) / (center - left);
      else if (mel > center && mel < right)
        w = (right - mel) / (right - center);
      if (w > 0.0) {
        fb.weights[static_cast<std::size_t>(m) * fb.n_bins + k] = w;
        any = true;
      }
    }
    if (!any) {
      int best = -1;
      double best_dist = 0.0;
      for (int k = 0; k < fb.n_bins; ++k) {
        const double hz = k * bin_hz;
        if (hz < cfg.f_min || hz > cfg.f_max) continue;
        const double dist = std::abs(hz - fb.center_freqs[m]);
        if (best < 0 || dist < best_dist) {
          best = k;
          best_dist = dist;
        }
      }
      if (best < 0) Fail(ErrorKind::kBadRange, "no FFT bin inside [f_min, f_max]");
      fb.weights[static_cast<std::size_t>(m) * fb.n_bins + best] = 1.0;
    }
  }
  return fb;
}

/// Log mel energies, n_mels x n_frames row-major, with per-utterance mean
/// normalization applied along time.
struct FeatureMatrix {
  int n_mels = 0;
  int n_frames = 0;
  std::vector<double> values;
  FrontendConfig config;

  double At(int m, int t) const { return values[static_cast<std::size_t>(m) * n_frames + t]; }
  std::uint64_t ConfigHash() const { return config.Hash(); }
};

/// Per-row temporal mean subtraction.
inline void ApplyCmn(FeatureMatrix &feats) {
  for (int m = 0; m < feats.n_mels; ++m) {
    double *row = feats.values.data() + static_cast<std::size_t>(m) * feats.n_frames;
    // Shifted by the first value so constant rows normalize to exact zeros.
    const double shift = row[0];
    double sum = 0.0;
    for (int t = 0; t < feats.n_frames; ++t) sum += row[t] - shift;
    const double mean = shift + sum / feats.n_frames;
    for (int t = 0; t < feats.n_frames; ++t) row[t] -= mean;
  }
}

/// Feature extraction with a prebuilt filterbank and FFT plan; used by the
/// training loop so each chunk does not rebuild them.
class MfbeExtractor {
 public:
  explicit MfbeExtractor(const FrontendConfig &cfg, int sample_rate = kSampleRate)
      : cfg_(cfg),
        sample_rate_(sample_rate),
        filterbank_(BuildFilterbank(cfg, sample_rate)),
        plan_(static_cast<std::size_t>(cfg.n_fft)) {
    // Index range of nonzero weights per filter, to skip empty bins.
    for (int m = 0; m < filterbank_.n_mels; ++m) {
      int lo = filterbank_.n_bins, hi = -1;
      for (int k = 0; k < filterbank_.n_bins; ++k) {
        if (filterbank_.Weight(m, k) != 0.0) {
          lo = std::min(lo, k);
          hi = std::max(hi, k);
        }
      }
      support_.push_back({lo, hi});
    }
  }

  const FrontendConfig &config() const { return cfg_; }
  const MelFilterbank &filterbank() const { return filterbank_; }

  FeatureMatrix Extract(const Waveform &w) const {
    if (w.sample_rate != sample_rate_)
      Fail(ErrorKind::kUnsupportedFormat, "unexpected sample rate " + std::to_string(w.sample_rate));
    const Frames frames = FrameAndWindow(PreEmphasize(w, cfg_.preemph), cfg_);
    FeatureMatrix feats;
    feats.n_mels = cfg_.n_mels;
    feats.n_frames = frames.n_frames;
    feats.config = cfg_;
    feats.values.assign(static_cast<std::size_t>(feats.n_mels) * feats.n_frames, 0.0);
    for (int t = 0; t < frames.n_frames; ++t) {
      const std::vector<double> power = PowerSpectrum(frames.Frame(t), plan_);
      for (int m = 0; m < cfg_.n_mels; ++m) {
        double energy = 0.0;
        for (int k = support_[m].first; k <= support_[m].second; ++k)
          energy += filterbank_.Weight(m, k) * power[k];
        feats.values[static_cast<std::size_t>(m) * feats.n_frames + t] =
            std::log(std::max(energy, cfg_.log_floor));
      }
    }
    ApplyCmn(feats);
    return feats;
  }

 private:
  FrontendConfig cfg_;
  int sample_rate_;
  MelFilterbank filterbank_;
  FftPlan plan_;
  std::vector<std::pair<int, int>> support_;
};

inline FeatureMatrix ExtractMfbe(const Waveform &w, const FrontendConfig &cfg) {
  return MfbeExtractor(cfg, w.sample_rate).Extract(w);
}

}  // namespace msv::dsp
