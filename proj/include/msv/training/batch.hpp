#pragma once

// In-memory training corpus and mini-batch sampling: N distinct speakers,
// M random fixed-length chunks each, grouped speaker-major.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "msv/corpus/synth.hpp"
#include "msv/dsp/frontend.hpp"
#include "msv/error.hpp"
#include "msv/rng.hpp"

namespace msv::training {

struct BatchSpec {
  int n_speakers = 32;
  int utts_per_speaker = 2;
  double chunk_seconds = 2.0;
  int max_utts_per_speaker = 100;
};

inline void Validate(const BatchSpec &s) {
  if (s.n_speakers < 2) Fail(ErrorKind::kInvalidArgument, "a batch needs at least two speakers");
  if (s.utts_per_speaker < 2) Fail(ErrorKind::kInvalidArgument, "a batch needs at least two utterances per speaker");
  if (!(s.chunk_seconds > 0.0)) Fail(ErrorKind::kInvalidArgument, "chunk length must be positive");
  if (s.max_utts_per_speaker < s.utts_per_speaker)
    Fail(ErrorKind::kInvalidArgument, "utterance cap below utterances per speaker");
}

struct Utterance {
  std::string id;
  int label = 0;
  dsp::Waveform wave;
};

/// Utterances with dense speaker labels (index into the sorted speaker list).
struct TrainCorpus {
  std::vector<std::string> speakers;
  std::vector<Utterance> utts;
  std::vector<std::vector<int>> by_label;

  int num_speakers() const { return static_cast<int>(speakers.size()); }
};

inline TrainCorpus MakeCorpus(std::vector<std::string> speaker_of, std::vector<std::string> ids,
                              std::vector<dsp::Waveform> waves) {
  TrainCorpus c;
  c.speakers = speaker_of;
  std::sort(c.speakers.begin(), c.speakers.end());
  c.speakers.erase(std::unique(c.speakers.begin(), c.speakers.end()), c.speakers.end());
  c.by_label.resize(c.speakers.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int label =
        static_cast<int>(std::lower_bound(c.speakers.begin(), c.speakers.end(), speaker_of[i]) - c.speakers.begin());
    c.by_label[label].push_back(static_cast<int>(c.utts.size()));
    c.utts.push_back({std::move(ids[i]), label, std::move(waves[i])});
  }
  return c;
}

inline TrainCorpus LoadCorpus(const corpus::Manifest &m) {
  std::vector<std::string> spk, ids;
  std::vector<dsp::Waveform> waves;
  for (const auto &e : m.entries) {
    spk.push_back(e.speaker);
    ids.push_back(e.path);
    waves.push_back(corpus::ReadWav(m.Resolve(e).string()));
  }
  return MakeCorpus(std::move(spk), std::move(ids), std::move(waves));
}

struct BatchItem {
  int utt = 0;  // index into TrainCorpus::utts
  int label = 0;
  std::size_t offset = 0;  // chunk start in samples
  dsp::Waveform chunk;
};

/// Speakers are drawn without replacement among those with at least M
/// utterances; each speaker's pool is its first max_utts_per_speaker
/// utterances. Items are ordered speaker-major.
inline std::vector<BatchItem> FormBatch(const TrainCorpus &c, const BatchSpec &spec, Rng &rng) {
  Validate(spec);
  const std::size_t chunk = static_cast<std::size_t>(std::lround(spec.chunk_seconds * dsp::kSampleRate));
  std::vector<int> eligible;
  for (int s = 0; s < c.num_speakers(); ++s)
    if (static_cast<int>(c.by_label[s].size()) >= spec.utts_per_speaker) eligible.push_back(s);
  if (static_cast<int>(eligible.size()) < spec.n_speakers)
    Fail(ErrorKind::kInsufficientData, std::to_string(eligible.size()) + " speakers have " +
                                           std::to_string(spec.utts_per_speaker) + " utterances; batch needs " +
                                           std::to_string(spec.n_speakers));

  // Partial Fisher-Yates: the first N entries become the chosen speakers.
  for (int i = 0; i < spec.n_speakers; ++i) {
    const auto j = i + static_cast<int>(rng.Below(eligible.size() - i));
    std::swap(eligible[i], eligible[j]);
  }

  std::vector<BatchItem> batch;
  batch.reserve(static_cast<std::size_t>(spec.n_speakers) * spec.utts_per_speaker);
  for (int i = 0; i < spec.n_speakers; ++i) {
    const int label = eligible[i];
    std::vector<int> pool(c.by_label[label].begin(),
                          c.by_label[label].begin() +
                              std::min<std::size_t>(c.by_label[label].size(), spec.max_utts_per_speaker));
    for (int m = 0; m < spec.utts_per_speaker; ++m) {
      const auto j = m + static_cast<std::size_t>(rng.Below(pool.size() - m));
      std::swap(pool[m], pool[j]);
      const Utterance &u = c.utts[pool[m]];
      if (u.wave.size() < chunk)
        Fail(ErrorKind::kInsufficientData, "utterance " + u.id + " is shorter than the training chunk");
      BatchItem item;
      item.utt = pool[m];
      item.label = label;
      item.offset = static_cast<std::size_t>(rng.Below(u.wave.size() - chunk + 1));
      item.chunk.sample_rate = u.wave.sample_rate;
      item.chunk.samples.assign(u.wave.samples.begin() + static_cast<std::ptrdiff_t>(item.offset),
                                u.wave.samples.begin() + static_cast<std::ptrdiff_t>(item.offset + chunk));
      batch.push_back(std::move(item));
    }
  }
  return batch;
}

}  // namespace msv::training
