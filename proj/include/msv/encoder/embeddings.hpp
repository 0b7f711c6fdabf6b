#pragma once

// Batch embedding extraction and the embeddings file: "MSVE1", u32 header
// length, key=value header (dim, count, stream tag, mean-normalized flag),
// then per utterance a length-prefixed id and dim float32 LE values.

#include <algorithm>
#include <fstream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "msv/binary_io.hpp"
#include "msv/corpus/synth.hpp"
#include "msv/encoder/encoder.hpp"
#include "msv/kv.hpp"
#include "msv/metrics/metrics.hpp"
#include "msv/metrics/scores_io.hpp"

namespace msv::encoder {

inline constexpr char kEmbeddingsMagic[] = "MSVE1";

struct EmbeddingTable {
  int dim = 0;
  std::string stream_tag;
  bool mean_normalized = false;
  std::vector<std::string> ids;
  std::vector<std::vector<float>> values;

  std::size_t size() const { return ids.size(); }

  void Add(std::string id, std::vector<float> v) {
    if (dim == 0) dim = static_cast<int>(v.size());
    if (static_cast<int>(v.size()) != dim) Fail(ErrorKind::kDimMismatch, "embedding dimension differs in table");
    if (!index_.emplace(id, ids.size()).second) Fail(ErrorKind::kMalformedInput, "duplicate utterance id " + id);
    ids.push_back(std::move(id));
    values.push_back(std::move(v));
  }

  const std::vector<float> &At(const std::string &id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) Fail(ErrorKind::kMalformedInput, "no embedding for utterance " + id);
    return values[it->second];
  }

  bool Contains(const std::string &id) const { return index_.count(id) != 0; }

 private:
  std::map<std::string, std::size_t> index_;
};

/// Runs `fn(i)` for i in [0, n) on up to `threads` workers. Results must be
/// written to per-index slots so the output is independent of scheduling.
template <typename Fn>
void ParallelFor(std::size_t n, unsigned threads, Fn fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += threads) fn(i);
    });
  for (auto &th : pool) th.join();
}

/// Eval-mode embeddings for full-length waveforms, in input order.
template <typename T>
std::vector<std::vector<T>> EmbedWaveforms(const Encoder<T> &model, const std::vector<const dsp::Waveform *> &waves,
                                           unsigned threads = 1) {
  const dsp::MfbeExtractor fe(model.frontend());
  std::vector<std::vector<T>> out(waves.size());
  ParallelFor(waves.size(), threads, [&](std::size_t i) { out[i] = model.Embed(fe.Extract(*waves[i])); });
  return out;
}

/// Embeds every manifest utterance (id = manifest path), optionally
/// subtracting the model's training-set mean.
inline EmbeddingTable EmbedManifest(const Encoder<float> &model, const corpus::Manifest &m, bool mean_normalize,
                                    unsigned threads = 1) {
  std::vector<dsp::Waveform> waves(m.entries.size());
  ParallelFor(m.entries.size(), threads,
              [&](std::size_t i) { waves[i] = corpus::ReadWav(m.Resolve(m.entries[i]).string()); });
  std::vector<const dsp::Waveform *> ptrs;
  for (const auto &w : waves) ptrs.push_back(&w);
  auto emb = EmbedWaveforms(model, ptrs, threads);
  EmbeddingTable table;
  table.dim = model.config().embed_dim;
  table.stream_tag = model.stream_tag();
  table.mean_normalized = mean_normalize;
  for (std::size_t i = 0; i < emb.size(); ++i)
    table.Add(m.entries[i].path, mean_normalize ? model.MeanNormalize(std::move(emb[i])) : std::move(emb[i]));
  return table;
}

inline void WriteEmbeddings(std::ostream &os, const EmbeddingTable &t) {
  KeyValues kv;
  kv["dim"] = std::to_string(t.dim);
  kv["count"] = std::to_string(t.size());
  kv["stream.tag"] = t.stream_tag;
  kv["mean_normalized"] = t.mean_normalized ? "1" : "0";
  os.write(kEmbeddingsMagic, 5);
  io::WriteString(os, FormatKeyValues(kv));
  for (std::size_t i = 0; i < t.size(); ++i) {
    io::WriteString(os, t.ids[i]);
    for (float v : t.values[i]) io::WriteF32(os, v);
  }
}

inline EmbeddingTable ReadEmbeddings(std::istream &is) {
  io::ExpectMagic(is, kEmbeddingsMagic);
  const KeyValues kv = ParseKeyValues(io::ReadString(is));
  for (const char *k : {"dim", "count", "stream.tag", "mean_normalized"})
    if (!kv.count(k)) Fail(ErrorKind::kMalformedInput, std::string("embeddings header lacks ") + k);
  EmbeddingTable t;
  const long dim = ParseInt("dim", kv.at("dim"));
  const long count = ParseInt("count", kv.at("count"));
  if (dim < 1 || count < 0) Fail(ErrorKind::kMalformedInput, "bad embeddings header");
  t.stream_tag = kv.at("stream.tag");
  t.mean_normalized = kv.at("mean_normalized") == "1";
  for (long i = 0; i < count; ++i) {
    std::string id = io::ReadString(is);
    std::vector<float> v(static_cast<std::size_t>(dim));
    for (float &x : v) x = io::ReadF32(is);
    t.Add(std::move(id), std::move(v));
  }
  t.dim = static_cast<int>(dim);
  if (is.peek() != std::char_traits<char>::eof()) Fail(ErrorKind::kMalformedInput, "trailing bytes in embeddings file");
  return t;
}

inline void SaveEmbeddings(const std::string &path, const EmbeddingTable &t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) Fail(ErrorKind::kIoError, "cannot open " + path + " for writing");
  WriteEmbeddings(os, t);
  if (!os) Fail(ErrorKind::kIoError, "write failed for " + path);
}

inline EmbeddingTable LoadEmbeddings(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) Fail(ErrorKind::kIoError, "cannot open " + path);
  return ReadEmbeddings(is);
}

inline std::string TrialId(const metrics::Trial &t) { return t.enroll + "|" + t.test; }

/// One score column per table: score = -||enroll - test||.
inline metrics::ScoreSet ScoreTrials(const std::vector<const EmbeddingTable *> &tables,
                                     const std::vector<std::string> &stream_names, const metrics::TrialList &trials) {
  if (tables.empty() || tables.size() != stream_names.size())
    Fail(ErrorKind::kInvalidArgument, "need one stream name per embeddings table");
  metrics::ScoreSet set;
  set.streams = stream_names;
  for (const metrics::Trial &t : trials) {
    set.trial_ids.push_back(TrialId(t));
    set.labels.push_back(t.label);
    std::vector<double> row;
    for (const EmbeddingTable *tab : tables) {
      const auto &a = tab->At(t.enroll);
      const auto &b = tab->At(t.test);
      row.push_back(metrics::TrialScore<float>(a, b));
    }
    set.scores.push_back(std::move(row));
  }
  return set;
}

}  // namespace msv::encoder
