#pragma once

// Command suite: gen-corpus, train, embed, score, fuse-search, eval, det.
// RunCli takes the arguments after the program name and returns the exit
// code: 0 success, 1 usage error, 2 malformed input file, 3 runtime failure.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "msv/corpus/synth.hpp"
#include "msv/corpus/trials.hpp"
#include "msv/encoder/embeddings.hpp"
#include "msv/encoder/model_io.hpp"
#include "msv/error.hpp"
#include "msv/fusion/fusion.hpp"
#include "msv/kv.hpp"
#include "msv/metrics/metrics.hpp"
#include "msv/metrics/scores_io.hpp"
#include "msv/training/trainer.hpp"

namespace msv::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitInput = 2;
inline constexpr int kExitRuntime = 3;

/// Carries an exit code to RunCli.
class Failure : public std::runtime_error {
 public:
  Failure(int code, const std::string &what) : std::runtime_error(what), code_(code) {}
  int code() const noexcept { return code_; }

 private:
  int code_;
};

[[noreturn]] inline void Usage(const std::string &what) { throw Failure(kExitUsage, what); }

/// Runs `fn`, reporting library errors as malformed input.
template <typename Fn>
auto ReadInput(Fn &&fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error &e) {
    throw Failure(kExitInput, e.what());
  }
}

/// Runs `fn`, reporting library errors as bad flag values.
template <typename Fn>
auto CheckFlags(Fn &&fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error &e) {
    throw Failure(kExitUsage, e.what());
  }
}

/// Every tunable of a run. Defaults are the full-scale values.
struct RunConfig {
  dsp::FrontendConfig frontend;
  encoder::EncoderConfig encoder;
  training::TrainConfig train;
  metrics::DcfParams dcf;
  double fusion_step = 0.01;
  double fusion_k_min = 0.0;
  fusion::Objective objective = fusion::Objective::kMinDcf;
};

inline bool ParseBool(const std::string &key, const std::string &v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  Fail(ErrorKind::kMalformedInput, key + ": expected true or false");
}

inline fusion::Objective ParseObjective(const std::string &v) {
  if (v == "mindcf") return fusion::Objective::kMinDcf;
  if (v == "eer") return fusion::Objective::kEer;
  Fail(ErrorKind::kMalformedInput, "objective must be mindcf or eer, got '" + v + "'");
}

inline int ToInt(const std::string &key, const std::string &v) { return static_cast<int>(ParseInt(key, v)); }

/// Applies one key; unknown keys are rejected.
inline void ApplyKey(RunConfig &c, const std::string &key, const std::string &v) {
  if (key == "encoder.n_mels") Fail(ErrorKind::kMalformedInput, "encoder.n_mels follows frontend.n_mels; set that instead");
  if (encoder::SetFrontendKey(c.frontend, key, v) || encoder::SetEncoderKey(c.encoder, key, v)) return;
  auto &t = c.train;
  if (key == "train.epochs") t.epochs = ToInt(key, v);
  else if (key == "train.lr") t.lr = ParseDouble(key, v);
  else if (key == "train.lr_decay") t.lr_decay = ParseDouble(key, v);
  else if (key == "train.decay_every") t.decay_every = ToInt(key, v);
  else if (key == "train.batch") t.batch = ToInt(key, v);
  else if (key == "train.M") t.utts_per_speaker = ToInt(key, v);
  else if (key == "train.chunk_seconds") t.chunk_seconds = ParseDouble(key, v);
  else if (key == "train.max_utts_per_speaker") t.max_utts_per_speaker = ToInt(key, v);
  else if (key == "train.val_every") t.val_every = ToInt(key, v);
  else if (key == "train.seed") t.seed = static_cast<std::uint64_t>(ParseInt(key, v));
  else if (key == "eval.p_target") c.dcf.p_target = ParseDouble(key, v);
  else if (key == "eval.c_fa") c.dcf.c_fa = ParseDouble(key, v);
  else if (key == "eval.c_fr") c.dcf.c_fr = ParseDouble(key, v);
  else if (key == "eval.normalize") c.dcf.normalize = ParseBool(key, v);
  else if (key == "fusion.step") c.fusion_step = ParseDouble(key, v);
  else if (key == "fusion.k_min") c.fusion_k_min = ParseDouble(key, v);
  else if (key == "fusion.objective") c.objective = ParseObjective(v);
  else Fail(ErrorKind::kMalformedInput, "unknown config key '" + key + "'");
}

inline RunConfig ParseRunConfig(const std::string &text) {
  RunConfig c;
  for (const auto &[k, v] : ParseKeyValues(text)) ApplyKey(c, k, v);
  return c;
}

inline std::string ReadTextFile(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) Fail(ErrorKind::kIoError, "cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline RunConfig LoadRunConfig(const std::string &path) {
  if (path.empty()) return RunConfig{};
  return ReadInput([&] { return ParseRunConfig(ReadTextFile(path)); });
}

/// Module invariants on the merged configuration. The encoder input
/// extents follow the front end and the training chunk.
inline void Finalize(RunConfig &c) {
  c.encoder.n_mels = c.frontend.n_mels;
  dsp::Validate(c.frontend);
  if (!(c.train.chunk_seconds > 0.0)) Fail(ErrorKind::kInvalidArgument, "chunk_seconds must be positive");
  c.encoder.n_frames = dsp::FrameCount(
      static_cast<std::size_t>(std::lround(c.train.chunk_seconds * dsp::kSampleRate)), c.frontend);
  encoder::Validate(c.encoder);
  training::Validate(c.train);
  metrics::Validate(c.dcf);
  fusion::GridDivisions(c.fusion_step);
  if (!(c.fusion_k_min >= 0.0 && c.fusion_k_min <= 0.5))
    Fail(ErrorKind::kInvalidArgument, "fusion k_min must lie in [0, 0.5]");
}

/// Stream label for a band: FB for the full band, otherwise "fmin-fmax".
inline std::string DefaultTag(double f_min, double f_max) {
  const std::string tag = encoder::StreamTagFor(f_min, f_max);
  if (tag != "custom") return tag;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g-%.10g", f_min, f_max);
  return buf;
}

inline std::vector<std::string> Reversed(std::vector<std::string> v) {
  std::reverse(v.begin(), v.end());
  return v;
}

/// Scores selected by --weights (fused), --stream, or the only column.
inline std::vector<double> SelectScores(const metrics::ScoreSet &set, const std::string &weights_path,
                                        const std::string &stream) {
  if (!weights_path.empty()) {
    const auto w = ReadInput([&] { return fusion::LoadWeights(weights_path); });
    if (set.num_streams() != 3) Usage("--weights needs a scores file with three streams");
    return fusion::FuseScores(fusion::NormalizeScores(set), w.weights);
  }
  if (!stream.empty()) return set.Column(CheckFlags([&] { return set.StreamIndex(stream); }));
  if (set.num_streams() != 1) Usage("scores file has several streams; pass --stream or --weights");
  return set.Column(0);
}

/// Normal-deviate values are clamped so CSV and SVG output stay finite.
inline constexpr double kProbitClamp = 1e-6;

inline double ClampedProbit(double p) { return metrics::Probit(std::clamp(p, kProbitClamp, 1.0 - kProbitClamp)); }

inline void WriteDetCsv(std::ostream &os, const std::vector<metrics::DetPoint> &pts) {
  os << "threshold,far,frr,probit_far,probit_frr\n";
  for (const auto &p : pts)
    os << FormatDouble(p.threshold) << ',' << FormatDouble(p.far) << ',' << FormatDouble(p.frr) << ','
       << FormatDouble(ClampedProbit(p.far)) << ',' << FormatDouble(ClampedProbit(p.frr)) << '\n';
}

/// DET plot on normal-deviate axes from 0.1% to 50%.
inline void WriteDetSvg(std::ostream &os, const std::vector<metrics::DetPoint> &pts) {
  constexpr double size = 400.0, margin = 50.0;
  const double lo = metrics::Probit(0.001), hi = metrics::Probit(0.5);
  auto map = [&](double p) { return (std::clamp(ClampedProbit(p), lo, hi) - lo) / (hi - lo) * size; };
  char buf[160];
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"500\" height=\"500\">\n";
  os << "<rect x=\"50\" y=\"50\" width=\"400\" height=\"400\" fill=\"none\" stroke=\"black\"/>\n";
  for (double tick : {0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5}) {
    const double v = map(tick);
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.2f\" y1=\"50\" x2=\"%.2f\" y2=\"450\" stroke=\"#ddd\"/>"
                  "<line x1=\"50\" y1=\"%.2f\" x2=\"450\" y2=\"%.2f\" stroke=\"#ddd\"/>\n",
                  margin + v, margin + v, margin + size - v, margin + size - v);
    os << buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.2f\" y=\"468\" font-size=\"10\" text-anchor=\"middle\">%g</text>"
                  "<text x=\"45\" y=\"%.2f\" font-size=\"10\" text-anchor=\"end\">%g</text>\n",
                  margin + v, tick * 100.0, margin + size - v + 3.0, tick * 100.0);
    os << buf;
  }
  os << "<text x=\"250\" y=\"490\" font-size=\"12\" text-anchor=\"middle\">FAR (%)</text>\n";
  os << "<text x=\"12\" y=\"250\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 12 250)\">"
        "FRR (%)</text>\n";
  os << "<polyline fill=\"none\" stroke=\"#c00\" stroke-width=\"1.5\" points=\"";
  for (const auto &p : pts) {
    std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", margin + map(p.far), margin + size - map(p.frr));
    os << buf;
  }
  os << "\"/>\n</svg>\n";
}

template <typename Write>
void WriteOutput(const std::string &path, Write &&write) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) Fail(ErrorKind::kIoError, "cannot open " + path + " for writing");
  write(os);
  if (!os) Fail(ErrorKind::kIoError, "write failed: " + path);
}

inline std::vector<int> ParseSplit(const std::string &s) {
  const auto v = CheckFlags([&] { return ParseIntList("--split", s); });
  std::vector<int> out;
  for (long x : v) {
    if (x < 1) Usage("--split sizes must be positive");
    out.push_back(static_cast<int>(x));
  }
  if (out.size() != 2) Usage("--split takes two sizes: train,dev (the rest is test)");
  return out;
}

inline int RunCli(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
  CLI::App app{"Multi-stream speaker verification toolkit", "msv"};
  app.require_subcommand(1);

  // gen-corpus
  struct {
    std::string out;
    int speakers = 20, utts = 20, trials = 400;
    double seconds = 3.0;
    std::uint64_t seed = 1;
    std::string split = "10,5";
  } g;
  auto *gen = app.add_subcommand("gen-corpus", "Synthesize a corpus, per-speaker splits and trial lists");
  gen->add_option("--out", g.out, "Output directory")->required();
  gen->add_option("--speakers", g.speakers, "Number of speakers");
  gen->add_option("--utts", g.utts, "Utterances per speaker");
  gen->add_option("--seconds", g.seconds, "Seconds per utterance");
  gen->add_option("--seed", g.seed, "Corpus seed");
  gen->add_option("--split", g.split, "Per-speaker train,dev sizes; the rest is test");
  gen->add_option("--trials", g.trials, "Trials per dev and test list");

  // train
  struct {
    std::string manifest, out, log, val_manifest, val_trials, config, tag;
    double f_min = 0.0, f_max = 0.0, lr = 0.0;
    int epochs = 0, batch = 0;
    std::uint64_t seed = 0;
    unsigned threads = 1;
  } t;
  auto *train = app.add_subcommand("train", "Train one stream on a sub-band");
  train->add_option("--manifest", t.manifest, "Training manifest")->required();
  train->add_option("--f-min", t.f_min, "Lower band edge in Hz")->required();
  train->add_option("--f-max", t.f_max, "Upper band edge in Hz")->required();
  train->add_option("--out", t.out, "Model file")->required();
  train->add_option("--log", t.log, "Epoch log (default: <out>.log)");
  train->add_option("--val-manifest", t.val_manifest, "Validation manifest");
  train->add_option("--val-trials", t.val_trials, "Validation trial list");
  train->add_option("--config", t.config, "Run config file");
  auto *o_epochs = train->add_option("--epochs", t.epochs, "Epochs");
  auto *o_lr = train->add_option("--lr", t.lr, "Initial learning rate");
  auto *o_batch = train->add_option("--batch", t.batch, "Utterances per batch");
  auto *o_seed = train->add_option("--seed", t.seed, "Training seed");
  train->add_option("--threads", t.threads, "Worker threads for embedding passes");
  train->add_option("--tag", t.tag, "Stream name (default: FB or fmin-fmax)");

  // embed
  struct {
    std::string model, manifest, out;
    bool raw = false;
    unsigned threads = 1;
  } e;
  auto *embed = app.add_subcommand("embed", "Extract embeddings for every utterance in a manifest");
  embed->add_option("--model", e.model, "Model file")->required();
  embed->add_option("--manifest", e.manifest, "Manifest")->required();
  embed->add_option("--out", e.out, "Embeddings file")->required();
  embed->add_flag("--raw", e.raw, "Skip mean normalization");
  embed->add_option("--threads", e.threads, "Worker threads");

  // score
  struct {
    std::string trials, out;
    std::vector<std::string> embeddings, names;
  } s;
  auto *score = app.add_subcommand("score", "Score a trial list with one column per embeddings file");
  score->add_option("--trials", s.trials, "Trial list")->required();
  score->add_option("--embeddings", s.embeddings, "Embeddings file, repeatable, in stream order")->required();
  score->add_option("--names", s.names, "Stream names, one per embeddings file");
  score->add_option("--out", s.out, "Scores file")->required();

  // fuse-search
  struct {
    std::string scores, out, config, objective;
    double step = 0.0, k_min = 0.0;
    unsigned threads = 1;
  } f;
  auto *fuse = app.add_subcommand("fuse-search", "Grid-search fusion weights on a three-stream scores file");
  fuse->add_option("--scores", f.scores, "Scores file with FB, LF, HF columns")->required();
  fuse->add_option("--out", f.out, "Weights file")->required();
  auto *o_step = fuse->add_option("--step", f.step, "Grid step; must divide 1");
  auto *o_kmin = fuse->add_option("--k-min", f.k_min, "Lower bound on the first two weights");
  auto *o_obj = fuse->add_option("--objective", f.objective, "mindcf or eer");
  fuse->add_option("--config", f.config, "Run config file");
  fuse->add_option("--threads", f.threads, "Worker threads");

  // eval and det
  struct {
    std::string scores, weights, stream, config, out, svg;
  } ev;
  auto *eval = app.add_subcommand("eval", "Print EER and minDCF for one stream or a fusion");
  auto *det = app.add_subcommand("det", "Export DET points as CSV and optionally SVG");
  for (auto *cmd : {eval, det}) {
    cmd->add_option("--scores", ev.scores, "Scores file")->required();
    auto *w = cmd->add_option("--weights", ev.weights, "Weights file; fuses the three streams");
    cmd->add_option("--stream", ev.stream, "Stream name")->excludes(w);
  }
  eval->add_option("--config", ev.config, "Run config file (eval.* keys)");
  det->add_option("--out", ev.out, "CSV file")->required();
  det->add_option("--svg", ev.svg, "SVG plot");

  try {
    std::vector<std::string> argv = Reversed(args);
    app.parse(argv);
  } catch (const CLI::CallForHelp &) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError &ex) {
    err << "error: " << ex.what() << "\n";
    return kExitUsage;
  }

  try {
    if (gen->parsed()) {
      corpus::CorpusSpec spec;
      spec.n_speakers = g.speakers;
      spec.utts_per_speaker = g.utts;
      spec.seconds_per_utt = g.seconds;
      spec.seed = g.seed;
      const auto split = ParseSplit(g.split);
      if (split[1] < 2 || g.utts - split[0] - split[1] < 2)
        Usage("--split must leave at least two dev and two test utterances per speaker");
      if (g.trials < 2) Usage("--trials must be >= 2");
      const auto m = CheckFlags([&] {
        std::filesystem::create_directories(g.out);
        return corpus::GenerateCorpus(spec, g.out);
      });
      const auto parts = corpus::SplitPerSpeaker(m, split);
      const std::filesystem::path dir(g.out);
      corpus::WriteManifest((dir / "manifest.tsv").string(), m);
      const char *names[] = {"train", "dev", "test"};
      for (int p = 0; p < 3; ++p) corpus::WriteManifest((dir / (std::string(names[p]) + ".tsv")).string(), parts[p]);
      metrics::SaveTrials((dir / "dev_trials.txt").string(), corpus::GenerateTrials(parts[1], g.trials, g.seed + 1));
      metrics::SaveTrials((dir / "test_trials.txt").string(), corpus::GenerateTrials(parts[2], g.trials, g.seed + 2));
      out << "wrote " << m.entries.size() << " utterances of " << g.speakers << " speakers to " << g.out << "\n";
    } else if (train->parsed()) {
      RunConfig c = LoadRunConfig(t.config);
      c.frontend.f_min = t.f_min;
      c.frontend.f_max = t.f_max;
      if (*o_epochs) c.train.epochs = t.epochs;
      if (*o_lr) c.train.lr = t.lr;
      if (*o_batch) c.train.batch = t.batch;
      if (*o_seed) c.train.seed = t.seed;
      c.train.threads = std::max(1u, t.threads);
      CheckFlags([&] { Finalize(c); });
      if (t.val_manifest.empty() != t.val_trials.empty()) Usage("--val-manifest and --val-trials go together");
      const auto corpus = ReadInput([&] { return training::LoadCorpus(corpus::ReadManifest(t.manifest)); });
      std::optional<training::ValidationSet> val;
      if (!t.val_manifest.empty())
        val = ReadInput([&] {
          return training::LoadValidation(corpus::ReadManifest(t.val_manifest), metrics::LoadTrials(t.val_trials));
        });
      const std::string log_path = t.log.empty() ? t.out + ".log" : t.log;
      std::ofstream log(log_path, std::ios::trunc);
      if (!log) Fail(ErrorKind::kIoError, "cannot open " + log_path + " for writing");
      auto model = training::TrainStream(corpus, c.frontend, c.encoder, c.train, val ? &*val : nullptr,
                                         [&](const training::EpochLog &l) { log << training::FormatLogLine(l) << '\n' << std::flush; });
      model.set_stream_tag(t.tag.empty() ? DefaultTag(t.f_min, t.f_max) : t.tag);
      encoder::SaveModel(t.out, model);
      out << "trained stream " << model.stream_tag() << " -> " << t.out << "\n";
    } else if (embed->parsed()) {
      const auto model = ReadInput([&] { return encoder::LoadModel(e.model); });
      const auto m = ReadInput([&] { return corpus::ReadManifest(e.manifest); });
      const auto table =
          ReadInput([&] { return encoder::EmbedManifest(model, m, !e.raw, std::max(1u, e.threads)); });
      encoder::SaveEmbeddings(e.out, table);
      out << "embedded " << table.ids.size() << " utterances -> " << e.out << "\n";
    } else if (score->parsed()) {
      if (!s.names.empty() && s.names.size() != s.embeddings.size()) Usage("--names needs one name per --embeddings");
      const auto trials = ReadInput([&] { return metrics::LoadTrials(s.trials); });
      std::vector<encoder::EmbeddingTable> tables;
      for (const auto &path : s.embeddings) tables.push_back(ReadInput([&] { return encoder::LoadEmbeddings(path); }));
      std::vector<std::string> names = s.names;
      if (names.empty())
        for (const auto &tb : tables) names.push_back(tb.stream_tag);
      if (std::set<std::string>(names.begin(), names.end()).size() != names.size())
        Usage("stream names must be distinct; pass --names");
      std::vector<const encoder::EmbeddingTable *> ptrs;
      for (const auto &tb : tables) ptrs.push_back(&tb);
      const auto set = ReadInput([&] { return encoder::ScoreTrials(ptrs, names, trials); });
      metrics::SaveScores(s.out, set);
      out << "scored " << set.num_trials() << " trials -> " << s.out << "\n";
    } else if (fuse->parsed()) {
      RunConfig c = LoadRunConfig(f.config);
      if (*o_step) c.fusion_step = f.step;
      if (*o_kmin) c.fusion_k_min = f.k_min;
      if (*o_obj) c.objective = CheckFlags([&] { return ParseObjective(f.objective); });
      CheckFlags([&] {
        metrics::Validate(c.dcf);
        fusion::GridDivisions(c.fusion_step);
        if (!(c.fusion_k_min >= 0.0 && c.fusion_k_min <= 0.5))
          Fail(ErrorKind::kInvalidArgument, "--k-min must lie in [0, 0.5]");
      });
      const auto set = ReadInput([&] {
        auto loaded = metrics::LoadScores(f.scores);
        if (loaded.num_streams() != 3) Fail(ErrorKind::kMalformedInput, "weight search needs exactly three streams");
        return loaded;
      });
      fusion::SearchConfig sc;
      sc.step = c.fusion_step;
      sc.k_min = c.fusion_k_min;
      sc.objective = c.objective;
      sc.dcf = c.dcf;
      sc.threads = std::max(1u, f.threads);
      const auto r = fusion::SearchWeights(fusion::NormalizeScores(set), sc);
      fusion::SaveWeights(f.out, r);
      fusion::WriteWeights(out, r);
    } else if (eval->parsed()) {
      const RunConfig c = LoadRunConfig(ev.config);
      CheckFlags([&] { metrics::Validate(c.dcf); });
      const auto set = ReadInput([&] { return metrics::LoadScores(ev.scores); });
      const auto scores = SelectScores(set, ev.weights, ev.stream);
      const auto sum = metrics::Evaluate(scores, set.labels, c.dcf);
      char buf[128];
      std::snprintf(buf, sizeof(buf), "EER=%.2f minDCF_raw=%.6f minDCF_norm=%.6f", 100.0 * sum.eer, sum.dcf.raw,
                    sum.dcf.normalized);
      out << buf << "\n";
    } else if (det->parsed()) {
      const auto set = ReadInput([&] { return metrics::LoadScores(ev.scores); });
      const auto scores = SelectScores(set, ev.weights, ev.stream);
      const auto pts = metrics::DetPoints(scores, set.labels);
      WriteOutput(ev.out, [&](std::ostream &os) { WriteDetCsv(os, pts); });
      if (!ev.svg.empty()) WriteOutput(ev.svg, [&](std::ostream &os) { WriteDetSvg(os, pts); });
      out << "wrote " << pts.size() << " DET points -> " << ev.out << "\n";
    }
  } catch (const Failure &ex) {
    err << "error: " << ex.what() << "\n";
    return ex.code();
  } catch (const std::exception &ex) {
    err << "error: " << ex.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace msv::cli
