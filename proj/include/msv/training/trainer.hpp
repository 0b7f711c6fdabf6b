#pragma once

// Per-stream training: sample a batch, extract the stream's sub-band
// features, run the encoder, minimize softmax + angular prototypical loss
// with Adam, and freeze the training-set embedding mean at the end.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "msv/encoder/embeddings.hpp"
#include "msv/encoder/encoder.hpp"
#include "msv/metrics/metrics.hpp"
#include "msv/metrics/scores_io.hpp"
#include "msv/nn/adam.hpp"
#include "msv/training/batch.hpp"
#include "msv/training/losses.hpp"

namespace msv::training {

struct TrainConfig {
  int epochs = 100;
  double lr = 1e-3;
  double lr_decay = 0.95;
  int decay_every = 10;
  int batch = 64;  // utterances per batch (N speakers x M)
  int utts_per_speaker = 2;
  double chunk_seconds = 2.0;
  int max_utts_per_speaker = 100;
  int val_every = 5;
  std::uint64_t seed = 1;
  unsigned threads = 1;  // embedding extraction for validation and the mean
};

inline void Validate(const TrainConfig &c) {
  if (c.epochs < 1) Fail(ErrorKind::kInvalidArgument, "epochs must be >= 1");
  if (!(c.lr > 0.0)) Fail(ErrorKind::kInvalidArgument, "lr must be positive");
  if (!(c.lr_decay > 0.0 && c.lr_decay <= 1.0)) Fail(ErrorKind::kInvalidArgument, "lr_decay must lie in (0, 1]");
  if (c.decay_every < 1) Fail(ErrorKind::kInvalidArgument, "decay_every must be >= 1");
  if (c.utts_per_speaker < 2) Fail(ErrorKind::kInvalidArgument, "M must be >= 2");
  if (c.batch < 2 * c.utts_per_speaker) Fail(ErrorKind::kInvalidArgument, "batch must hold at least two speakers");
  if (c.val_every < 1) Fail(ErrorKind::kInvalidArgument, "val_every must be >= 1");
}

/// Step schedule: lr0 * decay^floor((epoch - 1) / decay_every), epochs from 1.
inline double LearningRate(const TrainConfig &c, int epoch) {
  return c.lr * std::pow(c.lr_decay, (epoch - 1) / c.decay_every);
}

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  double top1_acc = 0.0;
  std::optional<double> val_eer;
};

/// "epoch<TAB>mean_loss<TAB>top1_acc<TAB>val_eer", val_eer blank if absent.
inline std::string FormatLogLine(const EpochLog &e) {
  std::string s = std::to_string(e.epoch) + '\t' + FormatDouble(e.mean_loss) + '\t' + FormatDouble(e.top1_acc) + '\t';
  if (e.val_eer) s += FormatDouble(*e.val_eer);
  return s;
}

/// Held-out utterances and a trial list over their ids.
struct ValidationSet {
  std::vector<std::string> ids;
  std::vector<dsp::Waveform> waves;
  metrics::TrialList trials;
};

inline ValidationSet LoadValidation(const corpus::Manifest &m, metrics::TrialList trials) {
  ValidationSet v;
  for (const auto &e : m.entries) {
    v.ids.push_back(e.path);
    v.waves.push_back(corpus::ReadWav(m.Resolve(e).string()));
  }
  v.trials = std::move(trials);
  return v;
}

/// EER of raw (not mean-normalized) embeddings; the shared mean offset
/// cancels in Euclidean distances.
inline double ValidationEer(const encoder::Encoder<float> &model, const ValidationSet &val, unsigned threads) {
  std::vector<const dsp::Waveform *> ptrs;
  for (const auto &w : val.waves) ptrs.push_back(&w);
  encoder::EmbeddingTable table;
  auto emb = encoder::EmbedWaveforms(model, ptrs, threads);
  for (std::size_t i = 0; i < emb.size(); ++i) table.Add(val.ids[i], std::move(emb[i]));
  const auto set = encoder::ScoreTrials({&table}, {model.stream_tag()}, val.trials);
  return metrics::Eer(set.Column(0), set.labels);
}

struct StepResult {
  double loss = 0.0;
  double softmax_loss = 0.0;
  double ap_loss = 0.0;
  double top1 = 0.0;
};

/// Encoder plus the training-only heads, optimized together.
class Trainer {
 public:
  Trainer(const TrainCorpus &corpus, const dsp::FrontendConfig &frontend, const encoder::EncoderConfig &enc_cfg,
          const TrainConfig &cfg)
      : corpus_(corpus), cfg_(cfg), extractor_(frontend) {
    Validate(cfg);
    if (corpus.num_speakers() < 2) Fail(ErrorKind::kInsufficientData, "training needs at least two speakers");
    model_ = encoder::Encoder<float>::Create(enc_cfg, frontend, cfg.seed);
    head_ = SpeakerHead<float>::Create(enc_cfg.embed_dim, corpus.num_speakers(), cfg.seed);
    spec_.utts_per_speaker = cfg.utts_per_speaker;
    spec_.n_speakers = std::min(cfg.batch / cfg.utts_per_speaker, corpus.num_speakers());
    spec_.chunk_seconds = cfg.chunk_seconds;
    spec_.max_utts_per_speaker = cfg.max_utts_per_speaker;
    Validate(spec_);
    rng_ = Rng::Derive(cfg.seed, 0xba7c4ULL);
    params_ = model_.ParamPointers();
    params_.push_back(&head_.weight);
    params_.push_back(&head_.bias);
    params_.push_back(&scale_.omega);
    params_.push_back(&scale_.bias);
  }

  Trainer(const Trainer &) = delete;
  Trainer &operator=(const Trainer &) = delete;

  const BatchSpec &batch_spec() const { return spec_; }
  const encoder::Encoder<float> &model() const { return model_; }

  int StepsPerEpoch() const {
    const int per_batch = spec_.n_speakers * spec_.utts_per_speaker;
    return static_cast<int>((corpus_.utts.size() + per_batch - 1) / per_batch);
  }

  StepResult Step(double lr) {
    const auto batch = FormBatch(corpus_, spec_, rng_);
    std::vector<dsp::FeatureMatrix> feats;
    feats.reserve(batch.size());
    for (const auto &item : batch) feats.push_back(extractor_.Extract(item.chunk));
    std::vector<const dsp::FeatureMatrix *> ptrs;
    std::vector<int> labels;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      ptrs.push_back(&feats[i]);
      labels.push_back(batch[i].label);
    }

    for (auto *p : params_) p->ZeroGrad();
    nn::Tape<float> tape;
    Var input = tape.Constant(model_.MakeInput(ptrs));
    Var emb = model_.Forward(tape, input, nn::Mode::kTrain);
    Var logits = nn::Linear(tape, emb, tape.Param(head_.weight), tape.Param(head_.bias));
    Var l_sm = nn::SoftmaxCrossEntropy(tape, logits, std::span<const int>(labels));
    Var l_ap = AngularPrototypicalLoss(tape, emb, spec_.n_speakers, spec_.utts_per_speaker, scale_);
    Var loss = nn::Add(tape, l_sm, l_ap);
    tape.Backward(loss);

    StepResult r;
    r.softmax_loss = tape.value(l_sm)[0];
    r.ap_loss = tape.value(l_ap)[0];
    r.loss = tape.value(loss)[0];
    r.top1 = Top1Accuracy(tape.value(logits), std::span<const int>(labels));
    if (!std::isfinite(r.loss)) Fail(ErrorKind::kInvalidArgument, "training loss diverged");

    adam_.set_lr(lr);
    adam_.Step(params_);
    scale_.Clamp();
    return r;
  }

  EpochLog RunEpoch(int epoch, const ValidationSet *val) {
    const int steps = StepsPerEpoch();
    const double lr = LearningRate(cfg_, epoch);
    EpochLog log;
    log.epoch = epoch;
    for (int s = 0; s < steps; ++s) {
      const StepResult r = Step(lr);
      log.mean_loss += r.loss / steps;
      log.top1_acc += r.top1 / steps;
    }
    if (val && !val->trials.empty() && (epoch % cfg_.val_every == 0 || epoch == cfg_.epochs))
      log.val_eer = ValidationEer(model_, *val, cfg_.threads);
    return log;
  }

  /// Mean eval-mode embedding over full training utterances, stored in the
  /// model.
  void FreezeEmbeddingMean() {
    std::vector<const dsp::Waveform *> ptrs;
    for (const auto &u : corpus_.utts) ptrs.push_back(&u.wave);
    const auto emb = encoder::EmbedWaveforms(model_, ptrs, cfg_.threads);
    std::vector<double> acc(static_cast<std::size_t>(model_.config().embed_dim), 0.0);
    for (const auto &e : emb)
      for (std::size_t d = 0; d < acc.size(); ++d) acc[d] += e[d];
    std::vector<float> mean(acc.size());
    for (std::size_t d = 0; d < acc.size(); ++d) mean[d] = static_cast<float>(acc[d] / static_cast<double>(emb.size()));
    model_.set_embedding_mean(std::move(mean));
  }

  encoder::Encoder<float> Run(const ValidationSet *val, const std::function<void(const EpochLog &)> &on_epoch) {
    for (int epoch = 1; epoch <= cfg_.epochs; ++epoch) {
      const EpochLog log = RunEpoch(epoch, val);
      if (on_epoch) on_epoch(log);
    }
    FreezeEmbeddingMean();
    return model_;
  }

 private:
  const TrainCorpus &corpus_;
  TrainConfig cfg_;
  dsp::MfbeExtractor extractor_;
  BatchSpec spec_;
  Rng rng_;
  encoder::Encoder<float> model_;
  SpeakerHead<float> head_;
  PrototypicalScale<float> scale_;
  nn::Adam<float> adam_;
  std::vector<nn::Parameter<float> *> params_;
};

/// Trains one stream on `corpus` with the given sub-band front end.
inline encoder::Encoder<float> TrainStream(const TrainCorpus &corpus, const dsp::FrontendConfig &frontend,
                                           const encoder::EncoderConfig &enc_cfg, const TrainConfig &cfg,
                                           const ValidationSet *val = nullptr,
                                           const std::function<void(const EpochLog &)> &on_epoch = {}) {
  Trainer t(corpus, frontend, enc_cfg, cfg);
  return t.Run(val, on_epoch);
}

}  // namespace msv::training
