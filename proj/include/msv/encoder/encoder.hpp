#pragma once

// Residual CNN speaker encoder: Conv1, four residual groups, attentive
// statistics pooling over time and a linear projection to the embedding.

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "msv/dsp/frontend.hpp"
#include "msv/error.hpp"
#include "msv/nn/ops.hpp"
#include "msv/rng.hpp"

namespace msv::encoder {

using nn::Mode;
using nn::Parameter;
using nn::Shape;
using nn::Tape;
using nn::Tensor;
using nn::Var;

enum class InitMethod { kKaiming, kXavier, kNormal };

inline const char *InitName(InitMethod m) {
  switch (m) {
    case InitMethod::kKaiming: return "kaiming";
    case InitMethod::kXavier: return "xavier";
    case InitMethod::kNormal: return "normal";
  }
  return "kaiming";
}

inline InitMethod ParseInit(const std::string &s) {
  if (s == "kaiming") return InitMethod::kKaiming;
  if (s == "xavier") return InitMethod::kXavier;
  if (s == "normal") return InitMethod::kNormal;
  Fail(ErrorKind::kInvalidArgument, "unknown init method '" + s + "'");
}

struct EncoderConfig {
  int n_mels = 40;
  int n_frames = 200;
  int base_channels = 16;
  std::array<int, 4> blocks_per_group{3, 4, 6, 3};
  std::array<int, 4> group_strides{1, 2, 2, 2};
  int embed_dim = 512;
  int attention_dim = 128;
  InitMethod init = InitMethod::kKaiming;

  bool operator==(const EncoderConfig &) const = default;
};

inline void Validate(const EncoderConfig &cfg) {
  if (cfg.n_mels < 2 || cfg.n_frames < 1) Fail(ErrorKind::kInvalidArgument, "encoder input extents");
  if (cfg.base_channels < 1) Fail(ErrorKind::kInvalidArgument, "base_channels must be >= 1");
  for (int b : cfg.blocks_per_group)
    if (b < 1) Fail(ErrorKind::kInvalidArgument, "every residual group needs at least one block");
  for (int s : cfg.group_strides)
    if (s < 1 || s > 2) Fail(ErrorKind::kInvalidArgument, "group strides must be 1 or 2");
  if (cfg.embed_dim < 2) Fail(ErrorKind::kInvalidArgument, "embed_dim must be >= 2");
  if (cfg.attention_dim < 1) Fail(ErrorKind::kInvalidArgument, "attention_dim must be >= 1");
}

/// Toy-scale configuration used by tests and desk-scale experiments.
inline EncoderConfig ToyConfig() {
  EncoderConfig cfg;
  cfg.base_channels = 4;
  cfg.blocks_per_group = {1, 1, 1, 1};
  cfg.embed_dim = 64;
  cfg.attention_dim = 32;
  return cfg;
}

/// Frequency extent after the residual groups (ceil division per stride).
inline int FinalHeight(const EncoderConfig &cfg) {
  int h = cfg.n_mels;
  for (int s : cfg.group_strides) h = (h + s - 1) / s;
  return h;
}

inline int GroupChannels(const EncoderConfig &cfg, int group) { return cfg.base_channels << group; }

inline int SequenceFeatureDim(const EncoderConfig &cfg) { return FinalHeight(cfg) * GroupChannels(cfg, 3); }

/// Stream label derived from the analysis band.
inline std::string StreamTagFor(double f_min, double f_max) {
  if (f_min == 20.0 && f_max == 8000.0) return "FB";
  return "custom";
}

/// All encoder state: trainable parameters, batch-norm running statistics,
/// the front-end configuration the stream was trained with, and the frozen
/// training-set embedding mean.
template <typename T>
class Encoder {
 public:
  Encoder() = default;

  static Encoder Create(const EncoderConfig &cfg, const dsp::FrontendConfig &frontend, std::uint64_t seed,
                        std::string stream_tag = "") {
    Validate(cfg);
    dsp::Validate(frontend);
    if (cfg.n_mels != frontend.n_mels)
      Fail(ErrorKind::kConfigMismatch, "encoder n_mels differs from front-end n_mels");
    Encoder e;
    e.cfg_ = cfg;
    e.frontend_ = frontend;
    e.stream_tag_ = stream_tag.empty() ? StreamTagFor(frontend.f_min, frontend.f_max) : std::move(stream_tag);
    e.Build(seed);
    return e;
  }

  const EncoderConfig &config() const { return cfg_; }
  const dsp::FrontendConfig &frontend() const { return frontend_; }
  const std::string &stream_tag() const { return stream_tag_; }
  void set_stream_tag(std::string tag) { stream_tag_ = std::move(tag); }

  std::vector<Parameter<T>> &params() { return params_; }
  const std::vector<Parameter<T>> &params() const { return params_; }
  std::vector<Parameter<T> *> ParamPointers() {
    std::vector<Parameter<T> *> out;
    for (auto &p : params_) out.push_back(&p);
    return out;
  }

  /// Named BN buffers in creation order.
  std::vector<std::pair<std::string, nn::BatchNormStats<T>>> &bn_stats() { return bn_; }
  const std::vector<std::pair<std::string, nn::BatchNormStats<T>>> &bn_stats() const { return bn_; }

  const std::optional<std::vector<T>> &embedding_mean() const { return embedding_mean_; }
  void set_embedding_mean(std::vector<T> mean) {
    if (static_cast<int>(mean.size()) != cfg_.embed_dim)
      Fail(ErrorKind::kDimMismatch, "embedding mean has wrong dimension");
    for (T v : mean)
      if (!std::isfinite(static_cast<double>(v))) Fail(ErrorKind::kInvalidArgument, "embedding mean not finite");
    embedding_mean_ = std::move(mean);
  }

  Parameter<T> &param(const std::string &name) { return params_.at(index_.at(name)); }
  const Parameter<T> &param(const std::string &name) const { return params_.at(index_.at(name)); }
  bool has_param(const std::string &name) const { return index_.count(name) != 0; }

  std::size_t ParameterCount() const {
    std::size_t n = 0;
    for (const auto &p : params_) n += p.value.size();
    return n;
  }

  void ZeroGrad() {
    for (auto &p : params_) p.ZeroGrad();
  }

  /// Stacks features [N x (n_mels x n_frames)] into an NHWC input tensor.
  /// Every matrix must come from this stream's front-end configuration.
  Tensor<T> MakeInput(const std::vector<const dsp::FeatureMatrix *> &feats) const {
    if (feats.empty()) Fail(ErrorKind::kShapeMismatch, "empty feature batch");
    const int n_frames = feats.front()->n_frames;
    Tensor<T> input({static_cast<int>(feats.size()), cfg_.n_mels, n_frames, 1});
    for (std::size_t b = 0; b < feats.size(); ++b) {
      const dsp::FeatureMatrix &f = *feats[b];
      CheckFeatures(f);
      if (f.n_frames != n_frames) Fail(ErrorKind::kShapeMismatch, "feature batch has mixed frame counts");
      const std::size_t off = b * static_cast<std::size_t>(cfg_.n_mels) * n_frames;
      for (std::size_t i = 0; i < f.values.size(); ++i) input[off + i] = static_cast<T>(f.values[i]);
    }
    return input;
  }

  void CheckFeatures(const dsp::FeatureMatrix &f) const {
    if (f.ConfigHash() != frontend_.Hash())
      Fail(ErrorKind::kConfigMismatch, "features were extracted with [" + std::to_string(f.config.f_min) + ", " +
                                           std::to_string(f.config.f_max) + "] Hz but stream '" + stream_tag_ +
                                           "' expects [" + std::to_string(frontend_.f_min) + ", " +
                                           std::to_string(frontend_.f_max) + "] Hz");
    if (f.n_mels != cfg_.n_mels) Fail(ErrorKind::kShapeMismatch, "feature n_mels mismatch");
    if (f.n_frames < 2) Fail(ErrorKind::kShapeMismatch, "need at least two frames");
  }

  /// Training/gradient path: parameters are bound so Backward() fills their
  /// grads; in training mode BN running statistics are updated.
  Var Forward(Tape<T> &tape, Var input, Mode mode, std::vector<Shape> *trace = nullptr) {
    return Run(tape, input, mode, true, &bn_, trace);
  }

  /// Inference path over a frozen model; safe to call concurrently.
  Var Forward(Tape<T> &tape, Var input, std::vector<Shape> *trace = nullptr) const {
    return Run(tape, input, Mode::kEval, false, nullptr, trace);
  }

  /// Attention pooling followed by the embedding projection, with
  /// parameters bound for gradients; `seq` is [N, T', D].
  Var Pool(Tape<T> &tape, Var seq) { return PoolImpl(tape, seq, true); }

 private:
  template <typename U>
  friend class Encoder;

  Var PoolImpl(Tape<T> &tape, Var seq, bool bind) const {
    const Tensor<T> &vs = tape.value(seq);
    const int n = vs.dim(0), t = vs.dim(1), d = vs.dim(2);
    if (t < 2) Fail(ErrorKind::kShapeMismatch, "attentive pooling needs at least two time steps");
    Var flat = nn::Reshape(tape, seq, {n * t, d});
    Var hidden = nn::Tanh(tape, nn::Linear(tape, flat, P(tape, "asp.w", bind), P(tape, "asp.b", bind)));
    Var logits = nn::Reshape(tape, nn::Linear(tape, hidden, P(tape, "asp.v", bind)), {n, t});
    Var alpha = nn::SoftmaxRows(tape, logits);
    Var stats = nn::AttentiveStats(tape, seq, alpha);
    return nn::Linear(tape, stats, P(tape, "proj.w", bind), P(tape, "proj.b", bind));
  }

 public:

  /// Eval-mode embedding of one utterance (not mean-normalized).
  std::vector<T> Embed(const dsp::FeatureMatrix &feats) const {
    Tape<T> tape;
    Var in = tape.Constant(MakeInput({&feats}));
    const Tensor<T> &out = tape.value(Forward(tape, in));
    return std::vector<T>(out.values().begin(), out.values().end());
  }

  /// Subtracts the frozen training-set embedding mean.
  std::vector<T> MeanNormalize(std::vector<T> embedding) const {
    if (!embedding_mean_) Fail(ErrorKind::kMissingStats, "model has no embedding mean");
    if (embedding.size() != embedding_mean_->size()) Fail(ErrorKind::kDimMismatch, "embedding dimension");
    for (std::size_t i = 0; i < embedding.size(); ++i) embedding[i] -= (*embedding_mean_)[i];
    return embedding;
  }

  template <typename U>
  Encoder<U> Cast() const {
    Encoder<U> out;
    out.cfg_ = cfg_;
    out.frontend_ = frontend_;
    out.stream_tag_ = stream_tag_;
    out.index_ = index_;
    for (const auto &p : params_) out.params_.emplace_back(p.name, p.value.template Cast<U>());
    for (const auto &[name, st] : bn_)
      out.bn_.push_back({name, {st.running_mean.template Cast<U>(), st.running_var.template Cast<U>()}});
    if (embedding_mean_) out.embedding_mean_ = std::vector<U>(embedding_mean_->begin(), embedding_mean_->end());
    return out;
  }

  /// Replaces BN statistics by name; used by the model reader.
  nn::BatchNormStats<T> &stats(const std::string &name) {
    for (auto &[n, st] : bn_)
      if (n == name) return st;
    Fail(ErrorKind::kMalformedInput, "unknown batch-norm buffer " + name);
  }

 private:
  void AddParam(const std::string &name, Shape shape, Rng &rng, int fan_in, int fan_out, bool weight) {
    Tensor<T> value(shape);
    if (weight) {
      for (std::size_t i = 0; i < value.size(); ++i) {
        double v = 0.0;
        switch (cfg_.init) {
          case InitMethod::kKaiming: v = rng.Normal(0.0, std::sqrt(2.0 / fan_in)); break;
          case InitMethod::kXavier: {
            const double a = std::sqrt(6.0 / (fan_in + fan_out));
            v = rng.Uniform(-a, a);
            break;
          }
          case InitMethod::kNormal: v = rng.Normal(0.0, 0.01); break;
        }
        value[i] = static_cast<T>(v);
      }
    }
    index_[name] = params_.size();
    params_.emplace_back(name, std::move(value));
  }

  void AddConv(const std::string &name, int k, int cin, int cout, std::uint64_t seed) {
    Rng rng = Rng::Derive(seed, params_.size());
    AddParam(name + ".w", {k, k, cin, cout}, rng, k * k * cin, k * k * cout, true);
  }

  void AddBn(const std::string &name, int c) {
    Rng unused(0);
    AddParam(name + ".gamma", {c}, unused, 0, 0, false);
    params_.back().value.Fill(T(1));
    AddParam(name + ".beta", {c}, unused, 0, 0, false);
    bn_.push_back({name, {Tensor<T>({c}, T(0)), Tensor<T>({c}, T(1))}});
  }

  void AddLinear(const std::string &name, int din, int dout, bool bias, std::uint64_t seed) {
    Rng rng = Rng::Derive(seed, params_.size());
    AddParam(name + ".w", {din, dout}, rng, din, dout, true);
    if (bias) {
      Rng unused(0);
      AddParam(name + ".b", {dout}, unused, 0, 0, false);
    }
  }

  void Build(std::uint64_t seed) {
    const int c0 = cfg_.base_channels;
    AddConv("conv1", 3, 1, c0, seed);
    AddBn("conv1.bn", c0);
    int cin = c0;
    for (int g = 0; g < 4; ++g) {
      const int cout = GroupChannels(cfg_, g);
      for (int b = 0; b < cfg_.blocks_per_group[g]; ++b) {
        const std::string pre = BlockName(g, b);
        const int stride = b == 0 ? cfg_.group_strides[g] : 1;
        AddConv(pre + ".conv_a", 3, cin, cout, seed);
        AddBn(pre + ".bn_a", cout);
        AddConv(pre + ".conv_b", 3, cout, cout, seed);
        AddBn(pre + ".bn_b", cout);
        if (stride != 1 || cin != cout) {
          AddConv(pre + ".skip", 1, cin, cout, seed);
          AddBn(pre + ".bn_skip", cout);
        }
        cin = cout;
      }
    }
    const int d = SequenceFeatureDim(cfg_);
    // Attention: e_t = v^T tanh(W h_t + b).
    AddLinear("asp", d, cfg_.attention_dim, false, seed);
    {
      Rng unused(0);
      AddParam("asp.b", {cfg_.attention_dim}, unused, 0, 0, false);
    }
    {
      Rng rng = Rng::Derive(seed, params_.size());
      AddParam("asp.v", {cfg_.attention_dim, 1}, rng, cfg_.attention_dim, 1, true);
    }
    AddLinear("proj", 2 * d, cfg_.embed_dim, true, seed);
  }

  static std::string BlockName(int group, int block) {
    return "res" + std::to_string(group + 1) + "." + std::to_string(block);
  }

  Var P(Tape<T> &tape, const std::string &name, bool bind) const {
    const Parameter<T> &p = params_.at(index_.at(name));
    return bind ? tape.Param(const_cast<Parameter<T> &>(p)) : tape.Constant(p.value);
  }

  const nn::BatchNormStats<T> &Stats(const std::string &name) const {
    for (const auto &[n, st] : bn_)
      if (n == name) return st;
    Fail(ErrorKind::kMalformedInput, "unknown batch-norm buffer " + name);
  }

  Var ConvBn(Tape<T> &tape, Var x, const std::string &conv, const std::string &bn, int stride, Mode mode, bool bind,
             std::vector<std::pair<std::string, nn::BatchNormStats<T>>> *update) const {
    Var y = nn::Conv2d(tape, x, P(tape, conv + ".w", bind), stride, stride);
    nn::BatchNormStats<T> *upd = nullptr;
    if (update != nullptr)
      for (auto &[n, st] : *update)
        if (n == bn) upd = &st;
    return nn::BatchNorm(tape, y, P(tape, bn + ".gamma", bind), P(tape, bn + ".beta", bind), Stats(bn), mode, upd);
  }

  Var Run(Tape<T> &tape, Var input, Mode mode, bool bind,
          std::vector<std::pair<std::string, nn::BatchNormStats<T>>> *update, std::vector<Shape> *trace) const {
    const Tensor<T> &vin = tape.value(input);
    if (vin.rank() != 4 || vin.dim(1) != cfg_.n_mels || vin.dim(3) != 1)
      Fail(ErrorKind::kShapeMismatch, "encoder input must be [N, " + std::to_string(cfg_.n_mels) + ", T, 1], got " +
                                          nn::ShapeString(vin.shape()));
    Var x = nn::Relu(tape, ConvBn(tape, input, "conv1", "conv1.bn", 1, mode, bind, update));
    if (trace) trace->push_back(tape.value(x).shape());
    for (int g = 0; g < 4; ++g) {
      for (int b = 0; b < cfg_.blocks_per_group[g]; ++b) {
        const std::string pre = BlockName(g, b);
        const int stride = b == 0 ? cfg_.group_strides[g] : 1;
        Var h = nn::Relu(tape, ConvBn(tape, x, pre + ".conv_a", pre + ".bn_a", stride, mode, bind, update));
        h = ConvBn(tape, h, pre + ".conv_b", pre + ".bn_b", 1, mode, bind, update);
        Var skip = has_param(pre + ".skip.w")
                       ? ConvBn(tape, x, pre + ".skip", pre + ".bn_skip", stride, mode, bind, update)
                       : x;
        x = nn::Relu(tape, nn::Add(tape, h, skip));
      }
      if (trace) trace->push_back(tape.value(x).shape());
    }
    Var seq = nn::ToSequence(tape, x);
    if (trace) trace->push_back(tape.value(seq).shape());
    Var emb = PoolImpl(tape, seq, bind);
    if (trace) trace->push_back(tape.value(emb).shape());
    return emb;
  }

  EncoderConfig cfg_;
  dsp::FrontendConfig frontend_;
  std::string stream_tag_;
  std::vector<Parameter<T>> params_;
  std::map<std::string, std::size_t> index_;
  std::vector<std::pair<std::string, nn::BatchNormStats<T>>> bn_;
  std::optional<std::vector<T>> embedding_mean_;
};

}  // namespace msv::encoder
