#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>
#include <thread>

#include "msv/encoder/embeddings.hpp"
#include "msv/encoder/model_io.hpp"
#include "support/gradcases.hpp"
#include "support/oracles.hpp"

namespace msv::encoder {
namespace {

dsp::Waveform Noise(std::uint64_t seed, double seconds) {
  Rng rng(seed);
  dsp::Waveform w;
  w.samples.resize(static_cast<std::size_t>(seconds * dsp::kSampleRate));
  for (double &s : w.samples) s = 0.1 * rng.Normal();
  return w;
}

EncoderConfig SmallToy() {
  EncoderConfig cfg = ToyConfig();
  cfg.n_mels = 20;
  cfg.n_frames = 50;
  return cfg;
}

dsp::FrontendConfig FrontendFor(const EncoderConfig &cfg) {
  dsp::FrontendConfig fe;
  fe.n_mels = cfg.n_mels;
  return fe;
}

TEST(EncoderShapes, DefaultConfigFollowsTable) {
  const EncoderConfig cfg;
  const auto model = Encoder<float>::Create(cfg, FrontendFor(cfg), 1);
  for (int frames : {50, 100, 200, 400}) {
    Tape<float> tape;
    std::vector<Shape> trace;
    Var emb = model.Forward(tape, tape.Constant(Tensor<float>({1, 40, frames, 1})), &trace);
    auto q = [](int n, int s) { return (n + s - 1) / s; };
    const int t2 = q(frames, 2), t3 = q(t2, 2), t4 = q(t3, 2);
    ASSERT_EQ(trace.size(), 7u);
    EXPECT_EQ(trace[0], (Shape{1, 40, frames, 16}));
    EXPECT_EQ(trace[1], (Shape{1, 40, frames, 16}));
    EXPECT_EQ(trace[2], (Shape{1, 20, t2, 32}));
    EXPECT_EQ(trace[3], (Shape{1, 10, t3, 64}));
    EXPECT_EQ(trace[4], (Shape{1, 5, t4, 128}));
    EXPECT_EQ(trace[5], (Shape{1, t4, 640}));
    EXPECT_EQ(tape.value(emb).shape(), (Shape{1, 512}));
  }
}

TEST(EncoderShapes, ToyConfigEmbeddingLength) {
  const auto cfg = SmallToy();
  const auto model = Encoder<float>::Create(cfg, FrontendFor(cfg), 2);
  Tape<float> tape;
  Var emb = model.Forward(tape, tape.Constant(Tensor<float>({3, 20, 50, 1})));
  EXPECT_EQ(tape.value(emb).shape(), (Shape{3, cfg.embed_dim}));
}

TEST(EncoderShapes, WrongInputThrows) {
  const auto cfg = SmallToy();
  const auto model = Encoder<float>::Create(cfg, FrontendFor(cfg), 2);
  Tape<float> tape;
  try {
    model.Forward(tape, tape.Constant(Tensor<float>({1, 19, 50, 1})));
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.kind(), ErrorKind::kShapeMismatch);
  }
}

TEST(EncoderConfig, ValidationRejectsBadValues) {
  EncoderConfig cfg;
  cfg.embed_dim = 1;
  EXPECT_THROW(Validate(cfg), Error);
  cfg = EncoderConfig{};
  cfg.blocks_per_group = {3, 0, 6, 3};
  EXPECT_THROW(Validate(cfg), Error);
  cfg = EncoderConfig{};
  dsp::FrontendConfig fe;
  fe.n_mels = 30;
  EXPECT_THROW(Encoder<float>::Create(cfg, fe, 1), Error);
}

double SampleStd(const Tensor<float> &t) {
  double m = 0, v = 0;
  for (float x : t.values()) m += x;
  m /= static_cast<double>(t.size());
  for (float x : t.values()) v += (x - m) * (x - m);
  return std::sqrt(v / static_cast<double>(t.size() - 1));
}

TEST(EncoderInit, KaimingConvStd) {
  const EncoderConfig cfg;
  const auto model = Encoder<float>::Create(cfg, FrontendFor(cfg), 3);
  // Pool every 3x3x16->16 kernel to exceed 10^4 draws.
  std::vector<float> pooled;
  for (const auto &p : model.params())
    if (p.value.shape() == Shape{3, 3, 16, 16}) pooled.insert(pooled.end(), p.value.values().begin(), p.value.values().end());
  ASSERT_GE(pooled.size(), 10000u);
  const Tensor<float> all({static_cast<int>(pooled.size())}, pooled);
  EXPECT_NEAR(SampleStd(all), std::sqrt(2.0 / 144.0), 0.1 * std::sqrt(2.0 / 144.0));
}

TEST(EncoderInit, NormalStd) {
  EncoderConfig cfg;
  cfg.init = InitMethod::kNormal;
  const auto model = Encoder<float>::Create(cfg, FrontendFor(cfg), 4);
  EXPECT_NEAR(SampleStd(model.param("proj.w").value), 0.01, 0.001);
}

TEST(EncoderInit, XavierBoundsAndStd) {
  EncoderConfig cfg;
  cfg.init = InitMethod::kXavier;
  const auto model = Encoder<float>::Create(cfg, FrontendFor(cfg), 5);
  const auto &w = model.param("proj.w").value;  // 1280 -> 512
  const double a = std::sqrt(6.0 / (1280 + 512));
  for (float v : w.values()) EXPECT_LE(std::abs(v), a);
  EXPECT_NEAR(SampleStd(w), a / std::sqrt(3.0), 0.05 * a / std::sqrt(3.0));
}

TEST(EncoderInit, SameSeedIsBitIdentical) {
  for (InitMethod m : {InitMethod::kKaiming, InitMethod::kXavier, InitMethod::kNormal}) {
    auto cfg = SmallToy();
    cfg.init = m;
    const auto a = Encoder<float>::Create(cfg, FrontendFor(cfg), 9);
    const auto b = Encoder<float>::Create(cfg, FrontendFor(cfg), 9);
    const auto c = Encoder<float>::Create(cfg, FrontendFor(cfg), 10);
    ASSERT_EQ(a.params().size(), b.params().size());
    bool differs = false;
    for (std::size_t i = 0; i < a.params().size(); ++i) {
      EXPECT_EQ(a.params()[i].value, b.params()[i].value);
      if (!(a.params()[i].value == c.params()[i].value)) differs = true;
    }
    EXPECT_TRUE(differs);
  }
}

TEST(EncoderInit, ParseInitNames) {
  for (InitMethod m : {InitMethod::kKaiming, InitMethod::kXavier, InitMethod::kNormal})
    EXPECT_EQ(ParseInit(InitName(m)), m);
  EXPECT_THROW(ParseInit("he"), Error);
}

TEST(EncoderForward, DifferentUtterancesDifferentEmbeddings) {
  const auto cfg = SmallToy();
  const auto model = Encoder<float>::Create(cfg, FrontendFor(cfg), 6);
  const dsp::MfbeExtractor fe(model.frontend());
  const auto a = model.Embed(fe.Extract(Noise(1, 0.5)));
  const auto b = model.Embed(fe.Extract(Noise(2, 0.5)));
  ASSERT_EQ(a.size(), static_cast<std::size_t>(cfg.embed_dim));
  EXPECT_NE(a, b);
  for (float v : a) EXPECT_TRUE(std::isfinite(v));
}

TEST(EncoderForward, EvalIsDeterministicAndThreadSafe) {
  const auto cfg = SmallToy();
  const auto model = Encoder<float>::Create(cfg, FrontendFor(cfg), 7);
  std::vector<dsp::Waveform> waves;
  for (int i = 0; i < 12; ++i) waves.push_back(Noise(100 + i, 0.6));
  std::vector<const dsp::Waveform *> ptrs;
  for (const auto &w : waves) ptrs.push_back(&w);
  const auto serial = EmbedWaveforms(model, ptrs, 1);
  const auto parallel = EmbedWaveforms(model, ptrs, 4);
  EXPECT_EQ(serial, parallel);
  EXPECT_EQ(serial, EmbedWaveforms(model, ptrs, 1));
}

TEST(EncoderForward, RejectsFeaturesFromAnotherBand) {
  const auto cfg = SmallToy();
  dsp::FrontendConfig lf = FrontendFor(cfg);
  lf.f_max = 2000.0;
  const auto model = Encoder<float>::Create(cfg, lf, 8, "LF");
  const auto feats = dsp::ExtractMfbe(Noise(3, 0.5), FrontendFor(cfg));
  try {
    model.Embed(feats);
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfigMismatch);
  }
  EXPECT_NO_THROW(model.Embed(dsp::ExtractMfbe(Noise(3, 0.5), lf)));
}

TEST(EncoderForward, AttentionWithZeroWeightsIsPlainStatsPooling) {
  auto cfg = SmallToy();
  auto model = Encoder<double>::Create(cfg, FrontendFor(cfg), 11);
  model.param("asp.w").value.Fill(0.0);
  model.param("asp.v").value.Fill(0.0);
  Rng rng(11);
  auto seq = oracle::RandomTensor({1, 7, SequenceFeatureDim(cfg)}, rng);
  Tape<double> tape;
  const auto &emb = tape.value(model.Pool(tape, tape.Constant(seq)));
  // Reference: project mean (+) population std directly.
  const int d = SequenceFeatureDim(cfg);
  std::vector<double> stats(2 * d);
  for (int k = 0; k < d; ++k) {
    double m = 0, v = 0;
    for (int t = 0; t < 7; ++t) m += seq[t * d + k] / 7;
    for (int t = 0; t < 7; ++t) v += (seq[t * d + k] - m) * (seq[t * d + k] - m) / 7;
    stats[k] = m;
    stats[d + k] = std::sqrt(v);
  }
  const auto &w = model.param("proj.w").value;
  const auto &b = model.param("proj.b").value;
  for (int j = 0; j < cfg.embed_dim; ++j) {
    double acc = b[j];
    for (int i = 0; i < 2 * d; ++i) acc += stats[i] * w[i * cfg.embed_dim + j];
    EXPECT_NEAR(emb[j], acc, 1e-9);
  }
}

TEST(MeanNormalize, Properties) {
  const auto cfg = SmallToy();
  auto model = Encoder<float>::Create(cfg, FrontendFor(cfg), 12);
  std::vector<float> e(cfg.embed_dim);
  for (int i = 0; i < cfg.embed_dim; ++i) e[i] = 0.5f * static_cast<float>(i) - 3.0f;
  try {
    model.MeanNormalize(e);
    FAIL();
  } catch (const Error &err) {
    EXPECT_EQ(err.kind(), ErrorKind::kMissingStats);
  }
  model.set_embedding_mean(std::vector<float>(cfg.embed_dim, 0.0f));
  EXPECT_EQ(model.MeanNormalize(e), e);
  model.set_embedding_mean(e);
  for (float v : model.MeanNormalize(e)) EXPECT_EQ(v, 0.0f);
  EXPECT_THROW(model.set_embedding_mean(std::vector<float>(3)), Error);
}

TEST(ModelFile, BitExactRoundTrip) {
  auto cfg = SmallToy();
  cfg.init = InitMethod::kXavier;
  dsp::FrontendConfig fe = FrontendFor(cfg);
  fe.f_min = 1000.0;
  auto model = Encoder<float>::Create(cfg, fe, 13, "HF");
  Rng rng(13);
  for (auto &[name, st] : model.bn_stats())
    for (std::size_t i = 0; i < st.running_mean.size(); ++i) {
      st.running_mean[i] = static_cast<float>(rng.Normal());
      st.running_var[i] = static_cast<float>(1.0 + rng.Uniform());
    }
  std::vector<float> mean(cfg.embed_dim);
  for (float &v : mean) v = static_cast<float>(rng.Normal());
  model.set_embedding_mean(mean);

  std::stringstream ss;
  WriteModel(ss, model);
  const std::string bytes = ss.str();
  EXPECT_EQ(bytes.substr(0, 5), "MSVW1");
  std::istringstream in(bytes);
  const auto back = ReadModel(in);
  EXPECT_EQ(back.config(), model.config());
  EXPECT_EQ(back.frontend(), model.frontend());
  EXPECT_EQ(back.stream_tag(), "HF");
  ASSERT_EQ(back.params().size(), model.params().size());
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    EXPECT_EQ(back.params()[i].name, model.params()[i].name);
    EXPECT_EQ(back.params()[i].value, model.params()[i].value);
  }
  EXPECT_EQ(*back.embedding_mean(), mean);
  std::stringstream again;
  WriteModel(again, back);
  EXPECT_EQ(again.str(), bytes);
}

TEST(ModelFile, RejectsCorruptInput) {
  const auto cfg = SmallToy();
  const auto model = Encoder<float>::Create(cfg, FrontendFor(cfg), 14);
  std::stringstream ss;
  WriteModel(ss, model);
  std::string bytes = ss.str();
  {
    std::istringstream in("MSVX1" + bytes.substr(5));
    EXPECT_THROW(ReadModel(in), Error);
  }
  {
    std::istringstream in(bytes.substr(0, bytes.size() - 3));
    EXPECT_THROW(ReadModel(in), Error);
  }
}

TEST(EmbeddingFile, RoundTripAndTrailingBytes) {
  EmbeddingTable t;
  t.dim = 3;
  t.stream_tag = "LF";
  t.mean_normalized = true;
  t.Add("a.wav", {1.0f, -2.5f, 3.25f});
  t.Add("b.wav", {0.0f, 1e-30f, -7.0f});
  std::stringstream ss;
  WriteEmbeddings(ss, t);
  std::istringstream in(ss.str());
  const auto back = ReadEmbeddings(in);
  EXPECT_EQ(back.ids, t.ids);
  EXPECT_EQ(back.values, t.values);
  EXPECT_EQ(back.stream_tag, "LF");
  EXPECT_TRUE(back.mean_normalized);
  std::istringstream bad(ss.str() + "x");
  EXPECT_THROW(ReadEmbeddings(bad), Error);
  EXPECT_THROW(t.Add("c.wav", {1.0f}), Error);
}

TEST(EndToEnd, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto r = gradcases::EndToEndCase(seed, gradcases::EndToEndOptions(seed));
    EXPECT_GT(r.checked, 0);
    EXPECT_EQ(r.inconsistent, 0) << "seed " << seed;
    EXPECT_LT(r.max_rel_err, 1e-3) << "seed " << seed << " " << r.worst_param;
  }
}

}  // namespace
}  // namespace msv::encoder
