#pragma once

// Finite-difference gradient cases over every differentiable operation,
// the pooling block, both losses and a toy encoder end to end. Each case
// draws its inputs from the given seed.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "msv/encoder/encoder.hpp"
#include "msv/nn/ops.hpp"
#include "msv/training/losses.hpp"
#include "oracles.hpp"

namespace msv::gradcases {

using nn::Parameter;
using nn::Tape;
using nn::Tensor;
using nn::Var;
using oracle::GradCheckOptions;
using oracle::GradCheckResult;
using oracle::RandomTensor;

/// Scalar r . vec(y) with fixed random r, so every output element matters.
inline Var Project(Tape<double> &tape, Var y, const Tensor<double> &r) {
  const int n = static_cast<int>(tape.value(y).size());
  Var flat = nn::Reshape(tape, y, {1, n});
  return nn::Linear(tape, flat, tape.Constant(r.Reshaped({n, 1})));
}

/// Values bounded away from zero, so ReLU kinks stay outside +-h.
inline Tensor<double> AwayFromZero(const nn::Shape &shape, Rng &rng) {
  Tensor<double> t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double v = 0.1 + std::abs(rng.Normal());
    t[i] = rng.Uniform() < 0.5 ? -v : v;
  }
  return t;
}

inline GradCheckResult AddCase(std::uint64_t seed) {
  Rng rng(seed);
  Parameter<double> a("a", RandomTensor({3, 4}, rng)), b("b", RandomTensor({3, 4}, rng));
  const auto r = RandomTensor({12}, rng);
  return oracle::CheckGradients({&a, &b}, [&](Tape<double> &t) {
    return Project(t, nn::Add(t, t.Param(a), t.Param(b)), r);
  });
}

inline GradCheckResult ReluCase(std::uint64_t seed) {
  Rng rng(seed);
  Parameter<double> x("x", AwayFromZero({4, 5}, rng));
  const auto r = RandomTensor({20}, rng);
  return oracle::CheckGradients({&x}, [&](Tape<double> &t) { return Project(t, nn::Relu(t, t.Param(x)), r); });
}

inline GradCheckResult TanhCase(std::uint64_t seed) {
  Rng rng(seed);
  Parameter<double> x("x", RandomTensor({4, 5}, rng));
  const auto r = RandomTensor({20}, rng);
  return oracle::CheckGradients({&x}, [&](Tape<double> &t) { return Project(t, nn::Tanh(t, t.Param(x)), r); });
}

inline GradCheckResult LinearCase(std::uint64_t seed) {
  Rng rng(seed);
  Parameter<double> x("x", RandomTensor({3, 5}, rng)), w("w", RandomTensor({5, 4}, rng)),
      b("b", RandomTensor({4}, rng));
  const auto r = RandomTensor({12}, rng);
  return oracle::CheckGradients({&x, &w, &b}, [&](Tape<double> &t) {
    return Project(t, nn::Linear(t, t.Param(x), t.Param(w), t.Param(b)), r);
  });
}

inline GradCheckResult ConvCase(std::uint64_t seed, int stride) {
  Rng rng(seed);
  Parameter<double> x("x", RandomTensor({2, 5, 6, 2}, rng)), k("k", RandomTensor({3, 3, 2, 3}, rng));
  const int oh = (5 + stride - 1) / stride, ow = (6 + stride - 1) / stride;
  const auto r = RandomTensor({2 * oh * ow * 3}, rng);
  return oracle::CheckGradients({&x, &k}, [&](Tape<double> &t) {
    return Project(t, nn::Conv2d(t, t.Param(x), t.Param(k), stride, stride), r);
  });
}

inline GradCheckResult BatchNormCase(std::uint64_t seed, nn::Mode mode) {
  Rng rng(seed);
  Parameter<double> x("x", RandomTensor({4, 4, 2}, rng)), g("g", RandomTensor({2}, rng)),
      b("b", RandomTensor({2}, rng));
  nn::BatchNormStats<double> st{RandomTensor({2}, rng), Tensor<double>({2})};
  for (int c = 0; c < 2; ++c) st.running_var[c] = 0.5 + rng.Uniform();
  const auto r = RandomTensor({32}, rng);
  return oracle::CheckGradients({&x, &g, &b}, [&](Tape<double> &t) {
    return Project(t, nn::BatchNorm(t, t.Param(x), t.Param(g), t.Param(b), st, mode), r);
  });
}

inline GradCheckResult ToSequenceCase(std::uint64_t seed) {
  Rng rng(seed);
  Parameter<double> x("x", RandomTensor({2, 3, 4, 2}, rng));
  const auto r = RandomTensor({48}, rng);
  return oracle::CheckGradients({&x}, [&](Tape<double> &t) { return Project(t, nn::ToSequence(t, t.Param(x)), r); });
}

inline GradCheckResult SoftmaxRowsCase(std::uint64_t seed) {
  Rng rng(seed);
  Parameter<double> x("x", RandomTensor({3, 6}, rng));
  const auto r = RandomTensor({18}, rng);
  return oracle::CheckGradients({&x}, [&](Tape<double> &t) { return Project(t, nn::SoftmaxRows(t, t.Param(x)), r); });
}

inline GradCheckResult AttentiveStatsCase(std::uint64_t seed) {
  Rng rng(seed);
  Parameter<double> h("h", RandomTensor({2, 5, 3}, rng)), e("e", RandomTensor({2, 5}, rng));
  const auto r = RandomTensor({12}, rng);
  return oracle::CheckGradients({&h, &e}, [&](Tape<double> &t) {
    Var alpha = nn::SoftmaxRows(t, t.Param(e));
    return Project(t, nn::AttentiveStats(t, t.Param(h), alpha), r);
  });
}

/// Full pooling block: attention MLP, softmax over time, weighted mean and
/// standard deviation.
inline GradCheckResult AspCase(std::uint64_t seed) {
  Rng rng(seed);
  const int n = 2, steps = 6, d = 4, a = 3;
  Parameter<double> h("h", RandomTensor({n, steps, d}, rng)), w("w", RandomTensor({d, a}, rng)),
      b("b", RandomTensor({a}, rng)), v("v", RandomTensor({a, 1}, rng));
  const auto r = RandomTensor({n * 2 * d}, rng);
  return oracle::CheckGradients({&h, &w, &b, &v}, [&](Tape<double> &t) {
    Var hv = t.Param(h);
    Var flat = nn::Reshape(t, hv, {n * steps, d});
    Var hid = nn::Tanh(t, nn::Linear(t, flat, t.Param(w), t.Param(b)));
    Var logits = nn::Reshape(t, nn::Linear(t, hid, t.Param(v)), {n, steps});
    return Project(t, nn::AttentiveStats(t, hv, nn::SoftmaxRows(t, logits)), r);
  });
}

inline GradCheckResult SoftmaxLossCase(std::uint64_t seed) {
  Rng rng(seed);
  const int n = 6, d = 8, c = 4;
  Parameter<double> x("x", RandomTensor({n, d}, rng));
  auto head = training::SpeakerHead<double>::Create(d, c, seed);
  for (std::size_t i = 0; i < head.bias.value.size(); ++i) head.bias.value[i] = rng.Normal(0.0, 0.1);
  std::vector<int> labels(n);
  for (int &l : labels) l = static_cast<int>(rng.Below(c));
  return oracle::CheckGradients({&x, &head.weight, &head.bias}, [&](Tape<double> &t) {
    return training::SoftmaxLoss(t, t.Param(x), labels, head);
  });
}

inline GradCheckResult ApLossCase(std::uint64_t seed) {
  Rng rng(seed);
  const int n = 3, m = 2, d = 8;
  Parameter<double> x("x", RandomTensor({n * m, d}, rng));
  training::PrototypicalScale<double> scale;
  scale.omega.value[0] = rng.Uniform(1.0, 10.0);
  scale.bias.value[0] = rng.Uniform(-5.0, 0.0);
  return oracle::CheckGradients({&x, &scale.omega, &scale.bias}, [&](Tape<double> &t) {
    return training::AngularPrototypicalLoss(t, t.Param(x), n, m, scale);
  });
}

inline GradCheckResult CombinedLossCase(std::uint64_t seed) {
  Rng rng(seed);
  const int n = 3, m = 2, d = 8;
  Parameter<double> x("x", RandomTensor({n * m, d}, rng));
  auto head = training::SpeakerHead<double>::Create(d, n, seed);
  training::PrototypicalScale<double> scale;
  std::vector<int> labels;
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < m; ++j) labels.push_back(k);
  return oracle::CheckGradients({&x, &head.weight, &head.bias, &scale.omega, &scale.bias}, [&](Tape<double> &t) {
    return training::CombinedLoss(t, t.Param(x), labels, n, m, head, scale);
  });
}

inline encoder::EncoderConfig EndToEndConfig() {
  encoder::EncoderConfig cfg = encoder::ToyConfig();
  cfg.n_mels = 20;
  cfg.n_frames = 50;
  return cfg;
}

/// Features -> toy encoder (training-mode batch norm) -> combined loss.
/// Checks a random sample of coordinates from the input features and from
/// every parameter tensor.
inline GradCheckResult EndToEndCase(std::uint64_t seed, const GradCheckOptions &opts) {
  Rng rng(seed);
  const auto cfg = EndToEndConfig();
  dsp::FrontendConfig fe;
  fe.n_mels = cfg.n_mels;
  auto model = encoder::Encoder<double>::Create(cfg, fe, seed);
  const int n = 2, m = 2;
  Parameter<double> feats("features", RandomTensor({n * m, cfg.n_mels, cfg.n_frames, 1}, rng));
  auto head = training::SpeakerHead<double>::Create(cfg.embed_dim, n, seed);
  training::PrototypicalScale<double> scale;
  const std::vector<int> labels{0, 0, 1, 1};
  std::vector<Parameter<double> *> params{&feats, &head.weight, &head.bias, &scale.omega, &scale.bias};
  for (auto *p : model.ParamPointers()) params.push_back(p);
  return oracle::CheckGradients(
      params,
      [&](Tape<double> &t) {
        Var emb = model.Forward(t, t.Param(feats), nn::Mode::kTrain);
        return training::CombinedLoss(t, emb, labels, n, m, head, scale);
      },
      opts);
}

struct NamedCase {
  std::string name;
  GradCheckResult (*run)(std::uint64_t);
};

inline std::vector<NamedCase> PrimitiveCases() {
  return {
      {"add", AddCase},
      {"relu", ReluCase},
      {"tanh", TanhCase},
      {"linear", LinearCase},
      {"conv2d_stride1", [](std::uint64_t s) { return ConvCase(s, 1); }},
      {"conv2d_stride2", [](std::uint64_t s) { return ConvCase(s, 2); }},
      {"batchnorm_train", [](std::uint64_t s) { return BatchNormCase(s, nn::Mode::kTrain); }},
      {"batchnorm_eval", [](std::uint64_t s) { return BatchNormCase(s, nn::Mode::kEval); }},
      {"to_sequence", ToSequenceCase},
      {"softmax_rows", SoftmaxRowsCase},
      {"attentive_stats", AttentiveStatsCase},
      {"asp", AspCase},
      {"softmax_loss", SoftmaxLossCase},
      {"angular_prototypical_loss", ApLossCase},
      {"combined_loss", CombinedLossCase},
  };
}

/// Options for the end-to-end check. A smaller step than the primitive
/// checks keeps perturbations clear of ReLU kinks deep in the network.
inline GradCheckOptions EndToEndOptions(std::uint64_t seed) {
  GradCheckOptions o;
  o.h = 1e-5;
  o.max_coords = 4;
  o.refinements = 2;
  o.seed = seed;
  return o;
}

}  // namespace msv::gradcases
