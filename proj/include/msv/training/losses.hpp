#pragma once

// Softmax (cross-entropy over training speakers), angular prototypical,
// and their sum as the training objective.

#include <cstdint>
#include <span>
#include <vector>

#include "msv/nn/ops.hpp"
#include "msv/rng.hpp"

namespace msv::training {

using nn::Parameter;
using nn::Tape;
using nn::Tensor;
using nn::Var;

/// Classification layer over C training speakers: logits = x W + b with
/// W stored [embed_dim, C].
template <typename T>
struct SpeakerHead {
  Parameter<T> weight;
  Parameter<T> bias;

  static SpeakerHead Create(int embed_dim, int n_classes, std::uint64_t seed) {
    SpeakerHead h;
    Rng rng = Rng::Derive(seed, 0x4eadULL);
    Tensor<T> w({embed_dim, n_classes});
    const double a = std::sqrt(6.0 / (embed_dim + n_classes));
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(rng.Uniform(-a, a));
    h.weight = Parameter<T>("head.w", std::move(w));
    h.bias = Parameter<T>("head.b", Tensor<T>({n_classes}));
    return h;
  }

  int num_classes() const { return weight.value.dim(1); }
};

inline constexpr double kMinOmega = 1e-6;

/// Learnable scale and offset of the cosine similarity.
template <typename T>
struct PrototypicalScale {
  Parameter<T> omega{"ap.omega", Tensor<T>({1}, T(10))};
  Parameter<T> bias{"ap.bias", Tensor<T>({1}, T(-5))};

  void Clamp() {
    if (omega.value[0] < static_cast<T>(kMinOmega)) omega.value[0] = static_cast<T>(kMinOmega);
  }
};

template <typename T>
Var SoftmaxLoss(Tape<T> &tape, Var embeddings, std::span<const int> labels, SpeakerHead<T> &head) {
  Var logits = nn::Linear(tape, embeddings, tape.Param(head.weight), tape.Param(head.bias));
  return nn::SoftmaxCrossEntropy(tape, logits, labels);
}

/// `embeddings` rows are speaker-major groups of M utterances.
template <typename T>
Var AngularPrototypicalLoss(Tape<T> &tape, Var embeddings, int n_speakers, int m, PrototypicalScale<T> &scale) {
  return nn::AngularPrototypical(tape, embeddings, n_speakers, m, tape.Param(scale.omega), tape.Param(scale.bias));
}

template <typename T>
Var CombinedLoss(Tape<T> &tape, Var embeddings, std::span<const int> labels, int n_speakers, int m,
                 SpeakerHead<T> &head, PrototypicalScale<T> &scale) {
  return nn::Add(tape, SoftmaxLoss(tape, embeddings, labels, head),
                 AngularPrototypicalLoss(tape, embeddings, n_speakers, m, scale));
}

/// Fraction of rows whose arg-max logit equals the label.
template <typename T>
double Top1Accuracy(const Tensor<T> &logits, std::span<const int> labels) {
  const int n = logits.dim(0), c = logits.dim(1);
  int hits = 0;
  for (int i = 0; i < n; ++i) {
    int best = 0;
    for (int j = 1; j < c; ++j)
      if (logits[static_cast<std::size_t>(i) * c + j] > logits[static_cast<std::size_t>(i) * c + best]) best = j;
    hits += best == labels[i];
  }
  return n ? static_cast<double>(hits) / n : 0.0;
}

}  // namespace msv::training
