#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "msv/corpus/synth.hpp"
#include "msv/error.hpp"
#include "msv/metrics/scores_io.hpp"
#include "msv/rng.hpp"

namespace msv::corpus {

/// Alternates target (even index) and nontarget (odd index) trials drawn
/// uniformly from the manifest. No trial pairs an utterance with itself.
inline metrics::TrialList GenerateTrials(const Manifest &m, int n_trials, std::uint64_t seed) {
  if (n_trials < 1) Fail(ErrorKind::kInvalidArgument, "n_trials must be positive");
  std::map<std::string, std::vector<std::string>> by_speaker;
  for (const auto &e : m.entries) by_speaker[e.speaker].push_back(e.path);
  std::vector<const std::vector<std::string> *> speakers, multi;
  for (const auto &[id, utts] : by_speaker) {
    speakers.push_back(&utts);
    if (utts.size() >= 2) multi.push_back(&utts);
  }
  if (speakers.size() < 2) Fail(ErrorKind::kInsufficientData, "trial generation needs at least two speakers");
  if (multi.empty()) Fail(ErrorKind::kInsufficientData, "no speaker has two utterances for target trials");

  Rng rng(seed ^ 0x7417a15ULL);
  metrics::TrialList trials;
  trials.reserve(static_cast<std::size_t>(n_trials));
  for (int i = 0; i < n_trials; ++i) {
    if (i % 2 == 0) {
      const auto &utts = *multi[rng.Below(multi.size())];
      const std::size_t a = rng.Below(utts.size());
      std::size_t b = rng.Below(utts.size() - 1);
      if (b >= a) ++b;
      trials.push_back({1, utts[a], utts[b]});
    } else {
      const std::size_t s1 = rng.Below(speakers.size());
      std::size_t s2 = rng.Below(speakers.size() - 1);
      if (s2 >= s1) ++s2;
      const auto &u1 = *speakers[s1];
      const auto &u2 = *speakers[s2];
      trials.push_back({0, u1[rng.Below(u1.size())], u2[rng.Below(u2.size())]});
    }
  }
  return trials;
}

}  // namespace msv::corpus
