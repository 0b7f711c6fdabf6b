#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "msv/fusion/fusion.hpp"
#include "msv/rng.hpp"
#include "support/oracles.hpp"

namespace msv::fusion {
namespace {

using metrics::ScoreSet;

/// Three noisy streams of varying quality; stream s separates with margin
/// `sep[s]`. Scores are quantized so some grid points tie.
ScoreSet RandomScores(std::uint64_t seed, int n, std::array<double, 3> sep, bool quantize = false) {
  Rng rng(seed);
  ScoreSet set;
  set.streams = {"FB", "LF", "HF"};
  for (int i = 0; i < n; ++i) {
    const int label = i % 2 == 0 ? 1 : 0;
    std::vector<double> row;
    for (int s = 0; s < 3; ++s) {
      double v = rng.Normal() + label * sep[s];
      if (quantize) v = std::round(v * 8.0) / 8.0;
      row.push_back(v);
    }
    set.trial_ids.push_back("t" + std::to_string(i));
    set.labels.push_back(label);
    set.scores.push_back(row);
  }
  return set;
}

oracle::BruteFusion Brute(const ScoreSet &norm, int n, const metrics::DcfParams &p) {
  return oracle::BruteSearch(norm.scores, norm.labels, n, p.p_target, p.c_fr, p.c_fa, p.normalize);
}

TEST(FuseEmbeddings, Examples) {
  const std::vector<std::vector<double>> x{{1, 2}, {3, 4}, {5, 6}};
  const std::array<double, 3> corner{1, 0, 0};
  EXPECT_EQ(FuseEmbeddings<double>(x, corner), x[0]);
  const std::vector<std::vector<double>> same(3, std::vector<double>{0.25, -1.5, 3.0});
  const std::array<double, 3> third{1.0 / 3, 1.0 / 3, 1.0 / 3};
  const auto f = FuseEmbeddings<double>(same, third);
  for (int d = 0; d < 3; ++d) EXPECT_NEAR(f[d], same[0][d], 1e-15);
  const std::vector<std::vector<double>> ragged{{1, 2}, {3}, {5, 6}};
  EXPECT_THROW(FuseEmbeddings<double>(ragged, third), Error);
  const std::array<double, 2> two{0.5, 0.5};
  EXPECT_THROW(FuseEmbeddings<double>(x, two), Error);
}

TEST(FuseEmbeddings, MatchesNaiveLoop) {
  Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::vector<float>> x(3, std::vector<float>(64));
    for (auto &v : x)
      for (auto &e : v) e = static_cast<float>(rng.Normal());
    const double a = rng.Uniform(), b = rng.Uniform() * (1 - a);
    const std::array<double, 3> k{a, b, 1 - a - b};
    const auto f = FuseEmbeddings<float>(x, k);
    for (int d = 0; d < 64; ++d) EXPECT_NEAR(f[d], k[0] * x[0][d] + k[1] * x[1][d] + k[2] * x[2][d], 1e-6);
    std::vector<std::vector<double>> xd(3);
    for (int s = 0; s < 3; ++s) xd[s].assign(x[s].begin(), x[s].end());
    const auto fd = FuseEmbeddings<double>(xd, k);
    for (int d = 0; d < 64; ++d) EXPECT_NEAR(fd[d], k[0] * xd[0][d] + k[1] * xd[1][d] + k[2] * xd[2][d], 1e-9);
  }
}

TEST(NormalizeScores, AffineExamples) {
  ScoreSet set;
  set.streams = {"A"};
  set.labels = {1, 0, 1};
  set.trial_ids = {"x", "y", "z"};
  set.scores = {{-2.0}, {0.0}, {2.0}};
  const auto n = NormalizeScores(set);
  EXPECT_EQ(n.scores[0][0], 0.0);
  EXPECT_EQ(n.scores[1][0], 0.5);
  EXPECT_EQ(n.scores[2][0], 1.0);
  EXPECT_EQ(n.trial_ids, set.trial_ids);

  set.scores = {{0.0}, {0.3}, {1.0}};
  EXPECT_EQ(NormalizeScores(set).scores, set.scores);

  set.scores = {{4.0}, {4.0}, {4.0}};
  try {
    NormalizeScores(set);
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConstantScores);
  }
}

TEST(NormalizeScores, PreservesPerStreamMetrics) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto raw = RandomScores(seed, 300, {2.0, 1.0, 0.5});
    const auto norm = NormalizeScores(raw);
    for (std::size_t s = 0; s < 3; ++s) {
      const auto a = metrics::Evaluate(raw.Column(s), raw.labels);
      const auto b = metrics::Evaluate(norm.Column(s), norm.labels);
      EXPECT_NEAR(a.eer, b.eer, 1e-12);
      EXPECT_NEAR(a.dcf.raw, b.dcf.raw, 1e-12);
      for (double v : norm.Column(s)) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
    }
  }
}

TEST(FuseScores, Examples) {
  const auto norm = NormalizeScores(RandomScores(2, 50, {1, 1, 1}));
  EXPECT_EQ(FuseScores(norm, FusionWeights{{1, 0, 0}}), norm.Column(0));

  ScoreSet same = norm;
  for (auto &row : same.scores) row = {row[0], row[0], row[0]};
  const auto fused = FuseScores(same, FusionWeights{{0.2, 0.3, 0.5}});
  for (std::size_t i = 0; i < fused.size(); ++i) EXPECT_NEAR(fused[i], same.scores[i][0], 1e-15);

  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const double a = rng.Uniform(), b = rng.Uniform() * (1 - a);
    const FusionWeights w{{a, b, 1 - a - b}};
    const auto f = FuseScores(norm, w);
    for (std::size_t i = 0; i < f.size(); ++i)
      EXPECT_NEAR(f[i], a * norm.scores[i][0] + b * norm.scores[i][1] + (1 - a - b) * norm.scores[i][2], 1e-12);
  }
  const std::array<double, 2> two{0.5, 0.5};
  EXPECT_THROW(FuseScores(norm, two), Error);
}

TEST(Search, GridSize) {
  const auto norm = NormalizeScores(RandomScores(4, 40, {1, 1, 1}));
  EXPECT_EQ(SearchWeights(norm, {}).candidates, 5151u);
  SearchConfig cfg;
  cfg.step = 0.1;
  EXPECT_EQ(SearchWeights(norm, cfg).candidates, 66u);
  cfg.k_min = 0.2;  // k_min bounds k1 and k2 only: i, j >= 2, i + j <= 10
  EXPECT_EQ(SearchWeights(norm, cfg).candidates, 28u);
  cfg.step = 0.03;
  EXPECT_THROW(SearchWeights(norm, cfg), Error);
}

TEST(Search, MatchesBruteForce) {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const auto norm = NormalizeScores(RandomScores(10 + seed, 200, {1.5, 1.0, 0.7}, seed % 2 == 0));
    for (bool normalize : {true, false}) {
      SearchConfig cfg;
      cfg.step = 0.05;
      cfg.dcf.normalize = normalize;
      const auto r = SearchWeights(norm, cfg);
      const auto b = Brute(norm, 20, cfg.dcf);
      EXPECT_EQ(r.objective, b.value) << "seed " << seed;
      EXPECT_EQ(r.weights.k[0], b.k1);
      EXPECT_EQ(r.weights.k[1], b.k2);
      EXPECT_EQ(r.weights.k[2], b.k3);
    }
  }
}

TEST(Search, MatchesBruteForceAtFullResolution) {
  const auto norm = NormalizeScores(RandomScores(77, 200, {1.2, 1.0, 0.8}, true));
  const auto r = SearchWeights(norm, {});
  const auto b = Brute(norm, 100, metrics::DcfParams{});
  EXPECT_EQ(r.objective, b.value);
  EXPECT_EQ(r.weights.k[0], b.k1);
  EXPECT_EQ(r.weights.k[1], b.k2);
}

TEST(Search, PerfectStreamReachesZero) {
  auto raw = RandomScores(5, 200, {0, 0, 0});
  for (std::size_t i = 0; i < raw.num_trials(); ++i) raw.scores[i][0] = raw.labels[i] ? 2.0 + i * 1e-3 : -2.0 - i * 1e-3;
  const auto norm = NormalizeScores(raw);
  const auto r = SearchWeights(norm, {});
  EXPECT_EQ(r.objective, 0.0);
  const auto fused = FuseScores(norm, r.weights);
  EXPECT_EQ(metrics::MinDcf(fused, norm.labels).normalized, 0.0);
  EXPECT_EQ(metrics::MinDcf(FuseScores(norm, FusionWeights{{1, 0, 0}}), norm.labels).normalized, 0.0);
}

TEST(Search, WeightsInvariantsAndCornerSafety) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto norm = NormalizeScores(RandomScores(20 + seed, 150, {1.0, 0.8, 1.3}, seed % 2 == 0));
    for (Objective obj : {Objective::kMinDcf, Objective::kEer}) {
      SearchConfig cfg;
      cfg.step = 0.02;
      cfg.objective = obj;
      const auto r = SearchWeights(norm, cfg);
      double sum = 0.0;
      for (double k : r.weights.k) {
        EXPECT_GE(k, 0.0);
        EXPECT_NEAR(k / cfg.step, std::round(k / cfg.step), 1e-9);
        sum += k;
      }
      EXPECT_NEAR(sum, 1.0, 1e-9);
      for (int s = 0; s < 3; ++s) {
        FusionWeights corner{{0, 0, 0}};
        corner.k[s] = 1.0;
        EXPECT_LE(r.objective, EvaluateObjective(FuseScores(norm, corner), norm.labels, cfg));
      }
      EXPECT_EQ(r.objective_name, obj == Objective::kEer ? "EER" : "minDCF_norm");
    }
  }
}

TEST(Search, TieBreakPrefersSmallestLeadingWeights) {
  // Every stream separates perfectly, so every grid point scores zero.
  ScoreSet raw;
  raw.streams = {"FB", "LF", "HF"};
  for (int i = 0; i < 20; ++i) {
    const int label = i % 2;
    const double v = label ? 1.0 + i : -1.0 - i;
    raw.trial_ids.push_back(std::to_string(i));
    raw.labels.push_back(label);
    raw.scores.push_back({v, v, v});
  }
  const auto r = SearchWeights(NormalizeScores(raw), {});
  EXPECT_EQ(r.objective, 0.0);
  EXPECT_EQ(r.weights, (FusionWeights{{0, 0, 1}}));
}

TEST(Search, StreamPermutationPermutesWeights) {
  int compared = 0;
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    const auto norm = NormalizeScores(RandomScores(40 + seed, 400, {1.6, 1.1, 0.9}));
    SearchConfig cfg;
    cfg.step = 0.05;
    const auto r = SearchWeights(norm, cfg);
    // Skip sets where the optimum is not unique.
    int ties = 0;
    const int n = 20;
    for (int i = 0; i <= n; ++i)
      for (int j = 0; i + j <= n; ++j) {
        const double k[3] = {double(i) / n, double(j) / n, double(n - i - j) / n};
        if (EvaluateObjective(FuseScores(norm, std::span<const double>(k, 3)), norm.labels, cfg) == r.objective)
          ++ties;
      }
    if (ties != 1) continue;
    ScoreSet perm = norm;
    for (auto &row : perm.scores) row = {row[2], row[0], row[1]};
    const auto p = SearchWeights(perm, cfg);
    EXPECT_EQ(p.objective, r.objective);
    EXPECT_NEAR(p.weights.k[0], r.weights.k[2], 1e-12);
    EXPECT_NEAR(p.weights.k[1], r.weights.k[0], 1e-12);
    EXPECT_NEAR(p.weights.k[2], r.weights.k[1], 1e-12);
    ++compared;
  }
  EXPECT_GT(compared, 0);
}

TEST(Search, ThreadsGiveSameResult) {
  const auto norm = NormalizeScores(RandomScores(9, 300, {1.0, 1.2, 0.9}, true));
  SearchConfig cfg;
  const auto a = SearchWeights(norm, cfg);
  cfg.threads = 4;
  const auto b = SearchWeights(norm, cfg);
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_EQ(a.objective, b.objective);
}

TEST(Search, RequiresThreeStreams) {
  auto norm = NormalizeScores(RandomScores(9, 30, {1, 1, 1}));
  for (auto &row : norm.scores) row.pop_back();
  norm.streams.pop_back();
  EXPECT_THROW(SearchWeights(norm, {}), Error);
}

TEST(WeightsFile, RoundTripAndValidation) {
  SearchResult r;
  r.weights.k = {0.25, 0.7, 0.05};
  r.objective_name = "minDCF_norm";
  r.objective = 0.125;
  std::stringstream ss;
  WriteWeights(ss, r);
  EXPECT_EQ(ss.str(), "0.25 0.7 0.05 minDCF_norm 0.125\n");
  const auto back = ReadWeights(ss);
  EXPECT_EQ(back.weights, r.weights);
  EXPECT_EQ(back.objective, r.objective);
  EXPECT_EQ(back.objective_name, r.objective_name);
  for (const char *bad : {"0.5 0.5 0.5 EER 0.1\n", "0.5 0.5 EER 0.1\n", "-0.5 1.5 0 EER 0\n", "1 0 0 EER 0 extra\n"}) {
    std::istringstream in(bad);
    EXPECT_THROW(ReadWeights(in), Error) << bad;
  }
}

}  // namespace
}  // namespace msv::fusion
