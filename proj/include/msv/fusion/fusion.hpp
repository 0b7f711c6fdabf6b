#pragma once

// Embedding- and score-level fusion of per-stream outputs, and the
// exhaustive simplex grid search for fusion weights.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "msv/error.hpp"
#include "msv/kv.hpp"
#include "msv/metrics/metrics.hpp"
#include "msv/metrics/scores_io.hpp"

namespace msv::fusion {

/// Weights in stream order (FB, LF, HF for the three-stream system).
struct FusionWeights {
  std::array<double, 3> k{1.0, 0.0, 0.0};

  bool operator==(const FusionWeights &) const = default;
};

enum class Objective { kMinDcf, kEer };

inline std::string ObjectiveName(Objective o, bool normalized) {
  if (o == Objective::kEer) return "EER";
  return normalized ? "minDCF_norm" : "minDCF_raw";
}

struct SearchConfig {
  double step = 0.01;
  double k_min = 0.0;
  Objective objective = Objective::kMinDcf;
  metrics::DcfParams dcf;
  unsigned threads = 1;
};

struct SearchResult {
  FusionWeights weights;
  double objective = 0.0;
  std::string objective_name;
  std::size_t candidates = 0;
};

/// x_f = sum_s k_s x^(s), for any number of streams.
template <typename T>
std::vector<T> FuseEmbeddings(std::span<const std::vector<T>> streams, std::span<const double> k) {
  if (streams.empty() || streams.size() != k.size())
    Fail(ErrorKind::kDimMismatch, "need one weight per stream embedding");
  const std::size_t dim = streams.front().size();
  for (const auto &x : streams)
    if (x.size() != dim) Fail(ErrorKind::kDimMismatch, "stream embeddings differ in dimension");
  std::vector<T> out(dim, T(0));
  for (std::size_t d = 0; d < dim; ++d) {
    double acc = 0.0;
    for (std::size_t s = 0; s < streams.size(); ++s) acc += k[s] * static_cast<double>(streams[s][d]);
    out[d] = static_cast<T>(acc);
  }
  return out;
}

/// Per-stream min-max normalization to [0, 1]. Order preserving, so every
/// single-stream metric is unchanged.
inline metrics::ScoreSet NormalizeScores(const metrics::ScoreSet &raw) {
  metrics::ScoreSet out = raw;
  for (std::size_t s = 0; s < raw.num_streams(); ++s) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto &row : raw.scores) {
      lo = std::min(lo, row[s]);
      hi = std::max(hi, row[s]);
    }
    if (!(hi > lo)) Fail(ErrorKind::kConstantScores, "stream '" + raw.streams[s] + "' has a single distinct score");
    for (auto &row : out.scores) row[s] = (row[s] - lo) / (hi - lo);
  }
  return out;
}

inline std::vector<double> FuseScores(const metrics::ScoreSet &norm, std::span<const double> k) {
  if (k.size() != norm.num_streams())
    Fail(ErrorKind::kDimMismatch, "got " + std::to_string(k.size()) + " weights for " +
                                      std::to_string(norm.num_streams()) + " streams");
  std::vector<double> fused(norm.num_trials(), 0.0);
  for (std::size_t i = 0; i < norm.num_trials(); ++i) {
    double acc = 0.0;
    for (std::size_t s = 0; s < k.size(); ++s) acc += k[s] * norm.scores[i][s];
    fused[i] = acc;
  }
  return fused;
}

inline std::vector<double> FuseScores(const metrics::ScoreSet &norm, const FusionWeights &w) {
  return FuseScores(norm, std::span<const double>(w.k));
}

inline double EvaluateObjective(std::span<const double> scores, std::span<const int> labels,
                                const SearchConfig &cfg) {
  const auto pts = metrics::Sweep(scores, labels);
  if (cfg.objective == Objective::kEer) return metrics::EerFromSweep(pts);
  const auto dcf = metrics::MinDcfFromSweep(pts, cfg.dcf);
  return cfg.dcf.normalize ? dcf.normalized : dcf.raw;
}

/// Grid resolution n = 1/step; the step must divide 1.
inline int GridDivisions(double step) {
  if (!(step > 0.0 && step <= 1.0)) Fail(ErrorKind::kInvalidArgument, "step must lie in (0, 1]");
  const double n = std::round(1.0 / step);
  if (std::abs(n * step - 1.0) > 1e-9) Fail(ErrorKind::kInvalidArgument, "step must divide 1 evenly");
  return static_cast<int>(n);
}

/// Exhaustive search over {(k1, k2) : k1, k2 >= k_min, k1 + k2 <= 1,
/// multiples of step}, k3 = 1 - k1 - k2. Returns the global minimizer of
/// the objective; ties go to the lexicographically smallest (k1, k2).
inline SearchResult SearchWeights(const metrics::ScoreSet &norm, const SearchConfig &cfg) {
  if (norm.num_streams() != 3) Fail(ErrorKind::kDimMismatch, "weight search expects exactly three streams");
  if (!(cfg.k_min >= 0.0)) Fail(ErrorKind::kInvalidArgument, "k_min must be non-negative");
  metrics::Validate(cfg.dcf);
  const int n = GridDivisions(cfg.step);
  const int lo = static_cast<int>(std::ceil(cfg.k_min * n - 1e-9));

  struct Cell {
    int i, j;
  };
  std::vector<Cell> grid;
  for (int i = lo; i <= n; ++i)
    for (int j = lo; i + j <= n; ++j) grid.push_back({i, j});
  if (grid.empty()) Fail(ErrorKind::kInvalidArgument, "k_min leaves an empty grid");

  std::vector<double> values(grid.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t c = begin; c < end; ++c) {
      const double k[3] = {static_cast<double>(grid[c].i) / n, static_cast<double>(grid[c].j) / n,
                           static_cast<double>(n - grid[c].i - grid[c].j) / n};
      const auto fused = FuseScores(norm, std::span<const double>(k, 3));
      values[c] = EvaluateObjective(fused, norm.labels, cfg);
    }
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(cfg.threads, static_cast<unsigned>(grid.size())));
  if (threads == 1) {
    work(0, grid.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (grid.size() + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t b = t * chunk, e = std::min(grid.size(), b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto &th : pool) th.join();
  }

  // Grid order is lexicographic in (i, j); strict comparison keeps the first.
  std::size_t best = 0;
  for (std::size_t c = 1; c < grid.size(); ++c)
    if (values[c] < values[best]) best = c;

  SearchResult r;
  r.weights.k = {static_cast<double>(grid[best].i) / n, static_cast<double>(grid[best].j) / n,
                 static_cast<double>(n - grid[best].i - grid[best].j) / n};
  r.objective = values[best];
  r.objective_name = ObjectiveName(cfg.objective, cfg.dcf.normalize);
  r.candidates = grid.size();
  return r;
}

/// Weights file: "k_fb k_lf k_hf objective_name objective_value".
inline void WriteWeights(std::ostream &os, const SearchResult &r) {
  os << FormatDouble(r.weights.k[0]) << ' ' << FormatDouble(r.weights.k[1]) << ' ' << FormatDouble(r.weights.k[2])
     << ' ' << r.objective_name << ' ' << FormatDouble(r.objective) << '\n';
}

inline SearchResult ReadWeights(std::istream &is) {
  std::string line;
  while (std::getline(is, line) && Trim(line).empty()) {
  }
  std::istringstream in(line);
  std::string f[5], extra;
  for (auto &s : f)
    if (!(in >> s)) Fail(ErrorKind::kMalformedInput, "weights file needs 5 space-separated fields");
  if (in >> extra) Fail(ErrorKind::kMalformedInput, "trailing fields in weights file");
  SearchResult r;
  for (int s = 0; s < 3; ++s) {
    r.weights.k[s] = ParseDouble("weight", f[s]);
    if (!(r.weights.k[s] >= 0.0)) Fail(ErrorKind::kMalformedInput, "negative fusion weight");
  }
  const double total = r.weights.k[0] + r.weights.k[1] + r.weights.k[2];
  if (std::abs(total - 1.0) > 1e-9) Fail(ErrorKind::kMalformedInput, "fusion weights must sum to 1");
  r.objective_name = f[3];
  r.objective = ParseDouble("objective", f[4]);
  return r;
}

inline void SaveWeights(const std::string &path, const SearchResult &r) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) Fail(ErrorKind::kIoError, "cannot open " + path + " for writing");
  WriteWeights(os, r);
}

inline SearchResult LoadWeights(const std::string &path) {
  std::ifstream is(path);
  if (!is) Fail(ErrorKind::kIoError, "cannot open " + path);
  return ReadWeights(is);
}

}  // namespace msv::fusion
