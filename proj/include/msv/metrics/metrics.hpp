#pragma once

// Verification metrics. Scores are "higher = more likely same speaker"; a
// trial is accepted when score >= threshold.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "msv/error.hpp"

namespace msv::metrics {

struct DcfParams {
  double c_fr = 1.0;
  double c_fa = 1.0;
  double p_target = 0.05;
  bool normalize = true;
};

inline void Validate(const DcfParams &p) {
  if (!(p.c_fr > 0.0) || !(p.c_fa > 0.0)) Fail(ErrorKind::kInvalidArgument, "DCF costs must be positive");
  if (!(p.p_target > 0.0 && p.p_target < 1.0)) Fail(ErrorKind::kInvalidArgument, "p_target must lie in (0, 1)");
}

/// Cost of the better trivial system (accept-all or reject-all).
inline double DefaultDcf(const DcfParams &p) { return std::min(p.c_fr * p.p_target, p.c_fa * (1.0 - p.p_target)); }

template <typename T>
double EuclideanDistance(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size())
    Fail(ErrorKind::kDimMismatch, "embedding dims " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return std::sqrt(acc);
}

/// Trial score: negated distance so that closer pairs score higher.
template <typename T>
double TrialScore(std::span<const T> a, std::span<const T> b) {
  return -EuclideanDistance(a, b);
}

struct Rates {
  double far = 0.0;
  double frr = 0.0;
};

struct OperatingPoint {
  double threshold = 0.0;
  double far = 0.0;
  double frr = 0.0;
};

namespace detail {

inline void CheckInputs(std::span<const double> scores, std::span<const int> labels, std::size_t &n_tar,
                        std::size_t &n_non) {
  if (scores.size() != labels.size()) Fail(ErrorKind::kDimMismatch, "score/label count mismatch");
  n_tar = n_non = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) Fail(ErrorKind::kMalformedInput, "non-finite score");
    if (labels[i] == 1)
      ++n_tar;
    else if (labels[i] == 0)
      ++n_non;
    else
      Fail(ErrorKind::kMalformedInput, "labels must be 0 or 1");
  }
  if (n_tar == 0 || n_non == 0) Fail(ErrorKind::kEmptyClass, "need at least one target and one nontarget trial");
}

}  // namespace detail

inline Rates FarFrr(std::span<const double> scores, std::span<const int> labels, double threshold) {
  std::size_t n_tar = 0, n_non = 0;
  detail::CheckInputs(scores, labels, n_tar, n_non);
  std::size_t fa = 0, fr = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] == 0 && scores[i] >= threshold) ++fa;
    if (labels[i] == 1 && scores[i] < threshold) ++fr;
  }
  return {static_cast<double>(fa) / static_cast<double>(n_non), static_cast<double>(fr) / static_cast<double>(n_tar)};
}

/// Operating points at every distinct score (ascending) followed by +inf
/// (reject all). The first point accepts everything: FAR 1, FRR 0.
inline std::vector<OperatingPoint> Sweep(std::span<const double> scores, std::span<const int> labels) {
  std::size_t n_tar = 0, n_non = 0;
  detail::CheckInputs(scores, labels, n_tar, n_non);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  std::vector<OperatingPoint> points;
  std::size_t tar_below = 0, non_below = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double v = scores[order[i]];
    points.push_back({v, static_cast<double>(n_non - non_below) / static_cast<double>(n_non),
                      static_cast<double>(tar_below) / static_cast<double>(n_tar)});
    for (; i < order.size() && scores[order[i]] == v; ++i) {
      if (labels[order[i]] == 1)
        ++tar_below;
      else
        ++non_below;
    }
  }
  points.push_back({std::numeric_limits<double>::infinity(), 0.0, 1.0});
  return points;
}

/// Equal error rate in [0, 1]: the exact crossing when one exists,
/// otherwise linear interpolation between the two operating points where
/// FAR - FRR changes sign.
inline double EerFromSweep(const std::vector<OperatingPoint> &pts) {
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double d = pts[i].far - pts[i].frr;
    if (d > 0.0) continue;
    if (d == 0.0 || i == 0) return pts[i].far;
    const double d_prev = pts[i - 1].far - pts[i - 1].frr;
    const double t = d_prev / (d_prev - d);
    return pts[i - 1].far + t * (pts[i].far - pts[i - 1].far);
  }
  return pts.back().far;
}

inline double Eer(std::span<const double> scores, std::span<const int> labels) {
  return EerFromSweep(Sweep(scores, labels));
}

struct DcfResult {
  double raw = 0.0;
  double normalized = 0.0;
  double threshold = 0.0;
};

inline DcfResult MinDcfFromSweep(const std::vector<OperatingPoint> &pts, const DcfParams &p) {
  Validate(p);
  DcfResult best;
  best.raw = std::numeric_limits<double>::infinity();
  for (const OperatingPoint &op : pts) {
    const double dcf = p.c_fr * p.p_target * op.frr + p.c_fa * (1.0 - p.p_target) * op.far;
    if (dcf < best.raw) {
      best.raw = dcf;
      best.threshold = op.threshold;
    }
  }
  best.normalized = best.raw / DefaultDcf(p);
  return best;
}

inline DcfResult MinDcf(std::span<const double> scores, std::span<const int> labels, const DcfParams &p = {}) {
  return MinDcfFromSweep(Sweep(scores, labels), p);
}

/// Standard normal quantile (Acklam's rational approximation polished by
/// one Halley step). Returns +-inf at 0 and 1.
inline double Probit(double p) {
  if (p <= 0.0) return -std::numeric_limits<double>::infinity();
  if (p >= 1.0) return std::numeric_limits<double>::infinity();
  if (p == 0.5) return 0.0;
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  const double u = e * std::sqrt(2.0 * 3.14159265358979323846) * std::exp(x * x / 2.0);
  return x - u / (1.0 + x * u / 2.0);
}

struct DetPoint {
  double threshold = 0.0;
  double far = 0.0;
  double frr = 0.0;
  double probit_far = 0.0;
  double probit_frr = 0.0;
};

/// DET curve: one point per distinct threshold plus the reject-all corner,
/// FAR non-increasing and FRR non-decreasing along the list.
inline std::vector<DetPoint> DetPoints(std::span<const double> scores, std::span<const int> labels) {
  std::vector<DetPoint> out;
  for (const OperatingPoint &op : Sweep(scores, labels))
    out.push_back({op.threshold, op.far, op.frr, Probit(op.far), Probit(op.frr)});
  return out;
}

struct Summary {
  double eer = 0.0;
  DcfResult dcf;
};

inline Summary Evaluate(std::span<const double> scores, std::span<const int> labels, const DcfParams &p = {}) {
  const auto pts = Sweep(scores, labels);
  return {EerFromSweep(pts), MinDcfFromSweep(pts, p)};
}

}  // namespace msv::metrics
