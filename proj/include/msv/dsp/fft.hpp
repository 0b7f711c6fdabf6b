#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "msv/error.hpp"

namespace msv::dsp {

inline bool IsPowerOfTwo(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// Iterative radix-2 FFT with a precomputed twiddle table.
class FftPlan {
 public:
  explicit FftPlan(std::size_t n) : n_(n), twiddles_(n / 2) {
    if (!IsPowerOfTwo(n)) Fail(ErrorKind::kInvalidArgument, "FFT size must be a power of two");
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(n);
    for (std::size_t k = 0; k < n / 2; ++k)
      twiddles_[k] = {std::cos(ang * static_cast<double>(k)), std::sin(ang * static_cast<double>(k))};
  }

  std::size_t size() const { return n_; }

  void Forward(std::span<std::complex<double>> data) const {
    if (data.size() != n_) Fail(ErrorKind::kShapeMismatch, "FFT buffer size mismatch");
    for (std::size_t i = 1, j = 0; i < n_; ++i) {
      std::size_t bit = n_ >> 1;
      for (; j & bit; bit >>= 1) j ^= bit;
      j ^= bit;
      if (i < j) std::swap(data[i], data[j]);
    }
    for (std::size_t len = 2; len <= n_; len <<= 1) {
      const std::size_t half = len / 2;
      const std::size_t stride = n_ / len;
      for (std::size_t i = 0; i < n_; i += len) {
        for (std::size_t k = 0; k < half; ++k) {
          const std::complex<double> u = data[i + k];
          const std::complex<double> v = data[i + k + half] * twiddles_[k * stride];
          data[i + k] = u + v;
          data[i + k + half] = u - v;
        }
      }
    }
  }

 private:
  std::size_t n_;
  std::vector<std::complex<double>> twiddles_;
};

}  // namespace msv::dsp
