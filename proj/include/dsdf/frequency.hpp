#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "dsdf/error.hpp"
#include "dsdf/tensor.hpp"

namespace dsdf {

/// M x N complex grid stored as separate real and imaginary planes.
struct ComplexTensor {
  Shape shape;
  std::vector<double> re;
  std::vector<double> im;

  ComplexTensor() = default;
  ComplexTensor(std::size_t rows, std::size_t cols)
      : shape{rows, cols}, re(rows * cols, 0.0), im(rows * cols, 0.0) {}

  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const { return shape.at(1); }
  std::complex<double> at(std::size_t u, std::size_t v) const {
    return {re[u * cols() + v], im[u * cols() + v]};
  }
};

inline constexpr std::size_t kBandCount = 8;

namespace detail {

inline bool is_pow2(std::size_t n) { return n && !(n & (n - 1)); }

// In-place 1-D DFT of `x`. Radix-2 Cooley-Tukey for power-of-two lengths,
// direct O(n^2) summation otherwise. `sign` is -1 forward, +1 inverse
// (unscaled).
inline void dft1(std::vector<std::complex<double>>& x, int sign) {
  const std::size_t n = x.size();
  if (n < 2) return;
  if (!is_pow2(n)) {
    std::vector<std::complex<double>> out(n);
    for (std::size_t k = 0; k < n; ++k) {
      std::complex<double> acc = 0;
      for (std::size_t t = 0; t < n; ++t) {
        const double angle = sign * 2 * std::numbers::pi * double((k * t) % n) / double(n);
        acc += x[t] * std::complex<double>(std::cos(angle), std::sin(angle));
      }
      out[k] = acc;
    }
    x = std::move(out);
    return;
  }
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    for (std::size_t k = 0; k < half; ++k) {
      // Twiddles computed directly per index to avoid recurrence drift.
      const double angle = sign * 2 * std::numbers::pi * double(k) / double(len);
      const std::complex<double> w(std::cos(angle), std::sin(angle));
      for (std::size_t i = 0; i < n; i += len) {
        const auto a = x[i + k];
        const auto b = x[i + k + half] * w;
        x[i + k] = a + b;
        x[i + k + half] = a - b;
      }
    }
  }
}

inline ComplexTensor transform2(ComplexTensor f, int sign) {
  const std::size_t M = f.rows(), N = f.cols();
  std::vector<std::complex<double>> line(N);
  for (std::size_t u = 0; u < M; ++u) {
    for (std::size_t v = 0; v < N; ++v) line[v] = {f.re[u * N + v], f.im[u * N + v]};
    dft1(line, sign);
    for (std::size_t v = 0; v < N; ++v) {
      f.re[u * N + v] = line[v].real();
      f.im[u * N + v] = line[v].imag();
    }
  }
  line.resize(M);
  for (std::size_t v = 0; v < N; ++v) {
    for (std::size_t u = 0; u < M; ++u) line[u] = {f.re[u * N + v], f.im[u * N + v]};
    dft1(line, sign);
    for (std::size_t u = 0; u < M; ++u) {
      f.re[u * N + v] = line[u].real();
      f.im[u * N + v] = line[u].imag();
    }
  }
  return f;
}

inline void require_grid(const Tensor<double>& t, const char* op) {
  if (t.rank() != 2 || t.extent(0) < 2 || t.extent(1) < 2) {
    throw DimensionError(concat(op, ": expected an M x N grid with M,N >= 2, got ", shape_str(t.shape())));
  }
}

}  // namespace detail

/// Unnormalized 2-D DFT, F(u,v) = sum_x sum_y I(x,y) e^{-j2pi(ux/M + vy/N)}.
inline ComplexTensor dft2(const Tensor<double>& gray) {
  detail::require_grid(gray, "dft2");
  ComplexTensor f(gray.extent(0), gray.extent(1));
  std::copy(gray.data().begin(), gray.data().end(), f.re.begin());
  return detail::transform2(std::move(f), -1);
}

/// Inverse of dft2, including the 1/(MN) factor.
inline ComplexTensor idft2(const ComplexTensor& spectrum) {
  ComplexTensor f = detail::transform2(spectrum, +1);
  const double inv = 1.0 / double(f.re.size());
  for (auto& v : f.re) v *= inv;
  for (auto& v : f.im) v *= inv;
  return f;
}

/// Moves the DC bin to (M/2, N/2): out(u,v) = in((u+M/2) mod M, (v+N/2) mod N).
/// Self-inverse for even extents.
inline ComplexTensor fft_shift(const ComplexTensor& f) {
  const std::size_t M = f.rows(), N = f.cols();
  if (M % 2 || N % 2) {
    throw DimensionError(detail::concat("fft_shift requires even extents, got ", shape_str(f.shape)));
  }
  ComplexTensor out(M, N);
  for (std::size_t u = 0; u < M; ++u) {
    for (std::size_t v = 0; v < N; ++v) {
      const std::size_t src = ((u + M / 2) % M) * N + (v + N / 2) % N;
      out.re[u * N + v] = f.re[src];
      out.im[u * N + v] = f.im[src];
    }
  }
  return out;
}

struct MagnitudePhase {
  Tensor<double> magnitude;
  Tensor<double> phase;  // (-pi, pi]; 0 where the bin is exactly zero
};

inline MagnitudePhase magnitude_phase(const ComplexTensor& f) {
  std::vector<double> mag(f.re.size()), ph(f.re.size());
  for (std::size_t i = 0; i < mag.size(); ++i) {
    mag[i] = std::hypot(f.re[i], f.im[i]);
    ph[i] = (f.re[i] == 0.0 && f.im[i] == 0.0) ? 0.0 : std::atan2(f.im[i], f.re[i]);
    if (ph[i] == -std::numbers::pi) ph[i] = std::numbers::pi;
  }
  return {Tensor<double>(f.shape, std::move(mag)), Tensor<double>(f.shape, std::move(ph))};
}

/// (v - min) / (max - min); all zeros when the input is constant.
inline std::vector<double> min_max_normalize(std::span<const double> values) {
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  std::vector<double> out(values.size(), 0.0);
  if (*hi > *lo) {
    const double span = *hi - *lo;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (values[i] - *lo) / span;
  }
  return out;
}

/// M x N x 2 stack of [min-max normalized magnitude, phase].
inline Tensor<double> normalize_stack(const Tensor<double>& magnitude, const Tensor<double>& phase) {
  if (magnitude.shape() != phase.shape() || magnitude.rank() != 2) {
    throw DimensionError(detail::concat("normalize_stack: shapes ", shape_str(magnitude.shape()), " and ",
                                        shape_str(phase.shape())));
  }
  const auto norm = min_max_normalize(magnitude.data());
  std::vector<double> out(2 * norm.size());
  for (std::size_t i = 0; i < norm.size(); ++i) {
    out[2 * i] = norm[i];
    out[2 * i + 1] = phase[i];
  }
  return Tensor<double>({magnitude.extent(0), magnitude.extent(1), 2}, std::move(out));
}

/// Radial band of each bin of a shifted M x N spectrum: band c covers radii
/// [c r_max / 8, (c+1) r_max / 8) measured from (M/2, N/2); band 7 also
/// keeps r = r_max. Uses exact integer comparisons on squared radii.
inline std::vector<std::size_t> band_index(std::size_t M, std::size_t N, std::size_t bands = kBandCount) {
  if (M % 2 || N % 2) {
    throw DimensionError(detail::concat("band masks need even extents, got ", M, "x", N));
  }
  const auto cu = std::int64_t(M / 2), cv = std::int64_t(N / 2);
  const std::int64_t rmax2 = cu * cu + cv * cv;
  const auto nb = std::int64_t(bands);
  std::vector<std::size_t> index(M * N);
  for (std::size_t u = 0; u < M; ++u) {
    for (std::size_t v = 0; v < N; ++v) {
      const std::int64_t du = std::int64_t(u) - cu, dv = std::int64_t(v) - cv;
      const std::int64_t r2 = du * du + dv * dv;
      std::int64_t c = nb - 1;
      // Largest c with c * r_max / nb <= r.
      while (c > 0 && c * c * rmax2 > nb * nb * r2) --c;
      index[u * N + v] = std::size_t(c);
    }
  }
  return index;
}

/// One-hot band masks, M x N x bands.
inline Tensor<double> band_masks(std::size_t M, std::size_t N, std::size_t bands = kBandCount) {
  const auto index = band_index(M, N, bands);
  std::vector<double> masks(M * N * bands, 0.0);
  for (std::size_t i = 0; i < index.size(); ++i) masks[i * bands + index[i]] = 1.0;
  return Tensor<double>({M, N, bands}, std::move(masks));
}

struct BandStat {
  double energy = 0;   // sum of |F|^2 over the band
  double entropy = 0;  // Shannon entropy (nats) of the in-band power distribution
  double psd = 0;      // mean over band bins of |F|^2 / T, with T = M N
  std::size_t bins = 0;
};

/// Per-band energy, spectral entropy and mean PSD of a (shifted) spectrum.
/// Empty or all-zero bands report zeros.
inline std::vector<BandStat> band_stats(const ComplexTensor& shifted, const Tensor<double>& masks) {
  const std::size_t M = shifted.rows(), N = shifted.cols();
  if (masks.rank() != 3 || masks.extent(0) != M || masks.extent(1) != N) {
    throw DimensionError(detail::concat("band_stats: masks ", shape_str(masks.shape()),
                                        " do not match spectrum ", shape_str(shifted.shape)));
  }
  const std::size_t bands = masks.extent(2);
  const double T = double(M * N);
  std::vector<BandStat> stats(bands);
  std::vector<double> power(M * N);
  for (std::size_t i = 0; i < power.size(); ++i) power[i] = shifted.re[i] * shifted.re[i] + shifted.im[i] * shifted.im[i];
  for (std::size_t i = 0; i < power.size(); ++i) {
    for (std::size_t c = 0; c < bands; ++c) {
      if (masks[i * bands + c] != 0.0) {
        stats[c].energy += power[i];
        ++stats[c].bins;
      }
    }
  }
  for (std::size_t i = 0; i < power.size(); ++i) {
    for (std::size_t c = 0; c < bands; ++c) {
      if (masks[i * bands + c] == 0.0 || stats[c].energy <= 0.0 || power[i] <= 0.0) continue;
      const double p = power[i] / stats[c].energy;
      stats[c].entropy -= p * std::log(p);
    }
  }
  for (auto& s : stats) {
    if (s.bins && s.energy > 0) s.psd = s.energy / (double(s.bins) * T);
    s.entropy = std::max(s.entropy, 0.0);
  }
  return stats;
}

/// Spatial band components before normalization, M x N x bands: channel c is
/// Re(idft2(unshift(mask_c * shifted))). Channels sum to the input image.
inline Tensor<double> band_components(const Tensor<double>& gray, std::size_t bands = kBandCount) {
  detail::require_grid(gray, "band_components");
  const std::size_t M = gray.extent(0), N = gray.extent(1);
  const ComplexTensor shifted = fft_shift(dft2(gray));
  const auto index = band_index(M, N, bands);
  std::vector<double> out(M * N * bands, 0.0);
  for (std::size_t c = 0; c < bands; ++c) {
    ComplexTensor masked(M, N);
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (index[i] == c) {
        masked.re[i] = shifted.re[i];
        masked.im[i] = shifted.im[i];
      }
    }
    const ComplexTensor spatial = idft2(fft_shift(masked));
    for (std::size_t i = 0; i < M * N; ++i) out[i * bands + c] = spatial.re[i];
  }
  return Tensor<double>({M, N, bands}, std::move(out));
}

/// Frequency feature map, M x N x bands, each channel min-max normalized to [0,1].
inline Tensor<double> band_feature_maps(const Tensor<double>& gray, std::size_t bands = kBandCount) {
  if (gray.rank() == 2 && gray.extent(0) != gray.extent(1)) {
    throw DimensionError("band_feature_maps expects a square image, got " + shape_str(gray.shape()));
  }
  Tensor<double> comps = band_components(gray, bands);
  const std::size_t pixels = comps.size() / bands;
  std::vector<double> out(comps.size());
  std::vector<double> channel(pixels);
  for (std::size_t c = 0; c < bands; ++c) {
    for (std::size_t i = 0; i < pixels; ++i) channel[i] = comps[i * bands + c];
    const auto norm = min_max_normalize(channel);
    for (std::size_t i = 0; i < pixels; ++i) out[i * bands + c] = norm[i];
  }
  return Tensor<double>(comps.shape(), std::move(out));
}

/// Everything the preprocessing layer derives from one grayscale image.
struct FrequencyFeatures {
  ComplexTensor shifted;
  MagnitudePhase polar;
  Tensor<double> stacked;  // M x N x 2
  Tensor<double> masks;    // M x N x 8
  std::vector<BandStat> stats;

  double total_energy() const {
    double e = 0;
    for (const auto& s : stats) e += s.energy;
    return e;
  }
  double mean_entropy() const {
    double h = 0;
    for (const auto& s : stats) h += s.entropy;
    return h / double(stats.size());
  }
  double mean_psd() const {
    double p = 0;
    for (const auto& s : stats) p += s.psd;
    return p / double(stats.size());
  }
};

inline FrequencyFeatures analyze_frequency(const Tensor<double>& gray) {
  FrequencyFeatures out;
  out.shifted = fft_shift(dft2(gray));
  out.polar = magnitude_phase(out.shifted);
  out.stacked = normalize_stack(out.polar.magnitude, out.polar.phase);
  out.masks = band_masks(gray.extent(0), gray.extent(1));
  out.stats = band_stats(out.shifted, out.masks);
  return out;
}

}  // namespace dsdf
