#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "slingbag/shader.hpp"

namespace slingbag {

/// Pixel selection for region statistics; nonzero = selected.
struct Mask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> values;

  Mask() = default;
  Mask(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0) {}
  std::uint8_t& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  std::uint8_t at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : values) n += v ? 1 : 0;
    return n;
  }
};

namespace detail {

inline void check_same_shape(const Image2D& a, const Image2D& b, const char* who) {
  if (a.rows != b.rows || a.cols != b.cols)
    throw std::invalid_argument(std::string(who) + ": image shape mismatch");
}

inline void check_masks(const Image2D& img, const Mask& m1, const Mask& m2, const char* who) {
  if (m1.rows != img.rows || m1.cols != img.cols || m2.rows != img.rows || m2.cols != img.cols)
    throw std::invalid_argument(std::string(who) + ": mask shape mismatch");
  if (m1.count() == 0 || m2.count() == 0)
    throw std::invalid_argument(std::string(who) + ": masks must be nonempty");
  for (std::size_t i = 0; i < m1.values.size(); ++i)
    if (m1.values[i] && m2.values[i])
      throw std::invalid_argument(std::string(who) + ": masks must be disjoint");
}

inline double masked_mean(const Image2D& img, const Mask& m) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < img.values.size(); ++i) {
    if (m.values[i]) {
      sum += img.values[i];
      ++n;
    }
  }
  return sum / static_cast<double>(n);
}

// Population standard deviation over the masked pixels.
inline double masked_std(const Image2D& img, const Mask& m) {
  const double mean = masked_mean(img, m);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < img.values.size(); ++i) {
    if (m.values[i]) {
      const double d = img.values[i] - mean;
      sum += d * d;
      ++n;
    }
  }
  return std::sqrt(sum / static_cast<double>(n));
}

inline std::vector<double> gaussian_window(std::size_t size, double sigma) {
  std::vector<double> w(size);
  const double c = 0.5 * (static_cast<double>(size) - 1.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = (static_cast<double>(i) - c) / sigma;
    w[i] = std::exp(-0.5 * d * d);
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  return w;
}

}  // namespace detail

/// Mean local structural similarity with an 11x11 Gaussian window
/// (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic range 1. Images are first
/// normalized to [0,1] by their own maximum. The window shrinks to the
/// largest odd size that fits when an image is smaller than 11 pixels.
inline double ssim(const Image2D& a, const Image2D& b) {
  detail::check_same_shape(a, b, "ssim");
  if (a.rows == 0 || a.cols == 0) throw std::invalid_argument("ssim: empty image");

  auto normalized = [](const Image2D& img) {
    Image2D out = img;
    const double m = *std::max_element(img.values.begin(), img.values.end());
    if (m > 0.0)
      for (double& v : out.values) v /= m;
    return out;
  };
  const Image2D na = normalized(a);
  const Image2D nb = normalized(b);

  std::size_t win = std::min<std::size_t>({11, a.rows, a.cols});
  if (win % 2 == 0) --win;
  const std::vector<double> w1d = detail::gaussian_window(win, 1.5);

  constexpr double kC1 = 0.01 * 0.01;  // (K1 * L)^2, L = 1
  constexpr double kC2 = 0.03 * 0.03;  // (K2 * L)^2

  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r + win <= a.rows; ++r) {
    for (std::size_t c = 0; c + win <= a.cols; ++c) {
      double mu_a = 0.0, mu_b = 0.0, aa = 0.0, bb = 0.0, ab = 0.0;
      for (std::size_t i = 0; i < win; ++i) {
        for (std::size_t j = 0; j < win; ++j) {
          const double w = w1d[i] * w1d[j];
          const double va = na.at(r + i, c + j);
          const double vb = nb.at(r + i, c + j);
          mu_a += w * va;
          mu_b += w * vb;
          aa += w * va * va;
          bb += w * vb * vb;
          ab += w * va * vb;
        }
      }
      const double var_a = aa - mu_a * mu_a;
      const double var_b = bb - mu_b * mu_b;
      const double cov = ab - mu_a * mu_b;
      const double num = (2.0 * mu_a * mu_b + kC1) * (2.0 * cov + kC2);
      const double den = (mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2);
      total += num / den;
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

/// Region-statistic result; `infinite` flags a zero-spread reference region
/// (value is then +infinity).
struct RegionScore {
  double value = 0.0;
  bool infinite = false;
};

/// Signal-to-noise ratio in decibels:
/// 20 log10(mean(img over signal) / std(img over noise)).
inline RegionScore snr(const Image2D& img, const Mask& signal_mask, const Mask& noise_mask) {
  detail::check_masks(img, signal_mask, noise_mask, "snr");
  const double mean_signal = detail::masked_mean(img, signal_mask);
  const double std_noise = detail::masked_std(img, noise_mask);
  if (std_noise == 0.0)
    return {std::numeric_limits<double>::infinity(), true};
  return {20.0 * std::log10(mean_signal / std_noise), false};
}

/// Contrast-to-noise ratio:
/// (mean(signal) - mean(background)) / std(background).
inline RegionScore cnr(const Image2D& img, const Mask& signal_mask, const Mask& background_mask) {
  detail::check_masks(img, signal_mask, background_mask, "cnr");
  const double mean_signal = detail::masked_mean(img, signal_mask);
  const double mean_bg = detail::masked_mean(img, background_mask);
  const double std_bg = detail::masked_std(img, background_mask);
  if (std_bg == 0.0)
    return {std::numeric_limits<double>::infinity(), true};
  return {(mean_signal - mean_bg) / std_bg, false};
}

}  // namespace slingbag
