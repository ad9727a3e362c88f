#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace vstpose::signal {

enum class WaveletFamily { Haar, Db2, Db4 };
enum class ThresholdMode { Soft, Hard };

struct ThresholdRule {
  enum class Kind { Universal, Fixed };
  Kind kind = Kind::Universal;
  double value = 0.0;  // used by Fixed only

  static ThresholdRule universal() { return {}; }
  static ThresholdRule fixed(double v) { return {Kind::Fixed, v}; }
};

struct WaveletConfig {
  WaveletFamily family = WaveletFamily::Db4;
  int levels = 3;
  ThresholdMode mode = ThresholdMode::Soft;
  ThresholdRule rule = ThresholdRule::universal();

  /// Throws std::invalid_argument when levels < 1 or a fixed threshold is negative.
  void validate() const;
};

/// Multi-level decomposition. details[0] is the coarsest band, details.back() the finest.
struct CoefficientPyramid {
  std::vector<double> approximation;
  std::vector<std::vector<double>> details;
  std::size_t original_length = 0;

  std::size_t coefficient_count() const;
};

WaveletFamily wavelet_family_from_string(const std::string& name);
std::string to_string(WaveletFamily family);

/// Analysis (decomposition) low-pass taps as published for the family.
std::span<const double> decomposition_lowpass(WaveletFamily family);
/// Quadrature-mirror high-pass derived from the low-pass taps.
std::vector<double> decomposition_highpass(WaveletFamily family);

/// Smallest input length accepted for `levels` decomposition steps.
std::size_t min_signal_length(int levels);
/// Length after symmetric extension to a multiple of 2^levels.
std::size_t padded_length(std::size_t n, int levels);

/// Periodized orthogonal DWT of the symmetrically padded signal.
CoefficientPyramid dwt_forward(std::span<const double> signal, const WaveletConfig& cfg);
/// Inverse of dwt_forward, trimmed back to the original length.
std::vector<double> dwt_inverse(const CoefficientPyramid& pyramid, const WaveletConfig& cfg);

/// Threshold that `cfg.rule` resolves to for this pyramid.
double resolve_threshold(const CoefficientPyramid& pyramid, const WaveletConfig& cfg);
double soft_threshold(double x, double t) noexcept;
double hard_threshold(double x, double t) noexcept;

/// Thresholds every detail band; the approximation band is left untouched.
std::vector<double> denoise(std::span<const double> signal, const WaveletConfig& cfg);

}  // namespace vstpose::signal
