#include "vstpose/wavelet.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace vstpose::signal {
namespace {

constexpr std::array<double, 2> kHaar{0.7071067811865476, 0.7071067811865476};
constexpr std::array<double, 4> kDb2{-0.12940952255126037, 0.2241438680420134,
                                     0.8365163037378079, 0.48296291314453416};
constexpr std::array<double, 8> kDb4{-0.010597401785069032, 0.0328830116668852,
                                     0.030841381835560764,  -0.18703481171909309,
                                     -0.027983769416859854, 0.6308807679298589,
                                     0.7148465705529157,    0.2303778133088965};

struct Bank {
  std::vector<double> lo;
  std::vector<double> hi;
};

Bank analysis_bank(WaveletFamily family) {
  auto lo = decomposition_lowpass(family);
  return {std::vector<double>(lo.begin(), lo.end()), decomposition_highpass(family)};
}

// Periodized filtering with the usual half-filter phase:
// a[k] = sum_i lo[i] * x[(2k + L/2 - i) mod n], and likewise d[k] with hi.
std::size_t tap_index(std::size_t k, std::size_t i, std::size_t taps, std::size_t n) {
  return (2 * k + taps / 2 + taps * n - i) % n;
}

void analysis_step(std::span<const double> x, const Bank& bank, std::vector<double>& approx,
                   std::vector<double>& detail) {
  const std::size_t n = x.size();
  const std::size_t half = n / 2;
  const std::size_t taps = bank.lo.size();
  approx.assign(half, 0.0);
  detail.assign(half, 0.0);
  for (std::size_t k = 0; k < half; ++k) {
    double a = 0.0, d = 0.0;
    for (std::size_t i = 0; i < taps; ++i) {
      const double v = x[tap_index(k, i, taps, n)];
      a += bank.lo[i] * v;
      d += bank.hi[i] * v;
    }
    approx[k] = a;
    detail[k] = d;
  }
}

// Adjoint of analysis_step, which is its inverse for an orthogonal bank.
std::vector<double> synthesis_step(std::span<const double> approx, std::span<const double> detail,
                                   const Bank& bank) {
  const std::size_t half = approx.size();
  const std::size_t n = 2 * half;
  const std::size_t taps = bank.lo.size();
  std::vector<double> x(n, 0.0);
  for (std::size_t k = 0; k < half; ++k) {
    for (std::size_t i = 0; i < taps; ++i) {
      x[tap_index(k, i, taps, n)] += bank.lo[i] * approx[k] + bank.hi[i] * detail[k];
    }
  }
  return x;
}

// Half-sample symmetric reflection of index i into [0, n).
std::size_t reflect(std::size_t i, std::size_t n) {
  const std::size_t period = 2 * n;
  i %= period;
  return i < n ? i : period - 1 - i;
}

double median_abs(std::span<const double> v) {
  std::vector<double> a(v.size());
  std::transform(v.begin(), v.end(), a.begin(), [](double x) { return std::abs(x); });
  if (a.empty()) return 0.0;
  const std::size_t mid = a.size() / 2;
  std::nth_element(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(mid), a.end());
  if (a.size() % 2 == 1) return a[mid];
  const double upper = a[mid];
  const double lower = *std::max_element(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

}  // namespace

void WaveletConfig::validate() const {
  if (levels < 1) throw std::invalid_argument("wavelet levels must be >= 1, got " + std::to_string(levels));
  if (rule.kind == ThresholdRule::Kind::Fixed && !(rule.value >= 0.0)) {
    throw std::invalid_argument("fixed wavelet threshold must be >= 0");
  }
}

std::size_t CoefficientPyramid::coefficient_count() const {
  std::size_t n = approximation.size();
  for (const auto& d : details) n += d.size();
  return n;
}

WaveletFamily wavelet_family_from_string(const std::string& name) {
  if (name == "haar") return WaveletFamily::Haar;
  if (name == "db2") return WaveletFamily::Db2;
  if (name == "db4") return WaveletFamily::Db4;
  throw std::invalid_argument("unknown wavelet family '" + name + "' (expected haar, db2, db4)");
}

std::string to_string(WaveletFamily family) {
  switch (family) {
    case WaveletFamily::Haar: return "haar";
    case WaveletFamily::Db2: return "db2";
    case WaveletFamily::Db4: return "db4";
  }
  return "unknown";
}

std::span<const double> decomposition_lowpass(WaveletFamily family) {
  switch (family) {
    case WaveletFamily::Haar: return kHaar;
    case WaveletFamily::Db2: return kDb2;
    case WaveletFamily::Db4: return kDb4;
  }
  throw std::invalid_argument("unknown wavelet family");
}

std::vector<double> decomposition_highpass(WaveletFamily family) {
  auto lo = decomposition_lowpass(family);
  const std::size_t len = lo.size();
  std::vector<double> hi(len);
  for (std::size_t n = 0; n < len; ++n) hi[n] = (n % 2 == 0 ? -1.0 : 1.0) * lo[len - 1 - n];
  return hi;
}

std::size_t min_signal_length(int levels) { return std::size_t{1} << levels; }

std::size_t padded_length(std::size_t n, int levels) {
  const std::size_t block = min_signal_length(levels);
  return (n + block - 1) / block * block;
}

CoefficientPyramid dwt_forward(std::span<const double> signal, const WaveletConfig& cfg) {
  cfg.validate();
  const std::size_t minimum = min_signal_length(cfg.levels);
  if (signal.size() < minimum) {
    throw std::invalid_argument("signal of length " + std::to_string(signal.size()) +
                                " too short for " + std::to_string(cfg.levels) +
                                " wavelet levels; minimum length is " + std::to_string(minimum));
  }
  const std::size_t n = signal.size();
  std::vector<double> current(padded_length(n, cfg.levels));
  for (std::size_t i = 0; i < current.size(); ++i) current[i] = signal[reflect(i, n)];

  const Bank bank = analysis_bank(cfg.family);
  CoefficientPyramid out;
  out.original_length = n;
  out.details.resize(static_cast<std::size_t>(cfg.levels));
  std::vector<double> approx, detail;
  for (int level = 0; level < cfg.levels; ++level) {
    analysis_step(current, bank, approx, detail);
    // Finest band is produced first; store coarse -> fine.
    out.details[static_cast<std::size_t>(cfg.levels - 1 - level)] = detail;
    current = approx;
  }
  out.approximation = std::move(current);
  return out;
}

std::vector<double> dwt_inverse(const CoefficientPyramid& pyramid, const WaveletConfig& cfg) {
  cfg.validate();
  if (pyramid.details.size() != static_cast<std::size_t>(cfg.levels)) {
    throw std::invalid_argument("pyramid has " + std::to_string(pyramid.details.size()) +
                                " detail levels but config requests " + std::to_string(cfg.levels));
  }
  const Bank bank = analysis_bank(cfg.family);
  std::vector<double> current = pyramid.approximation;
  for (const auto& detail : pyramid.details) {
    if (detail.size() != current.size()) {
      throw std::invalid_argument("detail band of length " + std::to_string(detail.size()) +
                                  " does not match approximation length " +
                                  std::to_string(current.size()));
    }
    current = synthesis_step(current, detail, bank);
  }
  if (pyramid.original_length > current.size()) {
    throw std::invalid_argument("pyramid original length exceeds reconstructed length");
  }
  current.resize(pyramid.original_length);
  return current;
}

double soft_threshold(double x, double t) noexcept {
  const double mag = std::abs(x) - t;
  return mag > 0.0 ? std::copysign(mag, x) : 0.0;
}

double hard_threshold(double x, double t) noexcept { return std::abs(x) > t ? x : 0.0; }

double resolve_threshold(const CoefficientPyramid& pyramid, const WaveletConfig& cfg) {
  if (cfg.rule.kind == ThresholdRule::Kind::Fixed) return cfg.rule.value;
  if (pyramid.details.empty() || pyramid.original_length < 2) return 0.0;
  const double sigma = median_abs(pyramid.details.back()) / 0.6745;
  return sigma * std::sqrt(2.0 * std::log(static_cast<double>(pyramid.original_length)));
}

std::vector<double> denoise(std::span<const double> signal, const WaveletConfig& cfg) {
  for (std::size_t i = 0; i < signal.size(); ++i) {
    if (!std::isfinite(signal[i])) {
      throw std::invalid_argument("denoise: non-finite sample at index " + std::to_string(i));
    }
  }
  CoefficientPyramid pyramid = dwt_forward(signal, cfg);
  const double t = resolve_threshold(pyramid, cfg);
  for (auto& band : pyramid.details) {
    for (auto& c : band) {
      c = cfg.mode == ThresholdMode::Soft ? soft_threshold(c, t) : hard_threshold(c, t);
    }
  }
  return dwt_inverse(pyramid, cfg);
}

}  // namespace vstpose::signal
