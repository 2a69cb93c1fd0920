#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>

namespace panelstate {

namespace detail {

inline constexpr std::uint64_t kGoldenGamma = 0x9e3779b97f4a7c15ULL;

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Ziggurat tables for the standard normal (128 layers, Doornik's layout).
// `accept` and `scale` are the layer ratio and width rescaled to the signed
// 53-bit integer used by the fast path.
struct ZigguratTables {
  static constexpr int kLayers = 128;
  static constexpr double kR = 3.442619855899;
  static constexpr double kV = 9.91256303526217e-3;
  std::array<double, kLayers + 1> x{};
  std::array<std::uint64_t, kLayers> accept{};
  std::array<double, kLayers> scale{};

  ZigguratTables() {
    double f = std::exp(-0.5 * kR * kR);
    x[0] = kV / f;
    x[1] = kR;
    x[kLayers] = 0.0;
    for (int i = 2; i < kLayers; ++i) {
      x[i] = std::sqrt(-2.0 * std::log(kV / x[i - 1] + f));
      f = std::exp(-0.5 * x[i] * x[i]);
    }
    for (int i = 0; i < kLayers; ++i) {
      accept[i] = static_cast<std::uint64_t>(x[i + 1] / x[i] * 0x1.0p52);
      scale[i] = x[i] * 0x1.0p-52;
    }
  }
};

inline const ZigguratTables kZiggurat{};

}  // namespace detail

/// Counter-based random stream.
///
/// Output k of the stream is mix64(key + (k + 1) * golden), i.e. SplitMix64
/// evaluated at an explicit counter. The key is derived from (seed, stream_id),
/// so the same triple (seed, stream_id, draw index) always gives the same
/// value regardless of which thread owns the stream.
class RngStream {
 public:
  using result_type = std::uint64_t;

  RngStream(std::uint64_t seed, std::uint64_t stream_id) noexcept
      : seed_(seed),
        stream_id_(stream_id),
        key_(detail::mix64(seed ^ 0x5eed5eed5eed5eedULL) ^
             detail::mix64(stream_id * detail::kGoldenGamma + 0x243f6a8885a308d3ULL)) {}

  /// Combines several identifiers (chain, sweep, subject, ...) into one
  /// stream id.
  static std::uint64_t stream_key(std::initializer_list<std::uint64_t> parts) noexcept {
    std::uint64_t h = 0x6a09e667f3bcc909ULL;
    for (std::uint64_t part : parts) {
      h = detail::mix64(h ^ detail::mix64(part + detail::kGoldenGamma));
    }
    return h;
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }
  std::uint64_t position() const noexcept { return counter_; }

  result_type operator()() noexcept {
    ++counter_;
    return detail::mix64(key_ + counter_ * detail::kGoldenGamma);
  }

  /// Uniform on the open interval (0, 1).
  double uniform() noexcept {
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard exponential.
  double exponential() noexcept { return -std::log(uniform()); }

  /// Standard normal via the ziggurat method.
  double normal() noexcept {
    const std::uint64_t bits = (*this)();
    double value;
    if (zig_fast(bits, value)) return value;
    return normal_slow(bits);
  }

  /// out[k] = scale * (standard normal) for k < n. Consumes the stream
  /// exactly as n calls to normal() would.
  void fill_normal(double* out, std::size_t n, double scale = 1.0) noexcept {
    std::uint64_t counter = counter_;
    const std::uint64_t key = key_;
    for (std::size_t k = 0; k < n; ++k) {
      ++counter;
      const std::uint64_t bits = detail::mix64(key + counter * detail::kGoldenGamma);
      double value;
      if (!zig_fast(bits, value)) {
        counter_ = counter;
        value = normal_slow(bits);
        counter = counter_;
      }
      out[k] = scale * value;
    }
    counter_ = counter;
  }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept {
    // Lemire's multiply-shift with rejection.
    __uint128_t m = static_cast<__uint128_t>((*this)()) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (low < threshold) {
        m = static_cast<__uint128_t>((*this)()) * n;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

 private:
  static bool zig_fast(std::uint64_t bits, double& value) noexcept {
    const auto& zig = detail::kZiggurat;
    const int layer = static_cast<int>(bits & 0x7F);
    // Signed integer in [-2^52, 2^52); u = j / 2^52.
    const std::int64_t j = static_cast<std::int64_t>(bits >> 11) - (std::int64_t{1} << 52);
    const std::uint64_t mag = static_cast<std::uint64_t>(j < 0 ? -j : j);
    value = static_cast<double>(j) * zig.scale[layer];
    return mag < zig.accept[layer];
  }

  // Wedge and tail handling for a word that missed the fast path.
  double normal_slow(std::uint64_t bits) noexcept {
    const auto& zig = detail::kZiggurat;
    for (;;) {
      const int layer = static_cast<int>(bits & 0x7F);
      const std::int64_t j = static_cast<std::int64_t>(bits >> 11) - (std::int64_t{1} << 52);
      const double u = static_cast<double>(j) * 0x1.0p-52;
      if (layer == 0) return normal_tail(detail::ZigguratTables::kR, u < 0);
      const double x = u * zig.x[layer];
      const double f0 = std::exp(-0.5 * (zig.x[layer] * zig.x[layer] - x * x));
      const double f1 = std::exp(-0.5 * (zig.x[layer + 1] * zig.x[layer + 1] - x * x));
      if (f1 + uniform() * (f0 - f1) < 1.0) return x;
      bits = (*this)();
      double value;
      if (zig_fast(bits, value)) return value;
    }
  }

  double normal_tail(double start, bool negative) noexcept {
    double x = 0.0;
    double y = 0.0;
    do {
      x = std::log(uniform()) / start;
      y = std::log(uniform());
    } while (-2.0 * y < x * x);
    return negative ? x - start : start - x;
  }

  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace panelstate
