#pragma once

#include <cstdint>
#include <random>

namespace nifm {

/// Seedable generator with library-defined variate algorithms, so draws do not
/// depend on the standard library's (implementation-defined) distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Derives an independent stream for (base seed, index) pairs.
  static std::uint64_t derive(std::uint64_t base, std::uint64_t index);

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on the open interval (0, 1).
  double uniform();
  double normal();
  /// Marsaglia–Tsang; shape > 0, unit scale.
  double gamma(double shape);
  double beta(double a, double b);
  double chi_squared(double nu) { return 2.0 * gamma(0.5 * nu); }
  /// Standard (unit-scale) Student-t.
  double student_t(double nu);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace nifm
