#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace cate_forge {

/// Stream tags used when deriving independent sub-streams from a study seed.
/// A stream is identified by (seed, tag, index...) and hashed with splitmix64,
/// so adding a new consumer never perturbs the numbers drawn by existing ones.
enum class StreamTag : std::uint64_t {
  kSiteParams = 1,
  kSiteData = 2,
  kTargetCovariates = 3,
  kReplication = 4,
  kPerturbation = 5,
  kMixtures = 6,
  kCrossFit = 7,
};

/// One round of the splitmix64 finalizer.
std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Hashes a seed together with a path of stream indices into a new seed.
std::uint64_t derive_seed(std::uint64_t seed, StreamTag tag,
                          std::initializer_list<std::uint64_t> path = {}) noexcept;

/// Inverse of the standard normal CDF (Wichura's AS241, ~1e-16 relative
/// accuracy). Requires 0 < p < 1.
double normal_quantile(double p);

/// Portable generator: std::mt19937_64 for the bit stream (its output sequence
/// is fixed by the standard), with uniform and normal conversions done here
/// rather than through std distributions, whose algorithms are
/// implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, StreamTag tag, std::initializer_list<std::uint64_t> path = {})
      : engine_(derive_seed(seed, tag, path)) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;
  /// Uniform on the open interval (0, 1).
  double uniform_open() noexcept;
  /// Standard normal by inversion.
  double normal() noexcept;
  bool bernoulli(double p) noexcept { return uniform() < p; }
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept;

 private:
  std::mt19937_64 engine_;
};

}  // namespace cate_forge
