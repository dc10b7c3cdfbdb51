#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace isolab {

/// SplitMix64 finalizer. Used to derive independent per-task seeds from a
/// base seed and a task key, so parallel sweeps never share a stream.
std::uint64_t mix64(std::uint64_t x);

/// Seed for task `key` under `seed`. Stable across runs, platforms and
/// thread counts.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t key);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t key_a, std::uint64_t key_b);

/// Seeded random source. Single owner; copy it only to replay a stream.
///
/// The normal and uniform transforms are implemented here rather than with
/// <random> distributions, whose output is implementation-defined, so that a
/// seed produces the same matrices with any standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::uint64_t draws() const { return draws_; }

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Standard normal (Marsaglia polar method).
  double normal();
  /// Uniform integer in [0, n). n must be positive.
  std::size_t below(std::size_t n);

  /// Independent child stream; does not advance this generator.
  Rng split(std::uint64_t key) const;

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t draws_ = 0;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace isolab
