#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace physvid {

/// Seeded generator whose entire state is the 64-bit Mersenne Twister, so it can be
/// serialized into checkpoints and resumed bitwise. Uniform and normal variates are
/// derived from raw engine output (not std distributions) to stay stable across
/// standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [lo, hi).
  int uniform_int(int lo, int hi);
  /// Standard normal via Box-Muller; consumes exactly two engine draws.
  double normal();

  std::string serialize() const;
  void deserialize(const std::string& state);

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

/// Mixes a seed with a stream tag so independent consumers never share sequences.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// FNV-1a hash of a byte string.
std::uint64_t stable_hash(std::string_view text);

}  // namespace physvid
