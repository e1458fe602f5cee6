#pragma once

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ftforge {

// Error taxonomy. The CLI maps these to exit codes: ConfigError -> 2,
// DataError -> 3, NumericError -> 4.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct DataError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

// Shape mismatch between tensors.
struct DimensionError : ConfigError {
  using ConfigError::ConfigError;
};

// Token index outside the vocabulary.
struct VocabError : DataError {
  using DataError::DataError;
};

// Loss function gave two different values on identical inputs.
struct DeterminismError : NumericError {
  using NumericError::NumericError;
};

// Checkpoint load failures, one class per detectable corruption mode.
struct CheckpointHeaderError : DataError {
  using DataError::DataError;
};
struct CheckpointVersionError : DataError {
  using DataError::DataError;
};
struct CheckpointPayloadError : DataError {
  using DataError::DataError;
};

// Reserved vocabulary slots, fixed across every corpus and checkpoint.
inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kReservedTokens = 4;

// Per-operation finite checks are cheap but not free; they default to on in
// debug builds and are switched on explicitly by test binaries. Epoch-boundary
// checks in the training loop run regardless.
bool strict_finite_checks();
void set_strict_finite_checks(bool on);

// splitmix64 step, used to derive independent seeds from a base seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x2545f4914f6cdd1dull;
  for (std::uint64_t p : parts) h = splitmix64(h ^ p);
  return h;
}

// FNV-1a, for folding strings into seed material.
inline std::uint64_t hash_str(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// mt19937_64 with hand-rolled distribution conversions. The engine output is
// pinned by the standard; std::uniform_real_distribution and friends are not,
// so we never use them.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // [0, 1) with 53 bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n), n > 0.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Fisher-Yates; std::shuffle's algorithm is implementation-defined, this
  // one is pinned.
  template <class Vec>
  void shuffle(Vec& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
};

// Round-trip-exact decimal rendering (17 significant digits).
inline std::string dtoa17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string fmt_double(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

}  // namespace ftforge
