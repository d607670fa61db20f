#pragma once

// Multiplicative-XOR addressing of padded keys:
//
//   z = (a_1*r_1 ^ a_2*r_2 ^ ... ^ a_M*r_M) mod P
//
// Products wrap at 64 bits. Each (layer, slot, head, generation) owns its own
// odd multipliers and prime modulus; both are persisted with the memory so
// addresses never depend on how they were generated.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "keygram/errors.hpp"
#include "keygram/parser.hpp"

namespace keygram {

namespace detail {

inline std::uint64_t mulmod(std::uint64_t a, std::uint64_t b, std::uint64_t m) {
  return static_cast<std::uint64_t>(static_cast<unsigned __int128>(a) * b % m);
}

inline std::uint64_t powmod(std::uint64_t base, std::uint64_t exp, std::uint64_t m) {
  std::uint64_t result = 1 % m;
  base %= m;
  while (exp) {
    if (exp & 1) result = mulmod(result, base, m);
    base = mulmod(base, base, m);
    exp >>= 1;
  }
  return result;
}

}  // namespace detail

// Deterministic Miller-Rabin; the first twelve prime bases cover all 64-bit n.
inline bool is_prime(std::uint64_t n) {
  if (n < 2) return false;
  constexpr std::uint64_t bases[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37};
  for (auto p : bases) {
    if (n % p == 0) return n == p;
  }
  std::uint64_t d = n - 1;
  int s = 0;
  while ((d & 1) == 0) {
    d >>= 1;
    ++s;
  }
  for (auto a : bases) {
    std::uint64_t x = detail::powmod(a, d, n);
    if (x == 1 || x == n - 1) continue;
    bool composite = true;
    for (int r = 1; r < s; ++r) {
      x = detail::mulmod(x, x, n);
      if (x == n - 1) {
        composite = false;
        break;
      }
    }
    if (composite) return false;
  }
  return true;
}

inline std::uint64_t largest_prime_at_most(std::uint64_t v) {
  if (v < 2) throw AddressOutOfRange("no prime at most " + std::to_string(v));
  while (!is_prime(v)) --v;
  return v;
}

// SplitMix64 (Steele, Lea, Flood).
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t next() { return mix(state_ += 0x9e3779b97f4a7c15ULL); }

 private:
  std::uint64_t state_;
};

struct HashSpec {
  std::uint32_t layer = 0;
  std::uint32_t slot = 0;
  std::uint32_t head = 0;
  std::uint32_t generation = 0;
  std::vector<std::uint64_t> multipliers;  // all odd
  std::uint64_t modulus = 0;               // prime, <= sub-table capacity

  std::size_t max_words() const { return multipliers.size(); }
  bool operator==(const HashSpec&) const = default;
};

struct MemoryAddress {
  std::uint32_t layer = 0;
  std::uint32_t slot = 0;
  std::uint32_t head = 0;
  std::uint32_t generation = 0;
  std::uint64_t row = 0;

  bool operator==(const MemoryAddress&) const = default;
  auto operator<=>(const MemoryAddress&) const = default;
};

inline std::uint64_t stream_seed(std::uint64_t seed, std::uint32_t layer, std::uint32_t slot,
                                 std::uint32_t head, std::uint32_t generation) {
  std::uint64_t s = SplitMix64::mix(seed);
  for (std::uint64_t v : {layer, slot, head, generation})
    s = SplitMix64::mix(s ^ (v + 0x9e3779b97f4a7c15ULL));
  return s;
}

inline HashSpec make_hash_spec(std::uint32_t layer, std::uint32_t slot, std::uint32_t head,
                               std::size_t max_words, std::uint64_t capacity, std::uint64_t seed,
                               std::uint32_t generation = 0) {
  if (capacity < 3) throw AddressOutOfRange("sub-table capacity must be at least 3");
  HashSpec spec{layer, slot, head, generation, {}, largest_prime_at_most(capacity)};
  SplitMix64 gen(stream_seed(seed, layer, slot, head, generation));
  spec.multipliers.resize(max_words);
  for (auto& r : spec.multipliers) r = gen.next() | 1ULL;
  return spec;
}

inline std::uint64_t hash_row(const PaddedKey& key, const HashSpec& spec) {
  if (key.ids.size() != spec.multipliers.size())
    throw DimMismatch("key has " + std::to_string(key.ids.size()) + " ids, spec expects " +
                      std::to_string(spec.multipliers.size()));
  std::uint64_t acc = 0;
  for (std::size_t j = 0; j < key.ids.size(); ++j) acc ^= key.ids[j] * spec.multipliers[j];
  return acc % spec.modulus;
}

inline MemoryAddress hash_key(const PaddedKey& key, const HashSpec& spec) {
  return {spec.layer, spec.slot, spec.head, spec.generation, hash_row(key, spec)};
}

}  // namespace keygram
