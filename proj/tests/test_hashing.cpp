#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <unordered_set>
#include <vector>

#include "keygram/hashing.hpp"
#include "keygram/parser.hpp"

using namespace keygram;

namespace {

std::vector<bool> sieve(std::size_t n) {
  std::vector<bool> prime(n + 1, true);
  prime[0] = false;
  if (n >= 1) prime[1] = false;
  for (std::size_t i = 2; i * i <= n; ++i)
    if (prime[i])
      for (std::size_t j = i * i; j <= n; j += i) prime[j] = false;
  return prime;
}

HashSpec literal_spec(std::vector<std::uint64_t> r, std::uint64_t p) {
  HashSpec s;
  s.multipliers = std::move(r);
  s.modulus = p;
  return s;
}

PaddedKey random_key(std::mt19937_64& rng, std::size_t m = 4) {
  PaddedKey k{std::vector<std::uint64_t>(m, 0)};
  std::size_t n = 1 + rng() % m;
  for (std::size_t j = 0; j < n; ++j) k.ids[j] = rng() | 1;
  return k;
}

}  // namespace

TEST(Primes, MatchSieve) {
  const std::size_t n = 70000;
  auto ref = sieve(n);
  for (std::size_t v = 0; v <= n; ++v) ASSERT_EQ(is_prime(v), ref[v]) << v;
  std::size_t last = 0;
  for (std::size_t v = 3; v <= n; ++v) {
    if (ref[v]) last = v;
    ASSERT_EQ(largest_prime_at_most(v), last) << v;
  }
}

TEST(Primes, KnownLargeValues) {
  EXPECT_TRUE(is_prime(2305843009213693951ULL));   // 2^61 - 1
  EXPECT_FALSE(is_prime(3215031751ULL));            // strong pseudoprime to bases 2, 3, 5, 7
  EXPECT_TRUE(is_prime(18446744073709551557ULL));  // largest 64-bit prime
  EXPECT_EQ(largest_prime_at_most(1ULL << 22), 4194301u);
}

TEST(MakeSpec, ModulusIsLargestPrime) {
  EXPECT_EQ(make_hash_spec(0, 0, 0, 4, 8192, 0).modulus, 8191u);
  EXPECT_EQ(make_hash_spec(0, 0, 0, 4, 3, 0).modulus, 3u);
  EXPECT_EQ(make_hash_spec(0, 0, 0, 4, 2048, 0).modulus, 2039u);
  EXPECT_THROW(make_hash_spec(0, 0, 0, 4, 2, 0), AddressOutOfRange);
}

TEST(MakeSpec, MultipliersAreOddAndDistinctPerStream) {
  std::set<std::uint64_t> seen;
  for (std::uint32_t l = 0; l < 3; ++l)
    for (std::uint32_t s = 0; s < 8; ++s)
      for (std::uint32_t h = 0; h < 4; ++h) {
        auto spec = make_hash_spec(l, s, h, 4, 8192, 7);
        ASSERT_EQ(spec.multipliers.size(), 4u);
        for (auto r : spec.multipliers) {
          EXPECT_EQ(r & 1, 1u);
          seen.insert(r);
        }
        EXPECT_EQ(spec, make_hash_spec(l, s, h, 4, 8192, 7));
      }
  EXPECT_EQ(seen.size(), 3u * 8 * 4 * 4);
}

TEST(MakeSpec, MultipliersFollowSplitMix64) {
  // Reference SplitMix64 from the published constants.
  auto mix = [](std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t state = stream_seed(42, 1, 2, 3, 0);
  auto spec = make_hash_spec(1, 2, 3, 4, 8192, 42);
  for (auto r : spec.multipliers) {
    state += 0x9e3779b97f4a7c15ULL;
    EXPECT_EQ(r, mix(state) | 1ULL);
  }
}

TEST(HashRow, DerivedFixture) {
  // 2*3 = 6, 5*7 = 35, 6 ^ 35 = 37, 37 mod 8191 = 37.
  auto spec = literal_spec({3, 7, 11, 13}, 8191);
  EXPECT_EQ(hash_row(PaddedKey{{2, 5, 0, 0}}, spec), 37u);
}

TEST(HashRow, ZeroKeyMapsToZero) {
  auto spec = make_hash_spec(0, 0, 0, 4, 8192, 123);
  EXPECT_EQ(hash_row(PaddedKey{{0, 0, 0, 0}}, spec), 0u);
}

TEST(HashRow, PaddingContributesNothing) {
  auto spec = literal_spec({0xffffffffffffffc5ULL, 0x9e3779b97f4a7c15ULL, 5, 9}, 8191);
  // 64-bit wrapping product, then reduction.
  std::uint64_t a = 0x123456789abcdefULL;
  std::uint64_t expect = (a * 0xffffffffffffffc5ULL) % 8191;
  EXPECT_EQ(hash_row(PaddedKey{{a, 0, 0, 0}}, spec), expect);
}

TEST(HashRow, WrongKeyLengthThrows) {
  auto spec = make_hash_spec(0, 0, 0, 4, 8192, 0);
  EXPECT_THROW(hash_row(PaddedKey{{1, 2}}, spec), DimMismatch);
}

TEST(HashRow, RowsStayBelowModulus) {
  std::mt19937_64 rng(3);
  for (std::uint64_t v : {3u, 5u, 97u, 2048u, 8192u}) {
    auto spec = make_hash_spec(0, 1, 2, 4, v, 9);
    for (int i = 0; i < 2000; ++i) ASSERT_LT(hash_row(random_key(rng), spec), spec.modulus);
  }
}

TEST(HashKey, CarriesAddress) {
  auto spec = make_hash_spec(3, 2, 1, 4, 8192, 0, 5);
  auto key = encode(KeyGram{{"red", "mug"}}, 4);
  auto addr = hash_key(key, spec);
  EXPECT_EQ(addr.layer, 3u);
  EXPECT_EQ(addr.slot, 2u);
  EXPECT_EQ(addr.head, 1u);
  EXPECT_EQ(addr.generation, 5u);
  EXPECT_EQ(addr.row, hash_row(key, spec));
}

TEST(HashKey, Deterministic) {
  auto key = encode(KeyGram{{"put", "mug", "in", "microwave"}}, 4);
  auto a = hash_row(key, make_hash_spec(1, 0, 0, 4, 8192, 0));
  auto b = hash_row(key, make_hash_spec(1, 0, 0, 4, 8192, 0));
  EXPECT_EQ(a, b);
}

TEST(Occupancy, MatchesBallsInBins) {
  const std::size_t n = 10000;
  const double p = 8191;
  const double expected = p * (1.0 - std::pow(1.0 - 1.0 / p, static_cast<double>(n)));
  std::mt19937_64 rng(11);
  std::vector<PaddedKey> keys;
  std::set<std::vector<std::uint64_t>> distinct;
  while (keys.size() < n) {
    auto k = random_key(rng);
    if (distinct.insert(k.ids).second) keys.push_back(k);
  }
  std::vector<HashSpec> specs;
  for (std::uint32_t h = 0; h < 4; ++h) specs.push_back(make_hash_spec(1, 0, h, 4, 8192, 0));
  for (const auto& spec : specs) {
    std::unordered_set<std::uint64_t> rows;
    for (const auto& k : keys) rows.insert(hash_row(k, spec));
    EXPECT_NEAR(static_cast<double>(rows.size()), expected, 0.03 * expected);
  }
  std::set<std::vector<std::uint64_t>> full;
  for (const auto& k : keys) {
    std::vector<std::uint64_t> sig;
    for (const auto& spec : specs) sig.push_back(hash_row(k, spec));
    full.insert(sig);
  }
  EXPECT_EQ(full.size(), n) << "4-head full collision";
}

TEST(Sensitivity, OneWordChangeMovesTheRow) {
  std::mt19937_64 rng(5);
  auto spec = make_hash_spec(0, 0, 0, 4, 8192, 0);
  std::size_t moved = 0, trials = 10000;
  for (std::size_t t = 0; t < trials; ++t) {
    PaddedKey k{{rng() | 1, rng() | 1, rng() | 1, rng() | 1}};
    auto z = hash_row(k, spec);
    k.ids[rng() % 4] = rng() | 1;
    moved += hash_row(k, spec) != z;
  }
  EXPECT_GE(static_cast<double>(moved) / static_cast<double>(trials), 0.99);
}
