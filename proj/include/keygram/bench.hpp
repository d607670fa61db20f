#pragma once

// Lookup latency versus table size. One memory per capacity V; `trials`
// random key sets are retrieved through the hashed path and, as a
// size-dependent reference, a dot-product nearest-row scan over one full
// V x d_h sub-table is timed on the same memory.

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <vector>

#include "keygram/errors.hpp"
#include "keygram/hashing.hpp"
#include "keygram/memory.hpp"

namespace keygram {

struct BenchSettings {
  std::vector<std::uint32_t> sizes;
  std::size_t trials = 1000;
  std::size_t warmup = 100;
  std::size_t scan_warmup = 3;
  std::uint32_t slots = 8;
  std::uint32_t heads = 4;
  std::uint32_t head_width = 32;
  std::uint64_t seed = 0;
};

struct BenchResult {
  std::uint32_t rows = 0;  // V
  std::size_t trials = 0;
  double median_ns = 0;
  double p95_ns = 0;
  std::uint64_t rows_touched = 0;  // per retrieval
  double scan_median_ns = 0;
  double scan_p95_ns = 0;
};

namespace detail {

inline double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  auto idx = static_cast<std::size_t>(q * static_cast<double>(v.size() - 1) + 0.5);
  return v[std::min(idx, v.size() - 1)];
}

inline std::size_t nearest_row(const SubTable& t, const std::vector<float>& query) {
  std::size_t best = 0;
  float best_dot = -INFINITY;
  for (std::size_t r = 0; r < t.capacity; ++r) {
    const float* row = t.rows.data() + r * t.width;
    float dot = 0;
    for (std::size_t c = 0; c < t.width; ++c) dot += row[c] * query[c];
    if (dot > best_dot) {
      best_dot = dot;
      best = r;
    }
  }
  return best;
}

struct BenchTable {
  LogicalMemory memory;
  std::vector<std::vector<PaddedKey>> warm, keys;
  std::vector<double> lat;
};

inline BenchTable bench_table(std::uint32_t capacity, const BenchSettings& s) {
  MemoryConfig cfg;
  cfg.layers = {0};
  cfg.slots = s.slots;
  cfg.heads = s.heads;
  cfg.head_width = s.head_width;
  cfg.capacity = capacity;
  cfg.seed = s.seed;
  BenchTable b{LogicalMemory(cfg), {}, {}, {}};
  SplitMix64 gen(SplitMix64::mix(s.seed ^ capacity));
  auto random_keys = [&] {
    std::vector<PaddedKey> keys(s.slots, PaddedKey{std::vector<std::uint64_t>(cfg.max_words, 0)});
    for (auto& k : keys) {
      std::size_t n = 1 + gen.next() % cfg.max_words;
      for (std::size_t j = 0; j < n; ++j) k.ids[j] = gen.next() | 1;
    }
    return keys;
  };
  b.warm.resize(s.warmup);
  b.keys.resize(s.trials);
  for (auto& k : b.warm) k = random_keys();
  for (auto& k : b.keys) k = random_keys();
  b.lat.resize(s.trials);
  return b;
}

}  // namespace detail

// All tables are built first and the hashed lookups are timed in interleaved
// rounds, alternating size order, so machine drift (frequency, neighbours)
// lands on every size alike instead of on whichever ran last.
inline std::vector<BenchResult> bench_lookup(const BenchSettings& s) {
  if (s.sizes.empty()) throw ConfigError("bench needs at least one table size");
  if (!std::is_sorted(s.sizes.begin(), s.sizes.end())) throw ConfigError("bench sizes must be ascending");
  if (s.trials < 1000) throw ConfigError("bench needs at least 1000 trials");
  std::vector<detail::BenchTable> tables;
  for (auto v : s.sizes) tables.push_back(detail::bench_table(v, s));

  std::vector<BenchResult> out(s.sizes.size());
  std::vector<float> buf(tables.front().memory.memory_width(0));
  volatile float sink = 0;
  constexpr std::size_t rounds = 20;
  for (std::size_t round = 0; round < rounds; ++round) {
    const std::size_t lo = s.trials * round / rounds, hi = s.trials * (round + 1) / rounds;
    for (std::size_t n = 0; n < tables.size(); ++n) {
      const std::size_t t = round % 2 ? tables.size() - 1 - n : n;
      auto& b = tables[t];
      auto& r = out[t];
      for (std::size_t i = lo * s.warmup / s.trials; i < hi * s.warmup / s.trials; ++i) {
        b.memory.retrieve_into(b.warm[i], 0, buf);
        sink = sink + buf[0];
      }
      for (std::size_t i = lo; i < hi; ++i) {
        LookupStats stats;
        auto t0 = std::chrono::steady_clock::now();
        b.memory.retrieve_into(b.keys[i], 0, buf, &stats);
        auto t1 = std::chrono::steady_clock::now();
        sink = sink + buf[i % buf.size()];
        b.lat[i] = std::chrono::duration<double, std::nano>(t1 - t0).count();
        if (i == 0) r.rows_touched = stats.rows_touched;
        if (stats.rows_touched != r.rows_touched) throw Error("touched-row count varied between lookups");
      }
    }
  }

  for (std::size_t t = 0; t < tables.size(); ++t) {
    auto& r = out[t];
    r.rows = s.sizes[t];
    r.trials = s.trials;
    r.median_ns = detail::quantile(tables[t].lat, 0.5);
    r.p95_ns = detail::quantile(tables[t].lat, 0.95);

    const auto& table = tables[t].memory.generations(0, 0, 0).front();
    SplitMix64 gen(SplitMix64::mix(~s.seed ^ s.sizes[t]));
    std::vector<float> query(s.head_width);
    auto random_query = [&] {
      for (auto& q : query) q = static_cast<float>(gen.next() >> 40) * 0x1.0p-24f - 0.5f;
    };
    for (std::size_t i = 0; i < s.scan_warmup; ++i) {
      random_query();
      sink = sink + static_cast<float>(detail::nearest_row(table, query));
    }
    std::vector<double> scan(s.trials);
    for (std::size_t i = 0; i < s.trials; ++i) {
      random_query();
      auto t0 = std::chrono::steady_clock::now();
      auto best = detail::nearest_row(table, query);
      auto t1 = std::chrono::steady_clock::now();
      sink = sink + static_cast<float>(best);
      scan[i] = std::chrono::duration<double, std::nano>(t1 - t0).count();
    }
    r.scan_median_ns = detail::quantile(scan, 0.5);
    r.scan_p95_ns = detail::quantile(scan, 0.95);
  }
  return out;
}

inline void write_bench_csv(std::ostream& os, const std::vector<BenchResult>& rs) {
  os << "rows,trials,median_ns,p95_ns,rows_touched,scan_median_ns,scan_p95_ns\n";
  for (const auto& r : rs)
    os << r.rows << "," << r.trials << "," << r.median_ns << "," << r.p95_ns << "," << r.rows_touched << ","
       << r.scan_median_ns << "," << r.scan_p95_ns << "\n";
}

}  // namespace keygram
