#pragma once

// Logical Key-Gram memory: per inserted layer, a grid of physical sub-tables
// indexed by (slot, head) with an append-only list of generations each.
// Retrieval for a layer concatenates rows slot-major, head-major,
// generation-minor.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "keygram/errors.hpp"
#include "keygram/hashing.hpp"
#include "keygram/parser.hpp"

namespace keygram {

struct MemoryConfig {
  std::vector<std::uint32_t> layers{1, 8, 13};
  std::uint32_t slots = 8;        // S
  std::uint32_t heads = 4;        // H
  std::uint32_t head_width = 32;  // d_h
  std::uint32_t capacity = 8192;  // V
  std::uint32_t max_words = 4;    // M
  std::uint64_t seed = 0;
  float init_scale = 0.02f;
};

struct SubTable {
  std::uint32_t slot = 0;
  std::uint32_t head = 0;
  std::uint32_t generation = 0;
  std::uint32_t capacity = 0;  // V
  std::uint32_t width = 0;     // d_h
  HashSpec spec;
  std::vector<float> rows;  // capacity * width, row-major

  std::span<const float> row(std::uint64_t z) const {
    return {rows.data() + z * width, width};
  }
  std::span<float> row(std::uint64_t z) { return {rows.data() + z * width, width}; }

  bool operator==(const SubTable&) const = default;
};

// Sub-tables of one (layer, slot, head), oldest generation first.
using GenerationList = std::vector<SubTable>;

struct LayerTables {
  std::vector<std::vector<GenerationList>> slots;  // [slot][head]
  bool operator==(const LayerTables&) const = default;
};

// Where one sub-table's row lands inside a retrieved memory vector.
struct Segment {
  std::uint32_t slot, head, generation;
  std::size_t offset;
};

struct RowUpdate {
  MemoryAddress address;
  std::vector<float> delta;
};

struct LookupStats {
  std::uint64_t rows_touched = 0;
};

namespace detail {

inline void fill_uniform(std::vector<float>& out, std::uint64_t seed, float scale) {
  SplitMix64 gen(seed);
  for (auto& v : out) {
    float u = static_cast<float>(gen.next() >> 40) * 0x1.0p-24f;  // [0, 1)
    v = (2.0f * u - 1.0f) * scale;
  }
}

inline constexpr std::uint64_t kRowSeedSalt = 0x5851f42d4c957f2dULL;

}  // namespace detail

class LogicalMemory {
 public:
  LogicalMemory() = default;

  // One generation-0 sub-table per (layer, slot, head) with rows uniform in
  // [-init_scale, init_scale].
  explicit LogicalMemory(MemoryConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.layers.empty() || cfg_.slots < 1 || cfg_.heads < 1 || cfg_.head_width < 1)
      throw DimMismatch("memory needs at least one layer, slot, head and column");
    for (auto layer : cfg_.layers) {
      auto& lt = layers_[layer];
      lt.slots.resize(cfg_.slots);
      for (std::uint32_t s = 0; s < cfg_.slots; ++s) {
        lt.slots[s].resize(cfg_.heads);
        for (std::uint32_t h = 0; h < cfg_.heads; ++h)
          lt.slots[s][h].push_back(make_table(layer, s, h, 0, cfg_.init_scale));
      }
    }
  }

  const MemoryConfig& config() const { return cfg_; }
  std::uint32_t slot_count() const { return cfg_.slots; }
  std::uint32_t head_count() const { return cfg_.heads; }
  std::uint32_t head_width() const { return cfg_.head_width; }
  const std::vector<std::uint32_t>& layers() const { return cfg_.layers; }
  const std::map<std::uint32_t, LayerTables>& tables() const { return layers_; }

  bool has_layer(std::uint32_t layer) const { return layers_.contains(layer); }

  const LayerTables& layer_tables(std::uint32_t layer) const {
    auto it = layers_.find(layer);
    if (it == layers_.end()) throw UnknownLayer("layer " + std::to_string(layer));
    return it->second;
  }

  const GenerationList& generations(std::uint32_t layer, std::uint32_t slot, std::uint32_t head) const {
    const auto& lt = layer_tables(layer);
    if (slot >= lt.slots.size()) throw UnknownSlot("slot " + std::to_string(slot));
    if (head >= lt.slots[slot].size()) throw UnknownSlot("head " + std::to_string(head));
    return lt.slots[slot][head];
  }

  const SubTable& table(const MemoryAddress& a) const {
    const auto& gens = generations(a.layer, a.slot, a.head);
    if (a.generation >= gens.size())
      throw AddressOutOfRange("generation " + std::to_string(a.generation));
    return gens[a.generation];
  }

  // Width contributed by one slot (sum over heads of generations * d_h).
  std::size_t slot_width(std::uint32_t layer, std::uint32_t slot) const {
    const auto& lt = layer_tables(layer);
    if (slot >= lt.slots.size()) throw UnknownSlot("slot " + std::to_string(slot));
    std::size_t w = 0;
    for (const auto& gens : lt.slots[slot]) w += gens.size() * cfg_.head_width;
    return w;
  }

  // Retrieved memory width d_m for a layer.
  std::size_t memory_width(std::uint32_t layer) const {
    std::size_t w = 0;
    for (std::uint32_t s = 0; s < cfg_.slots; ++s) w += slot_width(layer, s);
    return w;
  }

  std::vector<Segment> layout(std::uint32_t layer) const {
    std::vector<Segment> out;
    std::size_t off = 0;
    const auto& lt = layer_tables(layer);
    for (std::uint32_t s = 0; s < lt.slots.size(); ++s)
      for (std::uint32_t h = 0; h < lt.slots[s].size(); ++h)
        for (std::uint32_t g = 0; g < lt.slots[s][h].size(); ++g) {
          out.push_back({s, h, g, off});
          off += cfg_.head_width;
        }
    return out;
  }

  std::size_t table_count() const {
    std::size_t n = 0;
    for (const auto& [_, lt] : layers_)
      for (const auto& heads : lt.slots)
        for (const auto& gens : heads) n += gens.size();
    return n;
  }

  std::size_t parameter_count(std::uint32_t layer) const {
    std::size_t n = 0;
    for (const auto& heads : layer_tables(layer).slots)
      for (const auto& gens : heads)
        for (const auto& t : gens) n += t.rows.size();
    return n;
  }

  // Addresses of every row that retrieval of `key` in (layer, slot) reads.
  std::vector<MemoryAddress> addresses(const PaddedKey& key, std::uint32_t layer, std::uint32_t slot) const {
    std::vector<MemoryAddress> out;
    const auto& lt = layer_tables(layer);
    if (slot >= lt.slots.size()) throw UnknownSlot("slot " + std::to_string(slot));
    for (const auto& gens : lt.slots[slot])
      for (const auto& t : gens) out.push_back(hash_key(key, t.spec));
    return out;
  }

  // Appends head-major, generation-minor rows for one gram into `out`.
  void retrieve_gram_into(const PaddedKey& key, std::uint32_t layer, std::uint32_t slot,
                          std::span<float> out, LookupStats* stats = nullptr) const {
    const auto& lt = layer_tables(layer);
    if (slot >= lt.slots.size()) throw UnknownSlot("slot " + std::to_string(slot));
    std::size_t off = 0;
    for (const auto& gens : lt.slots[slot])
      for (const auto& t : gens) {
        if (off + t.width > out.size()) throw DimMismatch("output span too small");
        auto src = t.row(hash_row(key, t.spec));
        std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(off));
        off += t.width;
        if (stats) ++stats->rows_touched;
      }
  }

  std::vector<float> retrieve_gram(const PaddedKey& key, std::uint32_t layer, std::uint32_t slot,
                                   LookupStats* stats = nullptr) const {
    std::vector<float> out(slot_width(layer, slot));
    retrieve_gram_into(key, layer, slot, out, stats);
    return out;
  }

  // Memory vector for a layer: gram i feeds slot i.
  void retrieve_into(std::span<const PaddedKey> keys, std::uint32_t layer, std::span<float> out,
                     LookupStats* stats = nullptr) const {
    if (keys.size() != cfg_.slots)
      throw SlotMismatch("got " + std::to_string(keys.size()) + " keys for " +
                         std::to_string(cfg_.slots) + " slots");
    std::size_t off = 0;
    for (std::uint32_t s = 0; s < cfg_.slots; ++s) {
      std::size_t w = slot_width(layer, s);
      if (off + w > out.size()) throw DimMismatch("output span too small");
      retrieve_gram_into(keys[s], layer, s, out.subspan(off, w), stats);
      off += w;
    }
  }

  std::vector<float> retrieve(std::span<const PaddedKey> keys, std::uint32_t layer,
                              LookupStats* stats = nullptr) const {
    std::vector<float> out(memory_width(layer));
    retrieve_into(keys, layer, out, stats);
    return out;
  }

  // Adds `extra` zero-initialized slots at every layer; existing tables untouched.
  void expand_slots(std::uint32_t extra) {
    if (extra < 1) throw SlotMismatch("expand_slots needs at least one new slot");
    for (auto& [layer, lt] : layers_) {
      for (std::uint32_t s = cfg_.slots; s < cfg_.slots + extra; ++s) {
        lt.slots.emplace_back(cfg_.heads);
        for (std::uint32_t h = 0; h < cfg_.heads; ++h)
          lt.slots.back()[h].push_back(make_table(layer, s, h, 0, 0.0f));
      }
    }
    cfg_.slots += extra;
  }

  // Appends a zero-initialized generation with its own hash spec to
  // (slot, head) at every layer. Returns the new generation index.
  std::uint32_t expand_capacity(std::uint32_t slot, std::uint32_t head) {
    if (slot >= cfg_.slots) throw UnknownSlot("slot " + std::to_string(slot));
    if (head >= cfg_.heads) throw UnknownSlot("head " + std::to_string(head));
    std::uint32_t gen = 0;
    for (auto& [layer, lt] : layers_) {
      auto& gens = lt.slots[slot][head];
      gen = static_cast<std::uint32_t>(gens.size());
      gens.push_back(make_table(layer, slot, head, gen, 0.0f));
    }
    return gen;
  }

  // row <- row - lr * delta, in list order. Every update is validated before
  // any row is written.
  void apply_updates(std::span<const RowUpdate> updates, float lr) {
    for (const auto& u : updates) {
      const auto& t = table(u.address);
      if (u.address.row >= t.spec.modulus)
        throw AddressOutOfRange("row " + std::to_string(u.address.row) + " >= P=" +
                                std::to_string(t.spec.modulus));
      if (u.delta.size() != t.width)
        throw DimMismatch("update width " + std::to_string(u.delta.size()) + " != " +
                          std::to_string(t.width));
      for (float v : u.delta)
        if (!std::isfinite(v)) throw DivergenceError("non-finite row update");
    }
    for (const auto& u : updates) {
      auto row = mutable_table(u.address).row(u.address.row);
      for (std::size_t i = 0; i < row.size(); ++i) row[i] -= lr * u.delta[i];
    }
  }

  // Geometry and contents; init_scale is a construction-time detail and is
  // not persisted, so it does not participate.
  bool operator==(const LogicalMemory& o) const {
    return cfg_.layers == o.cfg_.layers && cfg_.slots == o.cfg_.slots && cfg_.heads == o.cfg_.heads &&
           cfg_.head_width == o.cfg_.head_width && cfg_.seed == o.cfg_.seed && layers_ == o.layers_;
  }

  // Used by the file loader, which supplies every table explicitly.
  static LogicalMemory from_parts(MemoryConfig cfg, std::map<std::uint32_t, LayerTables> layers) {
    LogicalMemory m;
    m.cfg_ = std::move(cfg);
    m.layers_ = std::move(layers);
    return m;
  }

  // Direct row access for tests and tooling that need to seed values.
  SubTable& mutable_table(const MemoryAddress& a) { return const_cast<SubTable&>(table(a)); }

 private:
  SubTable make_table(std::uint32_t layer, std::uint32_t slot, std::uint32_t head,
                      std::uint32_t gen, float scale) const {
    SubTable t;
    t.slot = slot;
    t.head = head;
    t.generation = gen;
    t.capacity = cfg_.capacity;
    t.width = cfg_.head_width;
    t.spec = make_hash_spec(layer, slot, head, cfg_.max_words, cfg_.capacity, cfg_.seed, gen);
    t.rows.assign(static_cast<std::size_t>(cfg_.capacity) * cfg_.head_width, 0.0f);
    if (scale != 0.0f)
      detail::fill_uniform(t.rows, stream_seed(cfg_.seed ^ detail::kRowSeedSalt, layer, slot, head, gen),
                           scale);
    return t;
  }

  MemoryConfig cfg_;
  std::map<std::uint32_t, LayerTables> layers_;
};

inline LogicalMemory init_memory(const MemoryConfig& cfg) { return LogicalMemory(cfg); }

}  // namespace keygram
