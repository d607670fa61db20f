#pragma once

// Partitioning of a LogicalMemory across workers. (slot, head) groups are
// dealt round-robin over slot-major order; a group's generations always stay
// together. Retrieval gathers in canonical order, so the result is bitwise
// identical to the monolithic lookup.

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <tuple>
#include <vector>

#include "keygram/errors.hpp"
#include "keygram/memory.hpp"

namespace keygram {

struct ShardPlan {
  std::uint32_t shard_count = 1;
  std::uint32_t slots = 0;
  std::uint32_t heads = 0;

  static ShardPlan round_robin(std::uint32_t slots, std::uint32_t heads, std::uint32_t shard_count) {
    if (shard_count < 1) throw MissingShard("shard count must be at least 1");
    return {shard_count, slots, heads};
  }
  static ShardPlan round_robin(const LogicalMemory& mem, std::uint32_t shard_count) {
    return round_robin(mem.slot_count(), mem.head_count(), shard_count);
  }

  std::uint32_t shard_of(std::uint32_t slot, std::uint32_t head) const {
    return static_cast<std::uint32_t>((static_cast<std::uint64_t>(slot) * heads + head) % shard_count);
  }
};

struct Shard {
  using Key = std::tuple<std::uint32_t, std::uint32_t, std::uint32_t>;  // layer, slot, head
  std::map<Key, GenerationList> groups;

  std::size_t table_count() const {
    std::size_t n = 0;
    for (const auto& [_, g] : groups) n += g.size();
    return n;
  }
};

class ShardedMemory {
 public:
  ShardedMemory(const LogicalMemory& mem, ShardPlan plan)
      : plan_(plan), cfg_(mem.config()), shards_(plan.shard_count) {
    for (auto layer : cfg_.layers) {
      const auto& lt = mem.layer_tables(layer);
      for (std::uint32_t s = 0; s < lt.slots.size(); ++s)
        for (std::uint32_t h = 0; h < lt.slots[s].size(); ++h)
          shards_[plan_.shard_of(s, h)].groups.emplace(Shard::Key{layer, s, h}, lt.slots[s][h]);
    }
  }

  const ShardPlan& plan() const { return plan_; }
  const std::vector<Shard>& shards() const { return shards_; }

  // Simulates a lost worker.
  void drop_shard(std::uint32_t id) { shards_.at(id).groups.clear(); }

  std::vector<float> retrieve(std::span<const PaddedKey> keys, std::uint32_t layer) const {
    if (std::find(cfg_.layers.begin(), cfg_.layers.end(), layer) == cfg_.layers.end())
      throw UnknownLayer("layer " + std::to_string(layer));
    if (keys.size() != cfg_.slots)
      throw SlotMismatch("got " + std::to_string(keys.size()) + " keys for " +
                         std::to_string(cfg_.slots) + " slots");
    std::vector<float> out;
    for (std::uint32_t s = 0; s < cfg_.slots; ++s)
      for (std::uint32_t h = 0; h < cfg_.heads; ++h) {
        std::uint32_t id = plan_.shard_of(s, h);
        const auto& groups = shards_[id].groups;
        auto it = groups.find({layer, s, h});
        if (it == groups.end())
          throw MissingShard("shard " + std::to_string(id) + " lacks slot " + std::to_string(s) +
                             " head " + std::to_string(h));
        for (const auto& t : it->second) {
          auto row = t.row(hash_row(keys[s], t.spec));
          out.insert(out.end(), row.begin(), row.end());
        }
      }
    return out;
  }

 private:
  ShardPlan plan_;
  MemoryConfig cfg_;
  std::vector<Shard> shards_;
};

inline ShardedMemory shard(const LogicalMemory& mem, const ShardPlan& plan) { return {mem, plan}; }

inline std::vector<float> retrieve_sharded(std::span<const PaddedKey> keys, std::uint32_t layer,
                                           const ShardedMemory& store) {
  return store.retrieve(keys, layer);
}

}  // namespace keygram
