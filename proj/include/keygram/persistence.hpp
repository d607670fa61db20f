#pragma once

// Little-endian memory file:
//
//   "KGM1" | version u32 | seed u64 | n_layers u32 | layers u32[n] |
//   S u32 | H u32 | d_h u32 |
//   { layer u32 | slot u32 | head u32 | generation u32 | V u32 | P u64 |
//     M u32 | multipliers u64[M] | rows f32[V*d_h] }*   (layer, slot, head, gen order)
//   crc32 u32 over every preceding byte

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <zlib.h>

#include "keygram/errors.hpp"
#include "keygram/memory.hpp"

namespace keygram {

inline constexpr char kMemoryMagic[4] = {'K', 'G', 'M', '1'};
inline constexpr std::uint32_t kMemoryFormatVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
  std::vector<std::uint8_t>& bytes() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size) : p_(data), end_(data + size) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p_[i]) << (8 * i);
    p_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p_[i]) << (8 * i);
    p_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  void raw(char* out, std::size_t n) {
    need(n);
    std::memcpy(out, p_, n);
    p_ += n;
  }
  std::size_t remaining() const { return static_cast<std::size_t>(end_ - p_); }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw FormatError("memory file truncated");
  }
  const std::uint8_t* p_;
  const std::uint8_t* end_;
};

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  while (n > 0) {
    auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = ::crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_memory(const LogicalMemory& mem) {
  const auto& cfg = mem.config();
  detail::ByteWriter w;
  w.raw(kMemoryMagic, 4);
  w.u32(kMemoryFormatVersion);
  w.u64(cfg.seed);
  w.u32(static_cast<std::uint32_t>(cfg.layers.size()));
  for (auto l : cfg.layers) w.u32(l);
  w.u32(cfg.slots);
  w.u32(cfg.heads);
  w.u32(cfg.head_width);
  for (auto layer : cfg.layers) {
    for (const auto& heads : mem.layer_tables(layer).slots)
      for (const auto& gens : heads)
        for (const auto& t : gens) {
          w.u32(layer);
          w.u32(t.slot);
          w.u32(t.head);
          w.u32(t.generation);
          w.u32(t.capacity);
          w.u64(t.spec.modulus);
          w.u32(static_cast<std::uint32_t>(t.spec.multipliers.size()));
          for (auto r : t.spec.multipliers) w.u64(r);
          for (float v : t.rows) w.f32(v);
        }
  }
  auto& bytes = w.bytes();
  w.u32(detail::crc32_of(bytes.data(), bytes.size()));
  return std::move(bytes);
}

inline LogicalMemory deserialize_memory(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMemoryMagic, 4) != 0)
    throw FormatError("bad magic");
  detail::ByteReader r(bytes.data() + 4, bytes.size() - 4);
  if (auto version = r.u32(); version != kMemoryFormatVersion)
    throw FormatError("unsupported format version " + std::to_string(version));

  MemoryConfig cfg;
  cfg.seed = r.u64();
  cfg.layers.resize(r.u32());
  if (cfg.layers.size() * 4 > r.remaining()) throw FormatError("memory file truncated");
  for (auto& l : cfg.layers) l = r.u32();
  cfg.slots = r.u32();
  cfg.heads = r.u32();
  cfg.head_width = r.u32();
  cfg.init_scale = 0.0f;
  if (cfg.layers.empty() || cfg.slots == 0 || cfg.heads == 0 || cfg.head_width == 0)
    throw FormatError("empty memory geometry");

  std::map<std::uint32_t, LayerTables> layers;
  for (auto l : cfg.layers) {
    if (layers.contains(l)) throw FormatError("duplicate layer " + std::to_string(l));
    auto& lt = layers[l];
    lt.slots.assign(cfg.slots, std::vector<GenerationList>(cfg.heads));
  }
  bool first = true;
  while (r.remaining() > 4) {
    SubTable t;
    std::uint32_t layer = r.u32();
    t.slot = r.u32();
    t.head = r.u32();
    t.generation = r.u32();
    t.capacity = r.u32();
    t.width = cfg.head_width;
    std::uint64_t modulus = r.u64();
    std::uint32_t max_words = r.u32();
    auto it = layers.find(layer);
    if (it == layers.end() || t.slot >= cfg.slots || t.head >= cfg.heads)
      throw FormatError("sub-table record outside the declared geometry");
    auto& gens = it->second.slots[t.slot][t.head];
    if (t.generation != gens.size()) throw FormatError("generations out of order");
    if (modulus < 2 || modulus > t.capacity) throw FormatError("modulus exceeds capacity");
    if (static_cast<std::uint64_t>(max_words) * 8 > r.remaining()) throw FormatError("memory file truncated");
    t.spec = HashSpec{layer, t.slot, t.head, t.generation, std::vector<std::uint64_t>(max_words), modulus};
    for (auto& m : t.spec.multipliers) m = r.u64();
    std::size_t n = static_cast<std::size_t>(t.capacity) * t.width;
    if (n * 4 > r.remaining()) throw FormatError("memory file truncated");
    t.rows.resize(n);
    for (auto& v : t.rows) v = r.f32();
    if (first) {
      cfg.capacity = t.capacity;
      cfg.max_words = max_words;
      first = false;
    }
    gens.push_back(std::move(t));
  }
  if (r.remaining() != 4) throw FormatError("memory file truncated");
  for (const auto& [l, lt] : layers)
    for (const auto& heads : lt.slots)
      for (const auto& gens : heads)
        if (gens.empty()) throw FormatError("missing sub-table in layer " + std::to_string(l));

  std::uint32_t stored = r.u32();
  if (stored != detail::crc32_of(bytes.data(), bytes.size() - 4))
    throw ChecksumError("CRC32 mismatch");
  return LogicalMemory::from_parts(std::move(cfg), std::move(layers));
}

inline void save(const LogicalMemory& mem, const std::filesystem::path& path) {
  auto bytes = serialize_memory(mem);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

inline LogicalMemory load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_memory(bytes);
}

}  // namespace keygram
