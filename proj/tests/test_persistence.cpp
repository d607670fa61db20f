#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <vector>

#include "keygram/parser.hpp"
#include "keygram/persistence.hpp"

using namespace keygram;

namespace {

MemoryConfig config() {
  MemoryConfig cfg;
  cfg.layers = {1, 4};
  cfg.slots = 3;
  cfg.heads = 2;
  cfg.head_width = 5;
  cfg.capacity = 67;
  cfg.seed = 99;
  return cfg;
}

std::filesystem::path temp_path(const char* name) {
  return std::filesystem::temp_directory_path() / (std::string("keygram_test_") + name);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Persistence, HeaderLayout) {
  LogicalMemory mem(config());
  auto bytes = serialize_memory(mem);
  ASSERT_GE(bytes.size(), 40u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "KGM1");
  EXPECT_EQ(bytes[4], 1u);   // version, little-endian
  EXPECT_EQ(bytes[8], 99u);  // seed low byte
  EXPECT_EQ(bytes[16], 2u);  // layer count
  EXPECT_EQ(bytes[20], 1u);
  EXPECT_EQ(bytes[24], 4u);
  // header 40 bytes; per table 36 + 8*M + 4*V*d_h; trailer 4
  std::size_t record = 4 * 5 + 8 + 4 + 8 * 4 + 4 * 67 * 5;
  EXPECT_EQ(bytes.size(), 40 + 2 * 3 * 2 * record + 4);
}

TEST(Persistence, RoundTripIsBitwise) {
  LogicalMemory mem(config());
  mem.expand_capacity(2, 1);
  mem.expand_slots(1);
  mem.apply_updates(std::vector<RowUpdate>{{{4, 3, 0, 0, 11}, {1, 2, 3, 4, 5}}}, 0.25f);
  auto path = temp_path("roundtrip.kgm");
  save(mem, path);
  auto loaded = load(path);
  EXPECT_TRUE(loaded == mem);
  auto path2 = temp_path("roundtrip2.kgm");
  save(loaded, path2);
  EXPECT_EQ(read_file(path), read_file(path2));
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST(Persistence, LookupIndicesStableAcrossReload) {
  LogicalMemory mem(config());
  auto loaded = deserialize_memory(serialize_memory(mem));
  auto key = encode(KeyGram{{"put", "mug", "in", "microwave"}}, 4);
  for (std::uint32_t layer : {1u, 4u})
    for (std::uint32_t s = 0; s < 3; ++s) EXPECT_EQ(mem.addresses(key, layer, s), loaded.addresses(key, layer, s));
  std::vector<PaddedKey> keys(3, key);
  EXPECT_EQ(mem.retrieve(keys, 4), loaded.retrieve(keys, 4));
}

TEST(Persistence, TruncationIsFormatError) {
  auto bytes = serialize_memory(LogicalMemory(config()));
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{10}, std::size_t{39}, std::size_t{41},
                          bytes.size() / 2, bytes.size() - 5, bytes.size() - 1}) {
    std::vector<std::uint8_t> head(bytes.begin(), bytes.begin() + static_cast<long>(cut));
    EXPECT_THROW(deserialize_memory(head), FormatError) << cut;
  }
}

TEST(Persistence, BadMagicAndVersion) {
  auto bytes = serialize_memory(LogicalMemory(config()));
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(deserialize_memory(magic), FormatError);
  auto version = bytes;
  version[4] = 2;
  EXPECT_THROW(deserialize_memory(version), FormatError);
}

TEST(Persistence, CorruptRowIsChecksumError) {
  auto bytes = serialize_memory(LogicalMemory(config()));
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    auto bad = bytes;
    // Flip a bit somewhere in the first table's rows.
    std::size_t pos = 40 + 36 + 32 + rng() % (4 * 67 * 5);
    bad[pos] ^= static_cast<std::uint8_t>(1u << (rng() % 8));
    EXPECT_THROW(deserialize_memory(bad), ChecksumError);
  }
  auto trailer = bytes;
  trailer.back() ^= 1;
  EXPECT_THROW(deserialize_memory(trailer), ChecksumError);
}

TEST(Persistence, MissingFileIsIoError) { EXPECT_THROW(load("/nonexistent/dir/mem.kgm"), IoError); }
