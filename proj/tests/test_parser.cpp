#include <gtest/gtest.h>

#include <cstdint>
#include <string>
#include <vector>

#include "keygram/errors.hpp"
#include "keygram/parser.hpp"

using namespace keygram;

namespace {

const Lexicon& lexicon() {
  static const Lexicon lex = Lexicon::load(KEYGRAM_ASSET_DIR "/lexicon");
  return lex;
}

std::vector<std::string> joined(const KeyGramSet& s) {
  std::vector<std::string> out;
  for (const auto& g : s.grams) out.push_back(g.joined());
  return out;
}

// Reference FNV-1a written against the published constants, independent of word_id.
std::uint64_t fnv1a_reference(const std::string& s) {
  const std::uint64_t prime = (1ULL << 40) + (1ULL << 8) + 0xb3;
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < s.size(); ++i) {
    h = h ^ static_cast<std::uint8_t>(s[i]);
    h = h * prime;
  }
  return h;
}

const char* kMugSentence = "put the yellow and white mug in the microwave and close it";
const char* kSpongeSentence = "pick up the green sponge from the sink and wipe the wooden table near the window";

}  // namespace

TEST(Normalize, LowercasesAndStripsPunctuation) {
  EXPECT_EQ(normalize("Pick up the Mug!"), (std::vector<std::string>{"pick", "up", "the", "mug"}));
  EXPECT_EQ(normalize("  a,b  c. "), (std::vector<std::string>{"ab", "c"}));
}

TEST(Normalize, EmptyInputThrows) {
  EXPECT_THROW(normalize(""), EmptyInstruction);
  EXPECT_THROW(normalize(" ?! "), EmptyInstruction);
}

TEST(Normalize, MugSentenceHasTwelveWords) { EXPECT_EQ(normalize(kMugSentence).size(), 12u); }

TEST(Lexicon, RejectsOverlappingClasses) {
  EXPECT_THROW(Lexicon({"put"}, {"put"}, {}, {}), SchemaError);
  EXPECT_THROW(Lexicon({"put"}, {}, {"put"}, {}), SchemaError);
  EXPECT_NO_THROW(Lexicon({"put"}, {"red"}, {"in"}, {"put", "in"}));
}

TEST(Lexicon, MissingDirectoryIsIoError) { EXPECT_THROW(Lexicon::load("/nonexistent/lexicon"), IoError); }

TEST(Extract, MugSentenceGolden) {
  auto set = extract_keygrams(kMugSentence, 4, 4, lexicon());
  EXPECT_EQ(joined(set), (std::vector<std::string>{"put mug in microwave", "put in microwave", "mug in microwave",
                                                   "yellow and white mug"}));
  bool verb_initial = false;
  for (const auto& g : set.grams) {
    EXPECT_GE(g.size(), 2u);
    EXPECT_LE(g.size(), 4u);
    verb_initial = verb_initial || lexicon().is_verb(g.words.front());
  }
  EXPECT_TRUE(verb_initial);
}

TEST(Extract, SpongeSentenceGolden) {
  auto set = extract_keygrams(kSpongeSentence, 8, 4, lexicon());
  EXPECT_EQ(joined(set),
            (std::vector<std::string>{"pick sponge from sink", "wipe table near window", "pick up sponge",
                                      "pick from sink", "wipe near window", "sponge from sink", "table near window",
                                      "green sponge"}));
}

TEST(Extract, TaskInstructionUsesFourTemplates) {
  auto set = extract_keygrams("move the red mug to the sink", 4, 4, lexicon());
  EXPECT_EQ(joined(set), (std::vector<std::string>{"move mug to sink", "move to sink", "mug to sink", "red mug"}));
}

TEST(Extract, ShortSetsRepeatTheLastGram) {
  auto set = extract_keygrams("pick up the mug", 3, 4, lexicon());
  EXPECT_EQ(joined(set), (std::vector<std::string>{"pick up mug", "pick up mug", "pick up mug"}));
}

TEST(Extract, LongSetsDropTheLowestRanked) {
  auto full = extract_keygrams(kSpongeSentence, 9, 4, lexicon());
  auto cut = extract_keygrams(kSpongeSentence, 3, 4, lexicon());
  EXPECT_EQ(full.grams.back().joined(), "wooden table");
  EXPECT_EQ(std::vector<KeyGram>(full.grams.begin(), full.grams.begin() + 3), cut.grams);
}

TEST(Extract, CompoundsCollapseToHeadNounWhenTooLong) {
  auto set = extract_keygrams("put the coffee mug in the microwave oven", 2, 4, lexicon());
  EXPECT_EQ(set.grams.front().joined(), "put mug in oven");
}

TEST(Extract, FallsBackToBigrams) {
  auto set = extract_keygrams("robot arm status", 2, 4, lexicon());
  EXPECT_EQ(joined(set), (std::vector<std::string>{"robot arm", "arm status"}));
}

TEST(Extract, SingleWordHasNoCandidates) { EXPECT_THROW(extract_keygrams("stop", 1, 4, lexicon()), NoCandidates); }

TEST(Extract, RejectsBadArguments) {
  EXPECT_THROW(extract_keygrams("", 4, 4, lexicon()), EmptyInstruction);
  EXPECT_THROW(extract_keygrams("put the mug", 0, 4, lexicon()), BudgetError);
  EXPECT_THROW(extract_keygrams("put the mug", 4, 1, lexicon()), LengthError);
}

TEST(Extract, BudgetAndLengthHoldForManyInstructions) {
  const std::vector<std::string> corpus = {
      kMugSentence, kSpongeSentence, "open the drawer", "stack the red block on the blue block",
      "hang the towel near the window", "place it", "push the small wooden box into the corner and close the lid",
      "take the plate from the rack", "pour water into the glass cup"};
  for (std::size_t k = 1; k <= 9; ++k)
    for (std::size_t m = 2; m <= 4; ++m)
      for (const auto& s : corpus) {
        KeyGramSet set;
        try {
          set = extract_keygrams(s, k, m, lexicon());
        } catch (const NoCandidates&) {
          continue;
        }
        ASSERT_EQ(set.budget(), k) << s;
        for (const auto& g : set.grams) {
          ASSERT_GE(g.size(), 1u);
          ASSERT_LE(g.size(), m) << g.joined();
        }
        EXPECT_EQ(joined(set), joined(extract_keygrams(s, k, m, lexicon())));
      }
}

TEST(Validate, ReferenceDecompositionAccepted) {
  auto set = validate_external(
      R"({"keywords":["put mug in microwave","close microwave door","yellow and white mug","mug inside microwave"]})",
      4, 4);
  EXPECT_EQ(set.budget(), 4u);
  EXPECT_EQ(set.grams[2].words, (std::vector<std::string>{"yellow", "and", "white", "mug"}));
}

TEST(Validate, PromptExampleAccepted) {
  auto set = validate_external(R"({"keywords":["pick and wipe","pick sponge from sink","pick up sponge",
      "green sponge","wipe wooden table","wipe table near window","table near window","wooden table"]})",
                               8, 4);
  for (const auto& g : set.grams) {
    EXPECT_GE(g.size(), 2u);
    EXPECT_LE(g.size(), 4u);
  }
}

TEST(Validate, ErrorKinds) {
  EXPECT_THROW(validate_external(R"({"keywords":[]})", 8, 4), BudgetError);
  std::string five = R"({"keywords":[)";
  for (int i = 0; i < 8; ++i) five += std::string(i ? "," : "") + R"("a b c d e")";
  five += "]}";
  EXPECT_THROW(validate_external(five, 8, 4), LengthError);
  EXPECT_THROW(validate_external("[]", 1, 4), SchemaError);
  EXPECT_THROW(validate_external(R"({"keywords":"x"})", 1, 4), SchemaError);
  EXPECT_THROW(validate_external(R"({"keywords":[3]})", 1, 4), SchemaError);
  EXPECT_THROW(validate_external("not json", 1, 4), SchemaError);
  EXPECT_THROW(validate_external(R"({"keywords":["!!"]})", 1, 4), LengthError);
}

TEST(Validate, RoundTripsSerializedSets) {
  for (const char* s : {kMugSentence, kSpongeSentence, "move the red mug to the sink"})
    for (std::size_t k : {1u, 4u, 8u}) {
      auto set = extract_keygrams(s, k, 4, lexicon());
      EXPECT_EQ(validate_external(serialize(set), k, 4), set);
    }
}

TEST(Encode, MugMatchesReferenceAndGolden) {
  EXPECT_EQ(word_id("mug"), fnv1a_reference("mug"));
  EXPECT_EQ(word_id("mug"), 0x07e65a19174a2a30ULL);
}

TEST(Encode, PadsWithZeros) {
  auto key = encode(KeyGram{{"red", "mug"}}, 4);
  ASSERT_EQ(key.ids.size(), 4u);
  EXPECT_EQ(key.ids[0], word_id("red"));
  EXPECT_EQ(key.ids[1], word_id("mug"));
  EXPECT_EQ(key.ids[2], 0u);
  EXPECT_EQ(key.ids[3], 0u);
}

TEST(Encode, StatelessAcrossGrams) {
  auto a = encode(KeyGram{{"red", "mug"}}, 4);
  auto b = encode(KeyGram{{"put", "mug", "in", "sink"}}, 4);
  EXPECT_EQ(a.ids[1], b.ids[1]);
}

TEST(Encode, PadInvariantOverCorpus) {
  for (const char* s : {kMugSentence, kSpongeSentence})
    for (const auto& g : extract_keygrams(s, 8, 4, lexicon()).grams) {
      auto key = encode(g, 4);
      for (std::size_t j = 0; j < 4; ++j) {
        if (j < g.size()) EXPECT_NE(key.ids[j], 0u);
        else EXPECT_EQ(key.ids[j], 0u);
      }
    }
}

TEST(Encode, RejectsOversizedGrams) { EXPECT_THROW(encode(KeyGram{{"a", "b", "c"}}, 2), LengthError); }
