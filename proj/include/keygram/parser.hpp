#pragma once

// Instruction -> key-gram decomposition.
//
// Two front ends produce a KeyGramSet: a deterministic rule-based extractor
// driven by a small lexicon, and a validator for JSON parses produced by an
// external language model ({"keywords": [...]}). Either way every gram is
// normalized and the set holds exactly `budget` grams.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "keygram/errors.hpp"

namespace keygram {

inline constexpr std::size_t kDefaultMaxWords = 4;

struct KeyGram {
  std::vector<std::string> words;

  std::string joined() const {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (i) out += ' ';
      out += words[i];
    }
    return out;
  }
  std::size_t size() const { return words.size(); }
  bool operator==(const KeyGram&) const = default;
};

struct KeyGramSet {
  std::vector<KeyGram> grams;

  std::size_t budget() const { return grams.size(); }
  bool operator==(const KeyGramSet&) const = default;
};

// Fixed-length word-id key; id 0 is padding.
struct PaddedKey {
  std::vector<std::uint64_t> ids;

  std::size_t max_words() const { return ids.size(); }
  bool operator==(const PaddedKey&) const = default;
};

// Lowercases ASCII, deletes ASCII punctuation, splits on whitespace.
inline std::vector<std::string> normalize(std::string_view instruction) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : instruction) {
    auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else if (c < 0x80 && std::ispunct(c)) {
      continue;
    } else {
      cur.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  if (words.empty()) throw EmptyInstruction("instruction has no words");
  return words;
}

class Lexicon {
 public:
  using WordSet = std::set<std::string, std::less<>>;

  Lexicon() = default;
  Lexicon(WordSet verbs, WordSet attributes, WordSet prepositions, WordSet stopwords)
      : verbs_(std::move(verbs)),
        attributes_(std::move(attributes)),
        prepositions_(std::move(prepositions)),
        stopwords_(std::move(stopwords)) {
    check_disjoint(verbs_, attributes_, "verbs", "attributes");
    check_disjoint(verbs_, prepositions_, "verbs", "prepositions");
    check_disjoint(attributes_, prepositions_, "attributes", "prepositions");
  }

  // Reads verbs.txt, attributes.txt, prepositions.txt and stopwords.txt.
  static Lexicon load(const std::filesystem::path& dir) {
    return Lexicon(read_words(dir / "verbs.txt"), read_words(dir / "attributes.txt"),
                   read_words(dir / "prepositions.txt"), read_words(dir / "stopwords.txt"));
  }

  bool is_verb(std::string_view w) const { return verbs_.contains(w); }
  bool is_attribute(std::string_view w) const { return attributes_.contains(w); }
  bool is_preposition(std::string_view w) const { return prepositions_.contains(w); }
  bool is_stopword(std::string_view w) const { return stopwords_.contains(w); }

  const WordSet& verbs() const { return verbs_; }
  const WordSet& attributes() const { return attributes_; }
  const WordSet& prepositions() const { return prepositions_; }
  const WordSet& stopwords() const { return stopwords_; }

 private:
  static WordSet read_words(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open lexicon file " + file.string());
    WordSet out;
    std::string line;
    while (std::getline(in, line)) {
      auto b = line.find_first_not_of(" \t\r");
      if (b == std::string::npos || line[b] == '#') continue;
      auto e = line.find_last_not_of(" \t\r");
      std::string w = line.substr(b, e - b + 1);
      std::transform(w.begin(), w.end(), w.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      out.insert(std::move(w));
    }
    return out;
  }

  static void check_disjoint(const WordSet& a, const WordSet& b, const char* na, const char* nb) {
    for (const auto& w : a)
      if (b.contains(w))
        throw SchemaError(std::string("lexicon word '") + w + "' is in both " + na + " and " + nb);
  }

  WordSet verbs_, attributes_, prepositions_, stopwords_;
};

// Candidate templates in priority order (lower value wins).
enum class GramTemplate : int {
  VerbObjectRelation = 0,  // verb + object [+ relation + object]
  VerbParticleObject = 1,
  VerbPrepObject = 2,
  ObjectPrepObject = 3,
  AttributeObject = 4,
  Bigram = 5,  // fallback only
};

namespace detail {

enum class WordClass { Verb, Attribute, Preposition, Stop, Noun };

struct NounPhrase {
  std::vector<std::string> attributes;  // may contain interior stopwords ("yellow and white")
  std::vector<std::string> nouns;       // compound, head noun last
  std::size_t end = 0;                  // one past the last noun
};

struct Candidate {
  GramTemplate kind;
  KeyGram gram;
  std::size_t content_words;
  std::string key;
};

class Extractor {
 public:
  Extractor(const std::vector<std::string>& words, std::size_t max_words, const Lexicon& lex)
      : words_(words), max_words_(max_words), lex_(lex) {
    for (const auto& w : words_) {
      if (lex.is_verb(w)) classes_.push_back(WordClass::Verb);
      else if (lex.is_attribute(w)) classes_.push_back(WordClass::Attribute);
      else if (lex.is_preposition(w)) classes_.push_back(WordClass::Preposition);
      else if (lex.is_stopword(w)) classes_.push_back(WordClass::Stop);
      else classes_.push_back(WordClass::Noun);
    }
  }

  std::vector<Candidate> run() {
    for (std::size_t i = 0; i < words_.size(); ++i)
      if (classes_[i] == WordClass::Verb) verb_frame(i);
    for (std::size_t i = 0; i < words_.size(); ++i) {
      if (classes_[i] != WordClass::Noun || (i > 0 && classes_[i - 1] == WordClass::Noun)) continue;
      auto np = noun_phrase(i);
      if (!np) continue;
      if (auto rel = relation_after(*np)) object_prep_object(*np, rel->first, rel->second);
    }
    std::size_t covered = 0;  // attributes inside an earlier phrase are not new phrase starts
    for (std::size_t i = 0; i < words_.size(); ++i) {
      if (i < covered || classes_[i] != WordClass::Attribute) continue;
      if (auto np = noun_phrase(i); np && !np->attributes.empty()) {
        attribute_object(*np);
        covered = np->end;
      }
    }
    return std::move(out_);
  }

 private:
  // Object noun phrase starting at `pos`: attributes and stopwords, then a
  // run of nouns. Any verb or preposition before the first noun aborts.
  std::optional<NounPhrase> noun_phrase(std::size_t pos) const {
    NounPhrase np;
    std::vector<std::string> pending_stops;
    std::size_t i = pos;
    for (; i < words_.size() && classes_[i] != WordClass::Noun; ++i) {
      if (classes_[i] == WordClass::Attribute) {
        if (!np.attributes.empty())
          np.attributes.insert(np.attributes.end(), pending_stops.begin(), pending_stops.end());
        pending_stops.clear();
        np.attributes.push_back(words_[i]);
      } else if (classes_[i] == WordClass::Stop) {
        pending_stops.push_back(words_[i]);
      } else {
        return std::nullopt;
      }
    }
    if (i == words_.size()) return std::nullopt;
    // A stopword between the last attribute and the noun breaks the attachment.
    if (!pending_stops.empty()) np.attributes.clear();
    for (; i < words_.size() && classes_[i] == WordClass::Noun; ++i) np.nouns.push_back(words_[i]);
    np.end = i;
    return np;
  }

  std::optional<std::pair<std::string, NounPhrase>> relation_after(const NounPhrase& np) const {
    if (np.end >= words_.size() || classes_[np.end] != WordClass::Preposition) return std::nullopt;
    auto target = noun_phrase(np.end + 1);
    if (!target) return std::nullopt;
    return std::make_pair(words_[np.end], std::move(*target));
  }

  void verb_frame(std::size_t v) {
    std::size_t p = v + 1;
    std::optional<std::string> lead_prep;
    if (p < words_.size() && classes_[p] == WordClass::Preposition) lead_prep = words_[p++];
    auto object = noun_phrase(p);
    if (!object) return;
    const std::string& verb = words_[v];
    if (auto rel = relation_after(*object)) {
      const auto& [prep, target] = *rel;
      emit_phrase(GramTemplate::VerbObjectRelation, {verb}, object->nouns, {prep}, target.nouns);
      if (lead_prep)
        emit_phrase(GramTemplate::VerbParticleObject, {verb, *lead_prep}, object->nouns, {}, {});
      emit_phrase(GramTemplate::VerbPrepObject, {verb, prep}, target.nouns, {}, {});
    } else if (lead_prep) {
      emit_phrase(GramTemplate::VerbPrepObject, {verb, *lead_prep}, object->nouns, {}, {});
    } else {
      emit_phrase(GramTemplate::VerbObjectRelation, {verb}, object->nouns, {}, {});
    }
  }

  void object_prep_object(const NounPhrase& np, const std::string& prep, const NounPhrase& target) {
    emit_phrase(GramTemplate::ObjectPrepObject, {}, np.nouns, {prep}, target.nouns);
  }

  void attribute_object(const NounPhrase& np) {
    std::vector<std::string> words = np.attributes;
    words.push_back(np.nouns.back());
    if (words.size() > max_words_) {
      words.erase(words.begin(), words.end() - static_cast<std::ptrdiff_t>(max_words_));
      while (!words.empty() && lex_.is_stopword(words.front())) words.erase(words.begin());
    }
    emit(GramTemplate::AttributeObject, std::move(words));
  }

  // lead + obj + mid + target; compounds collapse to their head noun when the
  // full phrase would exceed the word limit.
  void emit_phrase(GramTemplate kind, std::vector<std::string> lead, const std::vector<std::string>& obj,
                   std::vector<std::string> mid, const std::vector<std::string>& target) {
    auto build = [&](bool heads_only) {
      std::vector<std::string> out = lead;
      auto add_np = [&](const std::vector<std::string>& np) {
        if (np.empty()) return;
        if (heads_only) out.push_back(np.back());
        else out.insert(out.end(), np.begin(), np.end());
      };
      add_np(obj);
      out.insert(out.end(), mid.begin(), mid.end());
      add_np(target);
      return out;
    };
    auto words = build(false);
    if (words.size() > max_words_) words = build(true);
    if (words.size() > max_words_) return;
    emit(kind, std::move(words));
  }

  void emit(GramTemplate kind, std::vector<std::string> words) {
    std::size_t content = 0;
    for (const auto& w : words)
      if (!lex_.is_stopword(w)) ++content;
    if (content == 0 || words.empty()) return;
    KeyGram g{std::move(words)};
    std::string key = g.joined();
    out_.push_back({kind, std::move(g), content, std::move(key)});
  }

  const std::vector<std::string>& words_;
  std::size_t max_words_;
  const Lexicon& lex_;
  std::vector<WordClass> classes_;
  std::vector<Candidate> out_;
};

inline KeyGramSet fit_budget(std::vector<KeyGram> grams, std::size_t budget) {
  if (grams.size() > budget) grams.resize(budget);
  while (grams.size() < budget) grams.push_back(grams.back());
  return KeyGramSet{std::move(grams)};
}

}  // namespace detail

// Rule-based extraction. Candidates are ranked by template priority, then by
// the number of non-stopword words (more first), then lexicographically on the
// joined phrase. Short sets repeat the final gram; long sets drop the tail.
inline KeyGramSet extract_keygrams(const std::vector<std::string>& words, std::size_t budget,
                                   std::size_t max_words, const Lexicon& lexicon) {
  if (words.empty()) throw EmptyInstruction("no words to extract from");
  if (budget < 1) throw BudgetError("budget must be at least 1");
  if (max_words < 2) throw LengthError("max_words must be at least 2");

  auto candidates = detail::Extractor(words, max_words, lexicon).run();
  std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
    return std::tuple(static_cast<int>(a.kind), b.content_words, std::string_view(a.key)) <
           std::tuple(static_cast<int>(b.kind), a.content_words, std::string_view(b.key));
  });
  std::vector<KeyGram> grams;
  std::set<std::string, std::less<>> seen;
  for (auto& c : candidates)
    if (seen.insert(c.key).second) grams.push_back(std::move(c.gram));

  if (grams.empty()) {
    std::vector<std::string> content;
    for (const auto& w : words)
      if (!lexicon.is_stopword(w)) content.push_back(w);
    for (std::size_t i = 0; i + 1 < content.size(); ++i) {
      KeyGram g{{content[i], content[i + 1]}};
      if (seen.insert(g.joined()).second) grams.push_back(std::move(g));
    }
    if (grams.empty()) throw NoCandidates("no template matched and no bigram fallback exists");
  }
  return detail::fit_budget(std::move(grams), budget);
}

inline KeyGramSet extract_keygrams(std::string_view instruction, std::size_t budget,
                                   std::size_t max_words, const Lexicon& lexicon) {
  return extract_keygrams(normalize(instruction), budget, max_words, lexicon);
}

// Parses {"keywords": [...]} as emitted by an external parser.
inline KeyGramSet validate_external(std::string_view json_text, std::size_t budget,
                                    std::size_t max_words) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(std::string("invalid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("keywords") || !doc["keywords"].is_array())
    throw SchemaError("expected an object with a \"keywords\" array");
  const auto& arr = doc["keywords"];
  for (const auto& item : arr)
    if (!item.is_string()) throw SchemaError("every keyword must be a string");
  if (arr.size() != budget)
    throw BudgetError("expected " + std::to_string(budget) + " keywords, got " +
                      std::to_string(arr.size()));
  KeyGramSet set;
  for (const auto& item : arr) {
    const auto& text = item.get_ref<const std::string&>();
    std::vector<std::string> words;
    try {
      words = normalize(text);
    } catch (const EmptyInstruction&) {
      throw LengthError("keyword \"" + text + "\" has no words");
    }
    if (words.size() > max_words)
      throw LengthError("keyword \"" + text + "\" has " + std::to_string(words.size()) +
                        " words, limit " + std::to_string(max_words));
    set.grams.push_back(KeyGram{std::move(words)});
  }
  return set;
}

inline std::string serialize(const KeyGramSet& set) {
  nlohmann::json doc;
  doc["keywords"] = nlohmann::json::array();
  for (const auto& g : set.grams) doc["keywords"].push_back(g.joined());
  return doc.dump();
}

// 64-bit FNV-1a; 0 is reserved for padding so it is remapped to 1.
inline std::uint64_t word_id(std::string_view word) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : word) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h == 0 ? 1 : h;
}

inline PaddedKey encode(const KeyGram& gram, std::size_t max_words = kDefaultMaxWords) {
  if (gram.words.empty() || gram.words.size() > max_words)
    throw LengthError("gram \"" + gram.joined() + "\" does not fit " + std::to_string(max_words) +
                      " words");
  PaddedKey key{std::vector<std::uint64_t>(max_words, 0)};
  for (std::size_t j = 0; j < gram.words.size(); ++j) key.ids[j] = word_id(gram.words[j]);
  return key;
}

inline std::vector<PaddedKey> encode(const KeyGramSet& set, std::size_t max_words = kDefaultMaxWords) {
  std::vector<PaddedKey> keys;
  keys.reserve(set.grams.size());
  for (const auto& g : set.grams) keys.push_back(encode(g, max_words));
  return keys;
}

}  // namespace keygram
