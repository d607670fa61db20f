#pragma once

// Experiment configuration. JSON layout:
//
//   { "parser":   {...}, "memory": {...}, "fusion":   {...}, "backbone": {...},
//     "task":     {...}, "train":  {...}, "ablation": {...} }
//
// Every section and field is optional; unknown sections or fields are
// rejected with ConfigError.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "keygram/errors.hpp"
#include "keygram/fusion.hpp"

namespace keygram {

struct ParserSettings {
  std::size_t budget = 4;  // K; also the memory slot count
  std::size_t max_words = 4;
  std::string lexicon_dir;  // empty: the shipped lexicon
};

struct MemorySettings {
  std::uint32_t heads = 4;
  std::uint32_t head_width = 16;
  std::uint32_t capacity = 2048;
  float init_scale = 0.02f;
};

struct FusionSettings {
  std::size_t span = 0;  // 0: equal to the slot budget
  ConvMode mode = ConvMode::Token;
  std::size_t channel_stride = 0;  // slot-channel mode; 0: width / slots
};

struct BackboneSettings {
  std::size_t blocks = 6;
  std::size_t width = 64;
  std::size_t mlp_ratio = 4;
  std::vector<std::uint32_t> insertion{0};
};

struct TaskSettings {
  std::size_t attributes = 10;
  std::size_t objects = 10;
  std::size_t places = 10;
  std::size_t target_classes = 10;
  double holdout = 0.2;
};

struct TrainSettings {
  std::size_t steps = 1000;
  std::size_t batch_size = 32;
  double learning_rate = 3e-3;
  double memory_learning_rate = 0.5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t eval_every = 100;
  // loss weight per label space (attribute, object, target)
  std::vector<double> head_weights{0.1, 0.1, 1.0};
};

struct AblationSettings {
  std::vector<std::uint32_t> candidates{0, 1, 2, 3, 4, 5};
  std::size_t stages = 3;
  std::size_t steps = 400;  // training steps per evaluated configuration
  double easy_weight = 1.0;
  double hard_weight = 9.0;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  ParserSettings parser;
  MemorySettings memory;
  FusionSettings fusion;
  BackboneSettings backbone;
  TaskSettings task;
  TrainSettings train;
  AblationSettings ablation;

  std::size_t conv_span() const { return fusion.span ? fusion.span : parser.budget; }
  std::size_t channel_stride() const {
    if (fusion.channel_stride) return fusion.channel_stride;
    return std::max<std::size_t>(1, backbone.width / parser.budget);
  }
};

namespace detail {

class SectionReader {
 public:
  SectionReader(const nlohmann::json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("section '" + name_ + "' must be an object");
  }

  template <class V>
  SectionReader& field(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return *this;
    try {
      out = j_.at(key).get<V>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(name_ + "." + key + ": " + e.what());
    }
    return *this;
  }

  SectionReader& mode(const char* key, ConvMode& out) {
    std::string s = to_string(out);
    field(key, s);
    out = conv_mode_from_string(s);
    return *this;
  }

  void finish() const {
    for (const auto& [k, _] : j_.items())
      if (!seen_.contains(k)) throw ConfigError("unknown field '" + name_ + "." + k + "'");
  }

 private:
  const nlohmann::json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig cfg;
  static const std::set<std::string> sections{"seed",     "parser", "memory", "fusion",
                                              "backbone", "task",   "train",  "ablation"};
  for (const auto& [k, _] : doc.items())
    if (!sections.contains(k)) throw ConfigError("unknown section '" + k + "'");
  auto section = [&](const char* name) -> const nlohmann::json& {
    static const nlohmann::json empty = nlohmann::json::object();
    return doc.contains(name) ? doc.at(name) : empty;
  };
  if (doc.contains("seed")) cfg.seed = doc.at("seed").get<std::uint64_t>();

  detail::SectionReader(section("parser"), "parser")
      .field("budget", cfg.parser.budget)
      .field("max_words", cfg.parser.max_words)
      .field("lexicon_dir", cfg.parser.lexicon_dir)
      .finish();
  detail::SectionReader(section("memory"), "memory")
      .field("heads", cfg.memory.heads)
      .field("head_width", cfg.memory.head_width)
      .field("capacity", cfg.memory.capacity)
      .field("init_scale", cfg.memory.init_scale)
      .finish();
  detail::SectionReader(section("fusion"), "fusion")
      .field("span", cfg.fusion.span)
      .mode("mode", cfg.fusion.mode)
      .field("channel_stride", cfg.fusion.channel_stride)
      .finish();
  detail::SectionReader(section("backbone"), "backbone")
      .field("blocks", cfg.backbone.blocks)
      .field("width", cfg.backbone.width)
      .field("mlp_ratio", cfg.backbone.mlp_ratio)
      .field("insertion", cfg.backbone.insertion)
      .finish();
  detail::SectionReader(section("task"), "task")
      .field("attributes", cfg.task.attributes)
      .field("objects", cfg.task.objects)
      .field("places", cfg.task.places)
      .field("target_classes", cfg.task.target_classes)
      .field("holdout", cfg.task.holdout)
      .finish();
  detail::SectionReader(section("train"), "train")
      .field("steps", cfg.train.steps)
      .field("batch_size", cfg.train.batch_size)
      .field("learning_rate", cfg.train.learning_rate)
      .field("memory_learning_rate", cfg.train.memory_learning_rate)
      .field("beta1", cfg.train.beta1)
      .field("beta2", cfg.train.beta2)
      .field("epsilon", cfg.train.epsilon)
      .field("eval_every", cfg.train.eval_every)
      .field("head_weights", cfg.train.head_weights)
      .finish();
  detail::SectionReader(section("ablation"), "ablation")
      .field("candidates", cfg.ablation.candidates)
      .field("stages", cfg.ablation.stages)
      .field("steps", cfg.ablation.steps)
      .field("easy_weight", cfg.ablation.easy_weight)
      .field("hard_weight", cfg.ablation.hard_weight)
      .finish();

  if (cfg.parser.budget < 1) throw ConfigError("parser.budget must be >= 1");
  if (cfg.parser.max_words < 2) throw ConfigError("parser.max_words must be >= 2");
  if (cfg.train.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  for (double w : cfg.train.head_weights)
    if (!(w >= 0.0)) throw ConfigError("train.head_weights must be non-negative");
  for (auto l : cfg.backbone.insertion)
    if (l >= cfg.backbone.blocks) throw ConfigError("insertion layer outside the backbone");
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
  return parse_config(doc);
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  return {
      {"seed", c.seed},
      {"parser", {{"budget", c.parser.budget}, {"max_words", c.parser.max_words}, {"lexicon_dir", c.parser.lexicon_dir}}},
      {"memory",
       {{"heads", c.memory.heads},
        {"head_width", c.memory.head_width},
        {"capacity", c.memory.capacity},
        {"init_scale", c.memory.init_scale}}},
      {"fusion", {{"span", c.fusion.span}, {"mode", to_string(c.fusion.mode)}, {"channel_stride", c.fusion.channel_stride}}},
      {"backbone",
       {{"blocks", c.backbone.blocks},
        {"width", c.backbone.width},
        {"mlp_ratio", c.backbone.mlp_ratio},
        {"insertion", c.backbone.insertion}}},
      {"task",
       {{"attributes", c.task.attributes},
        {"objects", c.task.objects},
        {"places", c.task.places},
        {"target_classes", c.task.target_classes},
        {"holdout", c.task.holdout}}},
      {"train",
       {{"steps", c.train.steps},
        {"batch_size", c.train.batch_size},
        {"learning_rate", c.train.learning_rate},
        {"memory_learning_rate", c.train.memory_learning_rate},
        {"beta1", c.train.beta1},
        {"beta2", c.train.beta2},
        {"epsilon", c.train.epsilon},
        {"eval_every", c.train.eval_every},
        {"head_weights", c.train.head_weights}}},
      {"ablation",
       {{"candidates", c.ablation.candidates},
        {"stages", c.ablation.stages},
        {"steps", c.ablation.steps},
        {"easy_weight", c.ablation.easy_weight},
        {"hard_weight", c.ablation.hard_weight}}},
  };
}

// FNV-1a over the canonical JSON dump; identifies a configuration in reports.
inline std::string config_hash(const ExperimentConfig& c) {
  std::string dump = to_json(c).dump();
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

}  // namespace keygram
