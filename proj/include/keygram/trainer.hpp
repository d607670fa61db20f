#pragma once

// Deterministic single-threaded trainer for KeyGramModel<float>.
// Dense parameters (backbone and fusion) use Adam; memory rows receive plain
// sparse SGD through LogicalMemory::apply_updates, so only rows addressed by
// the batch can change.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "keygram/backbone.hpp"
#include "keygram/config.hpp"
#include "keygram/errors.hpp"
#include "keygram/memory.hpp"
#include "keygram/parser.hpp"
#include "keygram/task.hpp"

namespace keygram {

struct PreparedExample {
  std::vector<int> ids;
  std::vector<PaddedKey> keys;
  std::array<std::size_t, 3> labels{};
};

struct PreparedTask {
  std::vector<PreparedExample> train, test;
  std::vector<std::string> vocabulary;
  std::vector<std::size_t> head_sizes;
};

inline PreparedTask prepare_task(const SyntheticTask& task, const Lexicon& lexicon, const ParserSettings& parser) {
  PreparedTask out;
  out.vocabulary = task.vocabulary();
  out.head_sizes = task.head_sizes();
  std::unordered_map<std::string, int> index;
  for (std::size_t i = 0; i < out.vocabulary.size(); ++i) index[out.vocabulary[i]] = static_cast<int>(i);
  auto convert = [&](const TaskExample& ex) {
    PreparedExample p;
    auto words = normalize(ex.instruction);
    for (const auto& w : words) p.ids.push_back(index.at(w));
    p.keys = encode(extract_keygrams(words, parser.budget, parser.max_words, lexicon), parser.max_words);
    p.labels = ex.labels;
    return p;
  };
  for (const auto& ex : task.train) out.train.push_back(convert(ex));
  for (const auto& ex : task.test) out.test.push_back(convert(ex));
  return out;
}

// Lexicon named by the config, else the one shipped with the sources.
inline Lexicon load_lexicon(const ParserSettings& parser) {
  if (!parser.lexicon_dir.empty()) return Lexicon::load(parser.lexicon_dir);
#ifdef KEYGRAM_ASSET_DIR
  return Lexicon::load(std::filesystem::path(KEYGRAM_ASSET_DIR) / "lexicon");
#else
  throw ConfigError("parser.lexicon_dir is required");
#endif
}

inline PreparedTask prepare_experiment(const ExperimentConfig& cfg) {
  const auto& t = cfg.task;
  auto task = generate_task(cfg.seed, TaskSizes{t.attributes, t.objects, t.places, t.target_classes}, t.holdout);
  return prepare_task(task, load_lexicon(cfg.parser), cfg.parser);
}

inline BackboneConfig backbone_config(const ExperimentConfig& cfg, const PreparedTask& task) {
  BackboneConfig b;
  b.vocab_size = task.vocabulary.size();
  b.max_tokens = 16;
  b.blocks = cfg.backbone.blocks;
  b.width = cfg.backbone.width;
  b.mlp_ratio = cfg.backbone.mlp_ratio;
  b.head_sizes = task.head_sizes;
  b.seed = cfg.seed;
  return b;
}

inline MemoryConfig memory_config(const ExperimentConfig& cfg, const std::set<std::uint32_t>& layers) {
  MemoryConfig m;
  m.layers.assign(layers.begin(), layers.end());
  m.slots = static_cast<std::uint32_t>(cfg.parser.budget);
  m.heads = cfg.memory.heads;
  m.head_width = cfg.memory.head_width;
  m.capacity = cfg.memory.capacity;
  m.max_words = static_cast<std::uint32_t>(cfg.parser.max_words);
  m.seed = cfg.seed;
  m.init_scale = cfg.memory.init_scale;
  return m;
}

// The backbone depends only on (seed, task); the insertion set adds memory
// and fusion modules on top without touching backbone initialization.
inline KeyGramModel<float> build_model(const ExperimentConfig& cfg, const PreparedTask& task,
                                       const std::set<std::uint32_t>& insertion) {
  auto backbone = Backbone<float>::init(backbone_config(cfg, task));
  if (insertion.empty()) return KeyGramModel<float>(std::move(backbone));
  LogicalMemory memory(memory_config(cfg, insertion));
  std::map<std::uint32_t, FusionLayer<float>> fusion;
  ConvGeometry conv{cfg.fusion.mode, cfg.conv_span(), cfg.channel_stride()};
  for (auto l : insertion)
    fusion.emplace(l, FusionLayer<float>(l, memory.memory_width(l), cfg.backbone.width, conv, cfg.seed));
  return KeyGramModel<float>(std::move(backbone), std::move(memory), std::move(fusion));
}

struct CurvePoint {
  std::size_t step = 0;
  double loss = 0;
  double train_accuracy = 0;
  double test_accuracy = 0;
};

struct TrainMetrics {
  std::vector<CurvePoint> curve;
  double final_loss = 0;
  double train_accuracy = 0;
  double test_accuracy = 0;
};

struct StepReport {
  double loss = 0;
  std::set<MemoryAddress> addressed;  // memory rows read by the batch
};

// Fraction of examples whose three heads are all correct.
inline double accuracy(const KeyGramModel<float>& model, const std::vector<PreparedExample>& data) {
  if (data.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& ex : data) {
    auto c = model.forward(ex.ids, ex.keys);
    bool ok = true;
    for (std::size_t h = 0; h < c.logits.size(); ++h)
      ok = ok && argmax<float>(c.logits[h]) == ex.labels[h];
    correct += ok;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

class Trainer {
 public:
  Trainer(KeyGramModel<float>& model, TrainSettings settings, std::uint64_t seed)
      : model_(model), s_(settings), sampler_(SplitMix64::mix(seed ^ 0x3c6ef372fe94f82bULL)) {
    visit_dense(model_, [&](std::vector<float>& p) {
      m_.emplace_back(p.size(), 0.0f);
      v_.emplace_back(p.size(), 0.0f);
    });
  }

  std::vector<std::size_t> sample_batch(std::size_t n) {
    std::vector<std::size_t> idx(s_.batch_size);
    for (auto& i : idx) i = static_cast<std::size_t>(sampler_.next() % n);
    return idx;
  }

  StepReport step(const std::vector<PreparedExample>& data, const std::vector<std::size_t>& batch) {
    StepReport report;
    auto grads = model_.zero_grads();
    std::vector<RowUpdate> updates;
    const float inv_b = 1.0f / static_cast<float>(batch.size());
    double loss = 0;
    for (auto i : batch) {
      const auto& ex = data[i];
      auto cache = model_.forward(ex.ids, ex.keys);
      std::vector<std::vector<float>> dlogits;
      for (std::size_t h = 0; h < cache.logits.size(); ++h) {
        std::vector<float> d(cache.logits[h].size());
        const auto w = static_cast<float>(h < s_.head_weights.size() ? s_.head_weights[h] : 1.0);
        loss += w * cross_entropy<float>(cache.logits[h], ex.labels[h], d);
        for (auto& v : d) v *= w * inv_b;
        dlogits.push_back(std::move(d));
      }
      model_.backward(cache, dlogits, grads);
      collect_row_updates(ex, grads, updates, report.addressed);
    }
    loss /= static_cast<double>(batch.size());
    if (!std::isfinite(loss)) throw DivergenceError("loss became non-finite at step " + std::to_string(t_));
    report.loss = loss;

    ++t_;
    std::size_t k = 0;
    const double c1 = 1.0 - std::pow(s_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(s_.beta2, static_cast<double>(t_));
    const auto lr = static_cast<float>(s_.learning_rate * std::sqrt(c2) / c1);
    const auto b1 = static_cast<float>(s_.beta1), b2 = static_cast<float>(s_.beta2);
    const auto eps = static_cast<float>(s_.epsilon);
    std::vector<std::vector<float>*> gvec;
    visit_grads(grads, [&](std::vector<float>& g) { gvec.push_back(&g); });
    visit_dense(model_, [&](std::vector<float>& p) {
      auto& g = *gvec[k];
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = b1 * m[i] + (1 - b1) * g[i];
        v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
        p[i] -= lr * m[i] / (std::sqrt(v[i]) + eps);
      }
      ++k;
    });
    if (!updates.empty()) model_.memory().apply_updates(updates, static_cast<float>(s_.memory_learning_rate));
    return report;
  }

  std::size_t steps_taken() const { return t_; }

 private:
  template <class F>
  static void visit_dense(KeyGramModel<float>& model, F&& f) {
    model.backbone().visit(f);
    for (auto& [_, fl] : model.fusion()) {
      f(fl.w_key());
      f(fl.w_value());
      f(fl.kernel());
    }
  }

  template <class F>
  static void visit_grads(ModelGrads<float>& g, F&& f) {
    g.backbone.visit(f);
    for (auto& [_, fg] : g.fusion) {
      f(fg.w_key);
      f(fg.w_value);
      f(fg.kernel);
    }
  }

  void collect_row_updates(const PreparedExample& ex, const ModelGrads<float>& grads,
                           std::vector<RowUpdate>& updates, std::set<MemoryAddress>& addressed) const {
    const auto& mem = model_.memory();
    for (const auto& [layer, dm] : grads.memory) {
      std::size_t off = 0;
      for (std::uint32_t s = 0; s < mem.slot_count(); ++s)
        for (const auto& addr : mem.addresses(ex.keys[s], layer, s)) {
          const auto w = mem.head_width();
          updates.push_back({addr, std::vector<float>(dm.begin() + static_cast<long>(off),
                                                      dm.begin() + static_cast<long>(off + w))});
          addressed.insert(addr);
          off += w;
        }
    }
  }

  KeyGramModel<float>& model_;
  TrainSettings s_;
  SplitMix64 sampler_;
  std::vector<std::vector<float>> m_, v_;
  std::size_t t_ = 0;
};

inline TrainMetrics train(KeyGramModel<float>& model, const PreparedTask& task, const TrainSettings& settings,
                          std::uint64_t seed) {
  Trainer trainer(model, settings, seed);
  TrainMetrics metrics;
  auto record = [&](std::size_t step, double loss) {
    metrics.curve.push_back({step, loss, accuracy(model, task.train), accuracy(model, task.test)});
  };
  double loss = 0;
  if (settings.eval_every) record(0, 0.0);
  for (std::size_t s = 1; s <= settings.steps; ++s) {
    loss = trainer.step(task.train, trainer.sample_batch(task.train.size())).loss;
    if (settings.eval_every && s % settings.eval_every == 0 && s != settings.steps) record(s, loss);
  }
  metrics.final_loss = loss;
  metrics.train_accuracy = accuracy(model, task.train);
  metrics.test_accuracy = accuracy(model, task.test);
  if (settings.eval_every) metrics.curve.push_back({settings.steps, loss, metrics.train_accuracy, metrics.test_accuracy});
  return metrics;
}

}  // namespace keygram
