#pragma once

// Greedy layer-placement search and gate probing.
//
// Stage 1 trains one model per single-layer insertion. Each later stage adds
// one unused candidate layer to the best set so far; the best set itself stays
// in the running, so stage scores never decrease. The search stops early when
// no extension beats it. After every trained configuration the mean gate of
// each inserted module is probed and normalized by the largest mean.

#include <cstddef>
#include <cstdint>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "keygram/backbone.hpp"
#include "keygram/config.hpp"
#include "keygram/errors.hpp"
#include "keygram/trainer.hpp"

namespace keygram {

struct GateProbe {
  std::uint32_t layer = 0;
  double mean_gate = 0;   // mean of A over examples and tokens
  double normalized = 0;  // mean_gate / max over probed layers
};

inline std::vector<GateProbe> probe_gates(const KeyGramModel<float>& model,
                                          const std::vector<PreparedExample>& batch) {
  if (model.fusion().empty()) throw NoInsertedLayers("model has no Key-Gram layers to probe");
  if (batch.empty()) throw DimMismatch("probe batch is empty");
  std::map<std::uint32_t, double> sum;
  std::size_t count = 0;
  for (const auto& ex : batch) {
    auto c = model.forward(ex.ids, ex.keys);
    for (const auto& [layer, fc] : c.fusion)
      for (float a : fc.gates) sum[layer] += a;
    count += c.tokens;
  }
  std::vector<GateProbe> out;
  double peak = 0;
  for (const auto& [layer, s] : sum) {
    out.push_back({layer, s / static_cast<double>(count), 0});
    peak = std::max(peak, out.back().mean_gate);
  }
  for (auto& p : out) p.normalized = p.mean_gate / peak;
  return out;
}

inline std::string layer_set_name(const std::set<std::uint32_t>& layers) {
  if (layers.empty()) return "vanilla";
  std::string s = "(";
  bool first = true;
  for (auto l : layers) {
    if (!first) s += ",";
    s += std::to_string(l);
    first = false;
  }
  return s + ")";
}

struct AblationEntry {
  std::size_t stage = 0;  // 0 = vanilla backbone
  std::set<std::uint32_t> layers;
  double easy = 0;   // accuracy on seen pairings
  double hard = 0;   // accuracy on held-out pairings
  double score = 0;  // weighted, in percent
  bool retained = false;  // carried over from the previous stage, not retrained
  std::vector<GateProbe> gates;
};

struct AblationReport {
  std::vector<AblationEntry> entries;
  std::vector<std::set<std::uint32_t>> selected;  // best set after each stage
  std::vector<double> stage_best;

  std::size_t trained_configs() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += !e.retained;
    return n;
  }

  void write_scores_csv(std::ostream& os) const {
    os << "stage,layers,easy,hard,score,retained\n";
    for (const auto& e : entries)
      os << e.stage << ",\"" << layer_set_name(e.layers) << "\"," << e.easy << "," << e.hard << "," << e.score
         << "," << (e.retained ? 1 : 0) << "\n";
  }

  void write_gates_csv(std::ostream& os) const {
    os << "stage,layers,probed_layer,mean_gate,normalized_gate\n";
    for (const auto& e : entries) {
      if (e.retained) continue;
      for (const auto& g : e.gates)
        os << e.stage << ",\"" << layer_set_name(e.layers) << "\"," << g.layer << "," << g.mean_gate << ","
           << g.normalized << "\n";
    }
  }
};

inline double weighted_score(double easy, double hard, const AblationSettings& s) {
  return 100.0 * (s.easy_weight * easy + s.hard_weight * hard) / (s.easy_weight + s.hard_weight);
}

// Trains one configuration for cfg.ablation.steps and scores it.
inline AblationEntry evaluate_placement(const ExperimentConfig& cfg, const PreparedTask& task,
                                        const std::set<std::uint32_t>& layers, std::size_t stage) {
  auto model = build_model(cfg, task, layers);
  TrainSettings ts = cfg.train;
  ts.steps = cfg.ablation.steps;
  ts.eval_every = 0;
  auto metrics = train(model, task, ts, cfg.seed);
  AblationEntry e;
  e.stage = stage;
  e.layers = layers;
  e.easy = metrics.train_accuracy;
  e.hard = metrics.test_accuracy;
  e.score = weighted_score(e.easy, e.hard, cfg.ablation);
  if (!layers.empty()) e.gates = probe_gates(model, task.test);
  return e;
}

template <class Progress = void (*)(const AblationEntry&)>
AblationReport greedy_layer_search(const ExperimentConfig& cfg, const PreparedTask& task,
                                   Progress progress = [](const AblationEntry&) {}) {
  const auto& candidates = cfg.ablation.candidates;
  if (candidates.empty()) throw ConfigError("ablation needs at least one candidate layer");
  if (cfg.ablation.stages < 1) throw ConfigError("ablation needs at least one stage");
  for (auto l : candidates)
    if (l >= cfg.backbone.blocks) throw ConfigError("candidate layer outside the backbone");

  AblationReport report;
  report.entries.push_back(evaluate_placement(cfg, task, {}, 0));
  progress(report.entries.back());

  std::set<std::uint32_t> best;
  double best_score = 0;
  for (std::size_t stage = 1; stage <= cfg.ablation.stages; ++stage) {
    bool improved = false;
    std::set<std::uint32_t> stage_best = best;
    double stage_score = best_score;
    if (stage > 1) {
      AblationEntry keep;
      keep.stage = stage;
      keep.layers = best;
      keep.retained = true;
      for (const auto& e : report.entries)
        if (e.layers == best && !e.retained) {
          keep.easy = e.easy;
          keep.hard = e.hard;
          keep.gates = e.gates;
        }
      keep.score = best_score;
      report.entries.push_back(keep);
    }
    for (auto l : candidates) {
      if (best.contains(l)) continue;
      auto layers = best;
      layers.insert(l);
      auto e = evaluate_placement(cfg, task, layers, stage);
      progress(e);
      if (stage == 1 ? (!improved || e.score > stage_score) : e.score > stage_score) {
        stage_score = e.score;
        stage_best = layers;
        improved = true;
      }
      report.entries.push_back(std::move(e));
    }
    if (!improved) break;
    best = stage_best;
    best_score = stage_score;
    report.selected.push_back(best);
    report.stage_best.push_back(best_score);
  }
  return report;
}

}  // namespace keygram
