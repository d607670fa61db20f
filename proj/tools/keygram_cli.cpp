// keygram: command-line front end over the header library.
//   stdout: JSON (or CSV with --csv); stderr: diagnostics.
//   exit 0 ok, 1 usage error, 2 runtime error.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "keygram/keygram.hpp"

using namespace keygram;
using nlohmann::json;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;

  ExperimentConfig load() const {
    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    if (seed) cfg.seed = *seed;
    return cfg;
  }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "experiment config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "overrides the config seed");
}

std::set<std::uint32_t> insertion_from(const ExperimentConfig& cfg, const std::vector<std::uint32_t>& layers) {
  const auto& src = layers.empty() ? cfg.backbone.insertion : layers;
  for (auto l : src)
    if (l >= cfg.backbone.blocks) throw ConfigError("layer " + std::to_string(l) + " outside the backbone");
  return {src.begin(), src.end()};
}

json gate_json(const std::vector<GateProbe>& gates) {
  json out = json::array();
  for (const auto& g : gates) out.push_back({{"layer", g.layer}, {"mean_gate", g.mean_gate}, {"normalized", g.normalized}});
  return out;
}

json metrics_json(const TrainMetrics& m) {
  json curve = json::array();
  for (const auto& p : m.curve)
    curve.push_back({{"step", p.step}, {"loss", p.loss}, {"train_accuracy", p.train_accuracy},
                     {"test_accuracy", p.test_accuracy}});
  return {{"final_loss", m.final_loss},
          {"train_accuracy", m.train_accuracy},
          {"test_accuracy", m.test_accuracy},
          {"curve", curve}};
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Key-Gram external conditional memory"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  // extract
  auto* extract = app.add_subcommand("extract", "instruction -> key-gram set (JSON)");
  std::string instruction, lexicon_dir;
  std::size_t budget = 4, max_words = kDefaultMaxWords;
  extract->add_option("--instruction", instruction)->required();
  extract->add_option("--budget", budget, "K");
  extract->add_option("--max-words", max_words, "M");
  extract->add_option("--lexicon", lexicon_dir, "lexicon directory");

  // hash
  auto* hash = app.add_subcommand("hash", "phrase -> one row per head");
  std::string phrase, memory_path;
  std::uint32_t layer = 0, slot = 0;
  Common hash_common;
  hash->add_option("--phrase", phrase)->required();
  hash->add_option("--layer", layer)->required();
  hash->add_option("--slot", slot)->required();
  hash->add_option("--memory", memory_path, "take hash specs from a memory file")->check(CLI::ExistingFile);
  add_common(hash, hash_common);

  // init-memory
  auto* init = app.add_subcommand("init-memory", "create a memory file from a config");
  Common init_common;
  std::string out_path;
  add_common(init, init_common);
  init->add_option("--out", out_path)->required();

  // lookup
  auto* lookup = app.add_subcommand("lookup", "retrieve the memory vector for a key-gram set");
  std::string grams_path;
  bool csv = false;
  lookup->add_option("--memory", memory_path)->required()->check(CLI::ExistingFile);
  lookup->add_option("--layer", layer)->required();
  lookup->add_option("--grams", grams_path, R"(JSON {"keywords": [...]})")->required()->check(CLI::ExistingFile);
  lookup->add_flag("--csv", csv);

  // expand
  auto* expand = app.add_subcommand("expand", "grow a memory file in place (or into --out)");
  std::uint32_t add_slots = 0;
  std::vector<std::uint32_t> add_generation;
  expand->add_option("--memory", memory_path)->required()->check(CLI::ExistingFile);
  auto* slots_opt = expand->add_option("--add-slots", add_slots);
  auto* gen_opt = expand->add_option("--add-generation", add_generation, "slot,head")->delimiter(',')->expected(2);
  slots_opt->excludes(gen_opt);
  expand->add_option("--out", out_path);

  // train
  auto* trainc = app.add_subcommand("train", "train on the synthetic recombination task");
  Common train_common;
  std::vector<std::uint32_t> layers;
  std::optional<std::size_t> steps;
  bool with_baseline = false;
  std::string save_memory;
  add_common(trainc, train_common);
  trainc->add_option("--layers", layers, "insertion layers (default: config)")->delimiter(',');
  trainc->add_option("--steps", steps);
  trainc->add_flag("--baseline", with_baseline, "also train the no-memory baseline and report the margin");
  trainc->add_option("--save-memory", save_memory);
  trainc->add_flag("--csv", csv, "accuracy curve as CSV");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "greedy layer-placement search");
  Common ablate_common;
  std::string gates_csv;
  add_common(ablate, ablate_common);
  ablate->add_flag("--csv", csv, "score table as CSV");
  ablate->add_option("--gates-csv", gates_csv, "write the gate profile here");

  // probe
  auto* probe = app.add_subcommand("probe", "train, then report mean gate per inserted layer");
  Common probe_common;
  add_common(probe, probe_common);
  probe->add_option("--layers", layers)->delimiter(',');
  probe->add_option("--steps", steps);
  probe->add_flag("--csv", csv);

  // bench-lookup
  auto* bench = app.add_subcommand("bench-lookup", "hashed lookup vs linear scan latency");
  BenchSettings bs;
  std::uint32_t min_exp = 13, max_exp = 22;
  bench->add_option("--sizes", bs.sizes, "table rows V, ascending")->delimiter(',');
  bench->add_option("--min-exp", min_exp, "V from 2^min-exp ...");
  bench->add_option("--max-exp", max_exp, "... to 2^max-exp");
  bench->add_option("--trials", bs.trials);
  bench->add_option("--slots", bs.slots);
  bench->add_option("--heads", bs.heads);
  bench->add_option("--head-width", bs.head_width);
  bench->add_option("--seed", bs.seed);
  bench->add_flag("--csv", csv);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*extract) {
      ParserSettings ps;
      ps.lexicon_dir = lexicon_dir;
      std::cout << serialize(extract_keygrams(instruction, budget, max_words, load_lexicon(ps))) << "\n";
    } else if (*hash) {
      auto words = normalize(phrase);
      std::vector<HashSpec> specs;
      if (!memory_path.empty()) {
        auto mem = load(memory_path);
        for (std::uint32_t h = 0; h < mem.head_count(); ++h)
          for (const auto& t : mem.generations(layer, slot, h)) specs.push_back(t.spec);
      } else {
        auto cfg = hash_common.load();
        for (std::uint32_t h = 0; h < cfg.memory.heads; ++h)
          specs.push_back(make_hash_spec(layer, slot, h, cfg.parser.max_words, cfg.memory.capacity, cfg.seed));
      }
      const auto key = encode(KeyGram{words}, specs.front().multipliers.size());
      for (const auto& spec : specs) {
        json line = {{"head", spec.head}, {"row", hash_row(key, spec)}, {"P", spec.modulus}};
        if (spec.generation) line["generation"] = spec.generation;
        std::cout << line.dump() << "\n";
      }
    } else if (*init) {
      auto cfg = init_common.load();
      auto mem = LogicalMemory(memory_config(cfg, insertion_from(cfg, {})));
      save(mem, out_path);
      std::cout << json{{"out", out_path}, {"tables", mem.table_count()}, {"layers", mem.layers()}}.dump() << "\n";
    } else if (*lookup) {
      auto mem = load(memory_path);
      std::ifstream in(grams_path);
      std::stringstream text;
      text << in.rdbuf();
      auto set = validate_external(text.str(), mem.slot_count(), mem.config().max_words);
      LookupStats stats;
      auto keys = encode(set, mem.config().max_words);
      auto vec = mem.retrieve(keys, layer, &stats);
      if (csv) {
        std::cout << "index,value\n";
        for (std::size_t i = 0; i < vec.size(); ++i) std::printf("%zu,%.9g\n", i, static_cast<double>(vec[i]));
      } else {
        json addrs = json::array();
        for (std::uint32_t s = 0; s < mem.slot_count(); ++s)
          for (const auto& a : mem.addresses(keys[s], layer, s))
            addrs.push_back({{"slot", a.slot}, {"head", a.head}, {"generation", a.generation}, {"row", a.row}});
        std::cout << json{{"layer", layer}, {"rows_touched", stats.rows_touched}, {"addresses", addrs},
                          {"vector", vec}}
                         .dump()
                  << "\n";
      }
    } else if (*expand) {
      if (!*slots_opt && !*gen_opt) {
        std::cerr << "expand needs --add-slots or --add-generation\n" << expand->help();
        return 1;
      }
      auto mem = load(memory_path);
      json report = {{"memory", out_path.empty() ? memory_path : out_path}};
      if (*slots_opt) {
        mem.expand_slots(add_slots);
      } else {
        report["generation"] = mem.expand_capacity(add_generation[0], add_generation[1]);
      }
      save(mem, out_path.empty() ? memory_path : out_path);
      report["slots"] = mem.slot_count();
      report["tables"] = mem.table_count();
      std::cout << report.dump() << "\n";
    } else if (*trainc) {
      auto cfg = train_common.load();
      if (steps) cfg.train.steps = *steps;
      auto task = prepare_experiment(cfg);
      auto insertion = insertion_from(cfg, layers);
      auto model = build_model(cfg, task, insertion);
      auto metrics = train(model, task, cfg.train, cfg.seed);
      if (!save_memory.empty() && !insertion.empty()) save(model.memory(), save_memory);
      if (csv) {
        std::cout << "step,loss,train_accuracy,test_accuracy\n";
        for (const auto& p : metrics.curve)
          std::cout << p.step << "," << p.loss << "," << p.train_accuracy << "," << p.test_accuracy << "\n";
        return 0;
      }
      json out = {{"seed", cfg.seed},
                  {"config_hash", config_hash(cfg)},
                  {"layers", std::vector<std::uint32_t>(insertion.begin(), insertion.end())},
                  {"metrics", metrics_json(metrics)}};
      if (with_baseline) {
        auto base = build_model(cfg, task, {});
        auto bm = train(base, task, cfg.train, cfg.seed);
        out["baseline"] = metrics_json(bm);
        out["margin"] = metrics.test_accuracy - bm.test_accuracy;
      }
      std::cout << out.dump() << "\n";
    } else if (*ablate) {
      auto cfg = ablate_common.load();
      auto task = prepare_experiment(cfg);
      auto report = greedy_layer_search(cfg, task, [](const AblationEntry& e) {
        std::cerr << "stage " << e.stage << " " << layer_set_name(e.layers) << " score " << e.score << "\n";
      });
      if (!gates_csv.empty()) {
        std::ostringstream os;
        report.write_gates_csv(os);
        write_file(gates_csv, os.str());
      }
      if (csv) {
        report.write_scores_csv(std::cout);
        return 0;
      }
      json entries = json::array();
      for (const auto& e : report.entries)
        entries.push_back({{"stage", e.stage},
                           {"layers", std::vector<std::uint32_t>(e.layers.begin(), e.layers.end())},
                           {"easy", e.easy},
                           {"hard", e.hard},
                           {"score", e.score},
                           {"retained", e.retained},
                           {"gates", gate_json(e.gates)}});
      json selected = json::array();
      for (const auto& s : report.selected) selected.push_back(std::vector<std::uint32_t>(s.begin(), s.end()));
      std::cout << json{{"seed", cfg.seed},
                        {"config_hash", config_hash(cfg)},
                        {"selected", selected},
                        {"stage_best", report.stage_best},
                        {"entries", entries}}
                       .dump()
                << "\n";
    } else if (*probe) {
      auto cfg = probe_common.load();
      if (steps) cfg.train.steps = *steps;
      cfg.train.eval_every = 0;
      auto task = prepare_experiment(cfg);
      auto model = build_model(cfg, task, insertion_from(cfg, layers));
      train(model, task, cfg.train, cfg.seed);
      auto gates = probe_gates(model, task.test);
      if (csv) {
        std::cout << "layer,mean_gate,normalized_gate\n";
        for (const auto& g : gates) std::cout << g.layer << "," << g.mean_gate << "," << g.normalized << "\n";
      } else {
        std::cout << json{{"seed", cfg.seed}, {"config_hash", config_hash(cfg)}, {"gates", gate_json(gates)}}.dump()
                  << "\n";
      }
    } else if (*bench) {
      if (bs.sizes.empty())
        for (auto e = min_exp; e <= max_exp; ++e) bs.sizes.push_back(1u << e);
      auto results = bench_lookup(bs);
      if (csv) {
        write_bench_csv(std::cout, results);
      } else {
        json out = json::array();
        for (const auto& r : results)
          out.push_back({{"rows", r.rows},
                         {"trials", r.trials},
                         {"median_ns", r.median_ns},
                         {"p95_ns", r.p95_ns},
                         {"rows_touched", r.rows_touched},
                         {"scan_median_ns", r.scan_median_ns},
                         {"scan_p95_ns", r.scan_p95_ns}});
        std::cout << out.dump() << "\n";
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
