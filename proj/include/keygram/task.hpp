#pragma once

// Synthetic compositional-instruction task.
//
// Instructions read "move the <attr> <obj> to the <place>". Three label
// spaces are predicted: the attribute, the object, and a grounded target
// class
//
//   target = (affordance[attr][obj] + zone[place]) mod target_classes
//
// where affordance and zone are seeded random tables. A fraction of
// (object, place) pairings is withheld from training; every object and place
// still occurs in training with some other partner.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "keygram/errors.hpp"
#include "keygram/hashing.hpp"

namespace keygram {

struct TaskSizes {
  std::size_t attributes = 10;
  std::size_t objects = 10;
  std::size_t places = 10;
  std::size_t target_classes = 10;
};

struct TaskExample {
  std::string instruction;
  std::size_t attribute = 0, object = 0, place = 0;
  std::array<std::size_t, 3> labels{};  // attribute, object, target
};

struct SyntheticTask {
  std::uint64_t seed = 0;
  TaskSizes sizes;
  std::vector<std::string> attributes, objects, places;
  std::vector<std::size_t> affordance;  // attributes x objects
  std::vector<std::size_t> zone;        // places
  std::set<std::pair<std::size_t, std::size_t>> held_out;  // (object, place)
  std::vector<TaskExample> train, test;

  std::size_t target(std::size_t a, std::size_t o, std::size_t p) const {
    return (affordance[a * sizes.objects + o] + zone[p]) % sizes.target_classes;
  }

  std::vector<std::size_t> head_sizes() const { return {sizes.attributes, sizes.objects, sizes.target_classes}; }

  // Token vocabulary: template words first, then attributes, objects, places.
  std::vector<std::string> vocabulary() const {
    std::vector<std::string> v{"move", "the", "to"};
    v.insert(v.end(), attributes.begin(), attributes.end());
    v.insert(v.end(), objects.begin(), objects.end());
    v.insert(v.end(), places.begin(), places.end());
    return v;
  }
};

namespace detail {

inline const std::vector<std::string>& attribute_pool() {
  static const std::vector<std::string> pool{"red",   "blue",   "green", "yellow", "white",  "black",
                                             "wooden", "metal", "small", "large",  "orange", "purple",
                                             "glass",  "plastic", "striped", "round"};
  return pool;
}
inline const std::vector<std::string>& object_pool() {
  static const std::vector<std::string> pool{"mug",   "bowl",   "sponge", "bottle", "plate", "cup",
                                             "box",   "apple",  "book",   "towel",  "spoon", "stapler",
                                             "block", "banana", "kettle", "pan"};
  return pool;
}
inline const std::vector<std::string>& place_pool() {
  static const std::vector<std::string> pool{"sink",    "table",   "drawer", "shelf",  "tray",  "basket",
                                             "counter", "cabinet", "microwave", "stove", "bin", "rack",
                                             "pad",     "oven",    "fridge", "window"};
  return pool;
}

inline std::size_t draw_below(SplitMix64& gen, std::size_t n) {
  return static_cast<std::size_t>(gen.next() % n);
}

}  // namespace detail

inline SyntheticTask generate_task(std::uint64_t seed, const TaskSizes& sizes, double holdout) {
  using namespace detail;
  if (sizes.attributes < 2 || sizes.objects < 2 || sizes.places < 2 || sizes.target_classes < 2)
    throw ConfigError("every task vocabulary needs at least 2 entries");
  if (sizes.attributes > attribute_pool().size() || sizes.objects > object_pool().size() ||
      sizes.places > place_pool().size())
    throw ConfigError("task vocabulary larger than the built-in word pools");
  if (!(holdout > 0.0 && holdout < 0.5)) throw ConfigError("holdout fraction must be in (0, 0.5)");

  SyntheticTask task;
  task.seed = seed;
  task.sizes = sizes;
  task.attributes.assign(attribute_pool().begin(), attribute_pool().begin() + static_cast<long>(sizes.attributes));
  task.objects.assign(object_pool().begin(), object_pool().begin() + static_cast<long>(sizes.objects));
  task.places.assign(place_pool().begin(), place_pool().begin() + static_cast<long>(sizes.places));

  SplitMix64 gen(SplitMix64::mix(seed ^ 0x7a5c3e1f2b4d6981ULL));
  task.affordance.resize(sizes.attributes * sizes.objects);
  for (auto& v : task.affordance) v = draw_below(gen, sizes.target_classes);
  task.zone.resize(sizes.places);
  for (auto& v : task.zone) v = draw_below(gen, sizes.target_classes);

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t o = 0; o < sizes.objects; ++o)
    for (std::size_t p = 0; p < sizes.places; ++p) pairs.emplace_back(o, p);
  for (std::size_t i = pairs.size(); i > 1; --i) std::swap(pairs[i - 1], pairs[draw_below(gen, i)]);

  const auto want = static_cast<std::size_t>(std::llround(holdout * static_cast<double>(pairs.size())));
  std::vector<std::size_t> per_object(sizes.objects, 0), per_place(sizes.places, 0);
  for (const auto& [o, p] : pairs) {
    if (task.held_out.size() == want) break;
    // keep every object and place in at least one training pairing
    if (per_object[o] + 1 >= sizes.places || per_place[p] + 1 >= sizes.objects) continue;
    task.held_out.emplace(o, p);
    ++per_object[o];
    ++per_place[p];
  }

  for (std::size_t a = 0; a < sizes.attributes; ++a)
    for (std::size_t o = 0; o < sizes.objects; ++o)
      for (std::size_t p = 0; p < sizes.places; ++p) {
        TaskExample ex;
        ex.instruction = "move the " + task.attributes[a] + " " + task.objects[o] + " to the " + task.places[p];
        ex.attribute = a;
        ex.object = o;
        ex.place = p;
        ex.labels = {a, o, task.target(a, o, p)};
        (task.held_out.contains({o, p}) ? task.test : task.train).push_back(std::move(ex));
      }
  return task;
}

}  // namespace keygram
