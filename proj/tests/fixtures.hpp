#pragma once

#include <unistd.h>

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "todkit/corpus.hpp"
#include "todkit/db.hpp"
#include "todkit/dialogue.hpp"
#include "todkit/random.hpp"
#include "todkit/state_codec.hpp"

namespace fixtures {

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("todkit-test-" + name + "-" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline tod::Utterance user(std::string text, std::size_t index) {
  tod::Utterance u;
  u.speaker = tod::Speaker::user;
  u.text = std::move(text);
  u.turn_index = index;
  return u;
}

inline tod::Utterance system(std::string text, std::size_t index) {
  tod::Utterance u;
  u.speaker = tod::Speaker::system;
  u.text = std::move(text);
  u.turn_index = index;
  return u;
}

inline const char* kWeather = "Tell me the weather forecast for Lecanto, Georgia.";

inline tod::Corpus weather_corpus() {
  tod::Corpus c;
  c.corpus_id = "weather";
  c.mask = tod::AnnotationMask::parse("NLU");
  tod::DialogueSession s;
  s.session_id = "w0";
  auto u = user(kWeather, 0);
  u.intent = "get_weather";
  s.utterances.push_back(u);
  c.sessions.push_back(s);
  return c;
}

/// Five restaurants; exactly two are expensive indian.
inline tod::EntityDB restaurant_db() {
  tod::EntityDB db;
  db.add_domain("restaurant", {"area", "food", "pricerange"},
                {
                    {{"name", "curry garden"}, {"food", "indian"}, {"pricerange", "expensive"}, {"area", "centre"},
                     {"phone", "01223302330"}},
                    {{"name", "saffron brasserie"}, {"food", "indian"}, {"pricerange", "expensive"}, {"area", "north"},
                     {"phone", "01223354679"}},
                    {{"name", "golden wok"}, {"food", "chinese"}, {"pricerange", "cheap"}, {"area", "north"},
                     {"phone", "01223350688"}},
                    {{"name", "la margherita"}, {"food", "italian"}, {"pricerange", "moderate"}, {"area", "west"},
                     {"phone", "01223315232"}},
                    {{"name", "kohinoor"}, {"food", "indian"}, {"pricerange", "cheap"}, {"area", "centre"},
                     {"phone", "01223323639"}},
                });
  return db;
}

/// Published benchmark quadruples (inform, success, bleu, combined) as printed.
struct TableRow {
  const char* model;
  double inform, success, bleu, combined;
};

inline const std::vector<TableRow>& published_rows() {
  static const std::vector<TableRow> rows = {
      {"Sequicity", 66.41, 45.32, 15.54, 71.41},
      {"MD-Sequicity", 75.72, 58.32, 15.40, 82.40},
      {"DAMD", 76.33, 60.40, 16.60, 84.97},
      {"MinTL", 84.88, 74.91, 17.89, 97.78},
      {"HIER-Joint", 80.50, 71.70, 19.74, 95.84},
      {"SOLOIST", 85.50, 72.90, 16.54, 95.74},
      {"TOP", 85.20, 72.90, 17.00, 96.05},
      {"TOP+NOD", 86.90, 76.20, 20.58, 102.13},
      {"LABES-S2S (2.1)", 78.07, 67.06, 18.13, 90.69},
      {"UBAR", 85.10, 71.02, 16.21, 94.27},
      {"UBAR (2.1)", 86.20, 70.32, 16.48, 94.74},
      {"SimpleTOD", 84.40, 70.10, 15.01, 92.26},
      {"SimpleTOD (2.1)", 85.00, 70.50, 15.23, 92.98},
      {"PPTOD small", 87.80, 75.30, 19.89, 101.44},
      {"PPTOD small (2.1)", 88.89, 76.98, 18.59, 101.52},
      {"PPTOD base", 89.20, 79.40, 18.62, 102.92},
      {"PPTOD base (2.1)", 87.09, 79.08, 19.17, 102.26},
      {"PPTOD large", 82.60, 74.10, 19.21, 97.56},
      {"PPTOD large (2.1)", 86.43, 74.35, 17.89, 98.28},
  };
  return rows;
}

// Random valid codec values.

inline std::string random_name(tod::Rng& rng) {
  static const std::string alphabet = "abcdefghijklmnopqrstuvwxyz0123456789_-";
  std::string s;
  const auto n = 1 + rng.below(8);
  for (std::uint64_t i = 0; i < n; ++i) s += alphabet[rng.below(alphabet.size())];
  return s;
}

inline std::string random_value(tod::Rng& rng) {
  static const std::vector<std::string> words = {"indian", "cheap", "don't", "care", "north", "5", "a,", "b",
                                                 "x=y",    "=",     "'s",    "o'clock", "new", "york", "3.5", "-"};
  for (;;) {
    if (rng.chance(0.1)) return std::string(tod::kDontCare);
    std::string v;
    const auto n = 1 + rng.below(4);
    for (std::uint64_t i = 0; i < n; ++i) v += (i ? " " : "") + words[rng.below(words.size())];
    if (tod::is_valid_value(v)) return v;
  }
}

inline tod::BeliefState random_state(tod::Rng& rng) {
  tod::BeliefState s;
  const auto domains = rng.below(4);
  for (std::uint64_t d = 0; d < domains; ++d) {
    const auto domain = random_name(rng);
    const auto slots = 1 + rng.below(4);
    for (std::uint64_t k = 0; k < slots; ++k) s.set(domain, random_name(rng), random_value(rng));
  }
  return s;
}

inline tod::DialogueAct random_act(tod::Rng& rng) {
  tod::DialogueAct a;
  const auto domains = rng.below(4);
  for (std::uint64_t d = 0; d < domains; ++d) {
    const auto domain = random_name(rng);
    const auto acts = 1 + rng.below(3);
    for (std::uint64_t k = 0; k < acts; ++k) {
      std::vector<std::string> slots;
      const auto n = rng.below(4);
      for (std::uint64_t j = 0; j < n; ++j) slots.push_back(random_name(rng));
      a.add(domain, random_name(rng), slots);
    }
  }
  return a;
}

inline std::string random_bytes(tod::Rng& rng, std::size_t max_len) {
  static const std::string interesting = "[]{}=,; abcxyz_-'\n\t\"\\";
  std::string s;
  const auto n = rng.below(max_len + 1);
  for (std::uint64_t i = 0; i < n; ++i) {
    s += rng.chance(0.7) ? interesting[rng.below(interesting.size())] : static_cast<char>(rng.below(256));
  }
  return s;
}

/// Random database plus an independent filter used as the query oracle.
inline tod::EntityDB random_db(tod::Rng& rng, std::size_t max_entities) {
  static const std::vector<std::string> slots = {"area", "food", "pricerange", "stars"};
  static const std::vector<std::string> values = {"a", "b", "c", "d"};
  tod::EntityDB db;
  std::vector<std::string> informable;
  for (const auto& s : slots) {
    if (rng.chance(0.7)) informable.push_back(s);
  }
  if (informable.empty()) informable.push_back("area");
  std::vector<tod::Entity> entities;
  const auto n = rng.below(max_entities + 1);
  for (std::uint64_t i = 0; i < n; ++i) {
    tod::Entity e{{"name", "entity " + std::to_string(i)}};
    for (const auto& s : informable) e[s] = values[rng.below(values.size())];
    if (rng.chance(0.5)) e["phone"] = std::to_string(rng.below(1000000));
    entities.push_back(e);
  }
  db.add_domain("shop", informable, entities);
  return db;
}

inline tod::BeliefState random_query_state(tod::Rng& rng) {
  static const std::vector<std::string> slots = {"area", "food", "pricerange", "stars", "phone", "parking"};
  static const std::vector<std::string> values = {"a", "b", "c", "d", "A", " b ", std::string(tod::kDontCare)};
  tod::BeliefState s;
  for (const auto& slot : slots) {
    if (rng.chance(0.4)) s.set("shop", slot, tod::normalize_whitespace(values[rng.below(values.size())]));
  }
  if (rng.chance(0.3)) s.set("other", "area", "a");
  return s;
}

inline std::vector<const tod::Entity*> brute_force_query(const tod::EntityDB& db, const tod::BeliefState& state,
                                                         const std::string& domain) {
  std::vector<const tod::Entity*> out;
  const auto& table = db.table(domain);
  const auto* constraints = state.domain(domain);
  auto lower = [](std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return tod::normalize_whitespace(s);
  };
  for (const auto& e : table.entities) {
    bool ok = true;
    if (constraints != nullptr) {
      for (const auto& [slot, value] : *constraints) {
        if (value == tod::kDontCare) continue;
        bool informable = false;
        for (const auto& s : table.informable) informable = informable || s == slot;
        if (!informable) continue;
        if (lower(e.at(slot)) != lower(value)) ok = false;
      }
    }
    if (ok) out.push_back(&e);
  }
  return out;
}

}  // namespace fixtures
