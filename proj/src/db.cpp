#include "todkit/db.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

#include <json.hpp>

#include "todkit/dialogue.hpp"
#include "todkit/error.hpp"

namespace tod {

using nlohmann::json;

void EntityDB::add_domain(const std::string& domain, std::vector<std::string> informable,
                          std::vector<Entity> entities) {
  if (!is_valid_name(domain)) throw ValidationError("invalid db domain '" + domain + "'");
  for (const auto& slot : informable) {
    if (!is_valid_name(slot)) throw ValidationError("invalid informable slot '" + slot + "'");
  }
  std::set<std::string> names;
  for (const auto& e : entities) {
    auto name = e.find("name");
    if (name == e.end() || name->second.empty()) {
      throw ValidationError("entity in domain '" + domain + "' has no name");
    }
    if (!names.insert(name->second).second) {
      throw ValidationError("duplicate entity name '" + name->second + "' in domain '" + domain + "'");
    }
    for (const auto& slot : informable) {
      auto it = e.find(slot);
      if (it == e.end() || it->second.empty()) {
        throw ValidationError("entity '" + name->second + "' lacks informable slot '" + slot + "'");
      }
    }
  }
  std::sort(entities.begin(), entities.end(),
            [](const Entity& a, const Entity& b) { return a.at("name") < b.at("name"); });
  std::sort(informable.begin(), informable.end());
  domains_[domain] = DomainTable{std::move(informable), std::move(entities)};
}

bool EntityDB::has_domain(std::string_view domain) const { return domains_.find(domain) != domains_.end(); }

const DomainTable& EntityDB::table(std::string_view domain) const {
  auto it = domains_.find(domain);
  if (it == domains_.end()) throw LookupError("unknown db domain '" + std::string(domain) + "'");
  return it->second;
}

std::size_t EntityDB::size() const {
  std::size_t n = 0;
  for (const auto& [_, t] : domains_) n += t.entities.size();
  return n;
}

EntityDB load_db(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read db file " + path.string());
  EntityDB db;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (normalize_whitespace(line).empty()) continue;
    try {
      auto rec = json::parse(line);
      if (!rec.is_object()) throw SchemaError("db record must be an object", lineno);
      for (auto it = rec.begin(); it != rec.end(); ++it) {
        if (it.key() != "domain" && it.key() != "informable" && it.key() != "entities") {
          throw SchemaError("unknown db field '" + it.key() + "'", lineno);
        }
      }
      auto domain = rec.at("domain").get<std::string>();
      if (db.has_domain(domain)) throw SchemaError("duplicate domain '" + domain + "'", lineno);
      auto informable = rec.at("informable").get<std::vector<std::string>>();
      auto entities = rec.at("entities").get<std::vector<Entity>>();
      db.add_domain(domain, std::move(informable), std::move(entities));
    } catch (const SchemaError&) {
      throw;
    } catch (const json::exception& e) {
      throw SchemaError(e.what(), lineno);
    } catch (const ValidationError& e) {
      throw SchemaError(e.what(), lineno);
    }
  }
  return db;
}

void save_db(const EntityDB& db, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write db file " + path.string());
  for (const auto& [domain, table] : db.domains()) {
    json rec{{"domain", domain}, {"informable", table.informable}, {"entities", table.entities}};
    out << rec.dump() << '\n';
  }
}

int db_bucket(std::size_t match_count) { return static_cast<int>(std::min<std::size_t>(match_count, 3)); }

std::string db_token(int bucket) { return "[db_" + std::to_string(bucket) + "]"; }

DBState make_db_state(std::string domain, std::size_t match_count) {
  int bucket = db_bucket(match_count);
  return DBState{std::move(domain), match_count, bucket, db_token(bucket)};
}

std::string normalize_value(std::string_view value) {
  auto out = normalize_whitespace(value);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

QueryResult query(const EntityDB& db, const BeliefState& state, std::string_view domain) {
  const auto& table = db.table(domain);
  std::vector<std::pair<std::string, std::string>> constraints;
  if (const auto* slots = state.domain(domain)) {
    for (const auto& [slot, value] : *slots) {
      if (!std::binary_search(table.informable.begin(), table.informable.end(), slot)) continue;
      auto v = normalize_value(value);
      if (v == kDontCare) continue;
      constraints.emplace_back(slot, std::move(v));
    }
  }
  QueryResult result;
  for (const auto& e : table.entities) {
    bool ok = std::all_of(constraints.begin(), constraints.end(), [&](const auto& c) {
      return normalize_value(e.at(c.first)) == c.second;
    });
    if (ok) result.matches.push_back(&e);
  }
  result.db_state = make_db_state(std::string(domain), result.matches.size());
  return result;
}

std::string active_domain(const EntityDB& db, const BeliefState& previous, const BeliefState& current,
                          std::string_view fallback) {
  for (const auto& [domain, slots] : current.entries) {
    if (!db.has_domain(domain)) continue;
    const auto* before = previous.domain(domain);
    if (before == nullptr || *before != slots) return domain;
  }
  if (!fallback.empty() && db.has_domain(fallback)) return std::string(fallback);
  for (const auto& [domain, _] : current.entries) {
    if (db.has_domain(domain)) return domain;
  }
  if (db.domains().empty()) throw LookupError("empty database");
  return db.domains().begin()->first;
}

DelexOntology::DelexOntology()
    : DelexOntology({{"name", "[value_name]"},
                     {"choice", "[value_choice]"},
                     {"pricerange", "[value_price]"},
                     {"food", "[value_food]"},
                     {"area", "[value_area]"},
                     {"phone", "[value_phone]"},
                     {"stars", "[value_stars]"},
                     {"type", "[value_type]"},
                     {"reference", "[value_reference]"},
                     {"address", "[value_address]"},
                     {"postcode", "[value_postcode]"}}) {}

DelexOntology::DelexOntology(std::vector<std::pair<std::string, std::string>> slot_to_placeholder)
    : entries_(std::move(slot_to_placeholder)) {
  for (const auto& [slot, ph] : entries_) {
    if (!is_valid_name(slot) || !is_placeholder(ph)) {
      throw ValidationError("bad ontology entry " + slot + " -> " + ph);
    }
  }
}

std::optional<std::string> DelexOntology::placeholder(std::string_view slot) const {
  for (const auto& [s, ph] : entries_) {
    if (s == slot) return ph;
  }
  return std::nullopt;
}

std::optional<std::string> DelexOntology::slot(std::string_view placeholder) const {
  for (const auto& [s, ph] : entries_) {
    if (ph == placeholder) return s;
  }
  return std::nullopt;
}

bool is_placeholder(std::string_view token) {
  constexpr std::string_view kPrefix = "[value_";
  if (token.size() <= kPrefix.size() + 1 || token.substr(0, kPrefix.size()) != kPrefix ||
      token.back() != ']') {
    return false;
  }
  auto body = token.substr(kPrefix.size(), token.size() - kPrefix.size() - 1);
  return std::all_of(body.begin(), body.end(), [](char c) { return (c >= 'a' && c <= 'z') || c == '_'; });
}

namespace {

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

bool iequal_at(std::string_view text, std::size_t pos, std::string_view pattern) {
  if (pos + pattern.size() > text.size()) return false;
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(text[pos + i])) !=
        std::tolower(static_cast<unsigned char>(pattern[i]))) {
      return false;
    }
  }
  return true;
}

}  // namespace

std::string delexicalize(std::string_view response, const Entity& entity, const DBState& db_state,
                         const DelexOntology& ontology) {
  struct Candidate {
    std::string value;
    std::string placeholder;
  };
  std::vector<Candidate> candidates;
  for (const auto& [slot, ph] : ontology.entries()) {
    if (slot == kChoiceSlot) {
      candidates.push_back({std::to_string(db_state.match_count), ph});
      continue;
    }
    auto it = entity.find(slot);
    if (it != entity.end()) {
      auto v = normalize_whitespace(it->second);
      if (!v.empty()) candidates.push_back({std::move(v), ph});
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Candidate& a, const Candidate& b) { return a.value.size() > b.value.size(); });

  std::string out;
  std::size_t i = 0;
  while (i < response.size()) {
    bool at_boundary = i == 0 || !is_word_char(response[i - 1]);
    bool replaced = false;
    if (at_boundary) {
      for (const auto& c : candidates) {
        std::size_t end = i + c.value.size();
        if (iequal_at(response, i, c.value) && (end == response.size() || !is_word_char(response[end]))) {
          out += c.placeholder;
          i = end;
          replaced = true;
          break;
        }
      }
    }
    if (!replaced) out += response[i++];
  }
  return out;
}

Lexicalized lexicalize(std::string_view delex_response, const std::vector<const Entity*>& matches,
                       const DBState& db_state, const DelexOntology& ontology) {
  Lexicalized result;
  std::size_t i = 0;
  while (i < delex_response.size()) {
    auto open = delex_response.find("[value_", i);
    if (open == std::string_view::npos) break;
    auto close = delex_response.find(']', open);
    if (close == std::string_view::npos) break;
    result.text.append(delex_response.substr(i, open - i));
    auto ph = delex_response.substr(open, close - open + 1);
    std::optional<std::string> fill;
    if (is_placeholder(ph)) {
      if (auto slot = ontology.slot(ph)) {
        if (*slot == kChoiceSlot) {
          fill = std::to_string(db_state.match_count);
        } else if (!matches.empty()) {
          auto it = matches.front()->find(*slot);
          if (it != matches.front()->end()) fill = it->second;
        }
      }
    }
    if (fill) {
      result.text += *fill;
    } else {
      result.text.append(ph);
      result.unfilled.emplace_back(ph);
    }
    i = close + 1;
  }
  result.text.append(delex_response.substr(std::min(i, delex_response.size())));
  return result;
}

}  // namespace tod
