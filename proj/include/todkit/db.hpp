#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "todkit/state_codec.hpp"

namespace tod {

using Entity = std::map<std::string, std::string>;

struct DomainTable {
  std::vector<std::string> informable;
  /// Sorted by "name"; this order decides which entity is offered.
  std::vector<Entity> entities;
};

class EntityDB {
 public:
  /// Validates and sorts `entities` by name. Throws ValidationError when an
  /// entity lacks an informable slot or a name is duplicated.
  void add_domain(const std::string& domain, std::vector<std::string> informable,
                  std::vector<Entity> entities);

  bool has_domain(std::string_view domain) const;
  /// Throws LookupError for unknown domains.
  const DomainTable& table(std::string_view domain) const;
  const std::map<std::string, DomainTable, std::less<>>& domains() const { return domains_; }
  std::size_t size() const;

 private:
  std::map<std::string, DomainTable, std::less<>> domains_;
};

/// One JSON record per line: {"domain", "informable", "entities"}.
EntityDB load_db(const std::filesystem::path& path);
void save_db(const EntityDB& db, const std::filesystem::path& path);

struct DBState {
  std::string domain;
  std::size_t match_count = 0;
  int bucket = 0;  // min(match_count, 3)
  std::string token;

  friend bool operator==(const DBState&, const DBState&) = default;
};

DBState make_db_state(std::string domain, std::size_t match_count);
int db_bucket(std::size_t match_count);
std::string db_token(int bucket);

struct QueryResult {
  std::vector<const Entity*> matches;
  DBState db_state;

  const Entity* offered() const { return matches.empty() ? nullptr : matches.front(); }
};

/// Lowercase + whitespace normalization used for slot-value comparison.
std::string normalize_value(std::string_view value);

/// Entities of `domain` consistent with the state's informable constraints.
/// "don't care" and non-informable slots do not constrain.
QueryResult query(const EntityDB& db, const BeliefState& state, std::string_view domain);

/// Domain the current turn is about: the first domain (canonical order)
/// whose constraints changed since `previous`, else `fallback` if still
/// known to the db, else the first state domain in the db, else the db's
/// first domain.
std::string active_domain(const EntityDB& db, const BeliefState& previous,
                          const BeliefState& current, std::string_view fallback);

/// Closed slot-to-placeholder table. The "choice" slot stands for the match
/// count rather than an entity field.
class DelexOntology {
 public:
  DelexOntology();  // name, choice, price, food, area, phone, stars, type, reference, ...
  explicit DelexOntology(std::vector<std::pair<std::string, std::string>> slot_to_placeholder);

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
  std::optional<std::string> placeholder(std::string_view slot) const;
  std::optional<std::string> slot(std::string_view placeholder) const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

inline constexpr std::string_view kChoiceSlot = "choice";

bool is_placeholder(std::string_view token);

std::string delexicalize(std::string_view response, const Entity& entity, const DBState& db_state,
                         const DelexOntology& ontology = {});

struct Lexicalized {
  std::string text;
  std::vector<std::string> unfilled;
};

Lexicalized lexicalize(std::string_view delex_response, const std::vector<const Entity*>& matches,
                       const DBState& db_state, const DelexOntology& ontology = {});

}  // namespace tod
