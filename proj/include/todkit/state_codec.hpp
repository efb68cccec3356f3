#pragma once

#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace tod {

/// domain -> slot -> value. std::map gives the canonical lexicographic order.
struct BeliefState {
  std::map<std::string, std::map<std::string, std::string>> entries;

  bool empty() const { return entries.empty(); }
  const std::map<std::string, std::string>* domain(std::string_view name) const;
  void set(const std::string& domain, const std::string& slot, const std::string& value);

  /// Throws ValidationError if any name or value breaks the codec invariants.
  void validate() const;

  friend bool operator==(const BeliefState&, const BeliefState&) = default;
};

/// domain -> act type -> slots.
struct DialogueAct {
  std::map<std::string, std::map<std::string, std::set<std::string>>> entries;

  bool empty() const { return entries.empty(); }
  void add(const std::string& domain, const std::string& act_type,
           const std::vector<std::string>& slots = {});
  void validate() const;

  friend bool operator==(const DialogueAct&, const DialogueAct&) = default;
};

/// Domain, slot and act-type names: non-empty, drawn from [a-z0-9_-].
bool is_valid_name(std::string_view name);
/// Slot values: whitespace-normalized, no braces, and no ", name = " run
/// (the only place the state grammar is ambiguous).
bool is_valid_value(std::string_view value);

inline constexpr std::string_view kDontCare = "don't care";

std::string serialize_state(const BeliefState& state);

template <typename T>
struct Parsed {
  T value;
  std::vector<std::string> warnings;
};

/// Best effort: recovers every well-formed "[domain] {slot = value, ...}"
/// segment and reports the rest. Never throws.
Parsed<BeliefState> parse_state(std::string_view text);

/// "[domain] [act] slot slot [act] ...; [domain] ...".
std::string serialize_act(const DialogueAct& act);
Parsed<DialogueAct> parse_act(std::string_view text);

/// Intent names are [a-z0-9_]+ and render as "[name]".
bool is_valid_intent(std::string_view name);
std::string serialize_intent(std::string_view name);
/// Strip whitespace and one pair of surrounding brackets; lowercase.
std::string normalize_intent(std::string_view text);

}  // namespace tod
