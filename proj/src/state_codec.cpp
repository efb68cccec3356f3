#include "todkit/state_codec.hpp"

#include <algorithm>
#include <cctype>

#include "todkit/dialogue.hpp"
#include "todkit/error.hpp"

namespace tod {
namespace {

bool is_name_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// True when `s` begins with a slot name followed by " = ".
bool starts_with_assignment(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size() && is_name_char(s[i])) ++i;
  return i > 0 && s.substr(i, 3) == " = ";
}

std::vector<std::string_view> split_on(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

// "[name]" -> name, or empty view when the token is not a bracketed name.
std::string_view bracketed_name(std::string_view tok) {
  if (tok.size() < 3 || tok.front() != '[' || tok.back() != ']') return {};
  auto inner = tok.substr(1, tok.size() - 2);
  return is_valid_name(inner) ? inner : std::string_view{};
}

std::string quote(std::string_view s) {
  constexpr std::size_t kMax = 60;
  std::string out = "'";
  out += s.size() > kMax ? std::string(s.substr(0, kMax)) + "..." : std::string(s);
  out += "'";
  return out;
}

}  // namespace

bool is_valid_name(std::string_view name) {
  return !name.empty() && std::all_of(name.begin(), name.end(), is_name_char);
}

bool is_valid_value(std::string_view value) {
  if (value.empty() || normalize_whitespace(value) != value) return false;
  for (char c : value) {
    if (c == '{' || c == '}' || c == '[' || c == ']' || c == ';') return false;
  }
  for (std::size_t i = value.find(", "); i != std::string_view::npos; i = value.find(", ", i + 1)) {
    if (starts_with_assignment(value.substr(i + 2))) return false;
  }
  return true;
}

const std::map<std::string, std::string>* BeliefState::domain(std::string_view name) const {
  auto it = entries.find(std::string(name));
  return it == entries.end() ? nullptr : &it->second;
}

void BeliefState::set(const std::string& domain, const std::string& slot, const std::string& value) {
  entries[domain][slot] = value;
}

void BeliefState::validate() const {
  for (const auto& [dom, slots] : entries) {
    if (!is_valid_name(dom)) throw ValidationError("invalid domain name " + quote(dom));
    if (slots.empty()) throw ValidationError("domain " + quote(dom) + " has no slots");
    for (const auto& [slot, value] : slots) {
      if (!is_valid_name(slot)) throw ValidationError("invalid slot name " + quote(slot));
      if (!is_valid_value(value)) {
        throw ValidationError("invalid value " + quote(value) + " for " + dom + "." + slot);
      }
    }
  }
}

void DialogueAct::add(const std::string& domain, const std::string& act_type,
                      const std::vector<std::string>& slots) {
  auto& dst = entries[domain][act_type];
  dst.insert(slots.begin(), slots.end());
}

void DialogueAct::validate() const {
  for (const auto& [dom, acts] : entries) {
    if (!is_valid_name(dom)) throw ValidationError("invalid act domain " + quote(dom));
    if (acts.empty()) throw ValidationError("act domain " + quote(dom) + " has no acts");
    for (const auto& [type, slots] : acts) {
      if (!is_valid_name(type)) throw ValidationError("invalid act type " + quote(type));
      for (const auto& s : slots) {
        if (!is_valid_name(s)) throw ValidationError("invalid act slot " + quote(s));
      }
    }
  }
}

std::string serialize_state(const BeliefState& state) {
  state.validate();
  std::string out;
  for (const auto& [dom, slots] : state.entries) {
    if (!out.empty()) out += "; ";
    out += "[" + dom + "] {";
    bool first = true;
    for (const auto& [slot, value] : slots) {
      if (!first) out += ", ";
      first = false;
      out += slot + " = " + value;
    }
    out += "}";
  }
  return out;
}

Parsed<BeliefState> parse_state(std::string_view text) {
  Parsed<BeliefState> result;
  auto& warnings = result.warnings;
  if (trim(text).empty()) return result;

  for (auto raw : split_on(text, ';')) {
    auto seg = trim(raw);
    if (seg.empty()) {
      warnings.push_back("empty segment");
      continue;
    }
    auto close = seg.find(']');
    if (seg.front() != '[' || close == std::string_view::npos) {
      warnings.push_back("segment without domain tag: " + quote(seg));
      continue;
    }
    auto dom = seg.substr(1, close - 1);
    if (!is_valid_name(dom)) {
      warnings.push_back("invalid domain name in " + quote(seg));
      continue;
    }
    auto rest = trim(seg.substr(close + 1));
    if (rest.size() < 2 || rest.front() != '{' || rest.back() != '}') {
      warnings.push_back("unterminated slot block in " + quote(seg));
      continue;
    }
    auto body = trim(rest.substr(1, rest.size() - 2));
    if (body.empty()) {
      warnings.push_back("empty slot block in " + quote(seg));
      continue;
    }

    std::vector<std::string_view> pairs;
    std::size_t start = 0;
    for (std::size_t i = body.find(", "); i != std::string_view::npos; i = body.find(", ", i + 1)) {
      if (starts_with_assignment(body.substr(i + 2))) {
        pairs.push_back(body.substr(start, i - start));
        start = i + 2;
      }
    }
    pairs.push_back(body.substr(start));

    std::string domain_name(dom);
    std::map<std::string, std::string> slots;
    for (auto pair : pairs) {
      auto eq = pair.find(" = ");
      if (eq == std::string_view::npos) {
        warnings.push_back("slot without value in [" + domain_name + "]: " + quote(pair));
        continue;
      }
      std::string slot(trim(pair.substr(0, eq)));
      std::string value(trim(pair.substr(eq + 3)));
      if (!is_valid_name(slot) || !is_valid_value(value)) {
        warnings.push_back("malformed slot in [" + domain_name + "]: " + quote(pair));
        continue;
      }
      if (!slots.emplace(slot, value).second) {
        warnings.push_back("duplicate slot " + slot + " in [" + domain_name + "]");
      }
    }
    if (slots.empty()) continue;
    auto [it, inserted] = result.value.entries.emplace(domain_name, slots);
    if (!inserted) {
      warnings.push_back("duplicate domain [" + domain_name + "]");
      for (auto& kv : slots) it->second.insert(kv);
    }
  }
  return result;
}

std::string serialize_act(const DialogueAct& act) {
  act.validate();
  std::string out;
  for (const auto& [dom, acts] : act.entries) {
    if (!out.empty()) out += "; ";
    out += "[" + dom + "]";
    for (const auto& [type, slots] : acts) {
      out += " [" + type + "]";
      for (const auto& s : slots) out += " " + s;
    }
  }
  return out;
}

Parsed<DialogueAct> parse_act(std::string_view text) {
  Parsed<DialogueAct> result;
  auto& warnings = result.warnings;
  if (trim(text).empty()) return result;

  for (auto raw : split_on(text, ';')) {
    auto tokens = split_tokens(raw);
    if (tokens.empty()) {
      warnings.push_back("empty act segment");
      continue;
    }
    auto dom = bracketed_name(tokens.front());
    if (dom.empty()) {
      warnings.push_back("act segment without domain tag: " + quote(trim(raw)));
      continue;
    }
    std::string domain_name(dom);
    std::map<std::string, std::set<std::string>> acts;
    std::string current;
    for (std::size_t i = 1; i < tokens.size(); ++i) {
      const auto& tok = tokens[i];
      if (auto type = bracketed_name(tok); !type.empty()) {
        current = std::string(type);
        if (!acts.emplace(current, std::set<std::string>{}).second) {
          warnings.push_back("duplicate act [" + current + "] in [" + domain_name + "]");
        }
      } else if (current.empty()) {
        warnings.push_back("slot " + quote(tok) + " before any act in [" + domain_name + "]");
      } else if (!is_valid_name(tok)) {
        warnings.push_back("malformed act slot " + quote(tok) + " in [" + domain_name + "]");
      } else if (!acts[current].insert(tok).second) {
        warnings.push_back("duplicate slot " + tok + " in [" + current + "]");
      }
    }
    if (acts.empty()) {
      warnings.push_back("act domain [" + domain_name + "] without acts");
      continue;
    }
    auto [it, inserted] = result.value.entries.emplace(domain_name, acts);
    if (!inserted) {
      warnings.push_back("duplicate act domain [" + domain_name + "]");
      for (auto& [type, slots] : acts) it->second[type].insert(slots.begin(), slots.end());
    }
  }
  return result;
}

bool is_valid_intent(std::string_view name) {
  return !name.empty() && std::all_of(name.begin(), name.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
  });
}

std::string serialize_intent(std::string_view name) {
  if (!is_valid_intent(name)) throw ValidationError("invalid intent name " + quote(name));
  return "[" + std::string(name) + "]";
}

std::string normalize_intent(std::string_view text) {
  auto t = trim(text);
  if (t.size() >= 2 && t.front() == '[' && t.back() == ']') t = trim(t.substr(1, t.size() - 2));
  std::string out(t);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace tod
