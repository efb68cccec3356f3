#include "todkit/tokenizer.hpp"

#include "todkit/dialogue.hpp"
#include "todkit/error.hpp"
#include "todkit/random.hpp"

namespace tod {

const std::vector<std::string>& Tokenizer::special_tokens() {
  static const std::vector<std::string> specials = {
      "<pad>", "<bos>", "<eos>", "<unk>",
      "[user]", "[system]",
      "translate", "dialogue", "to", "user", "intent:", "belief", "state:", "act:", "system", "response:",
      "[db_0]", "[db_1]", "[db_2]", "[db_3]",
      "[value_name]", "[value_choice]", "[value_price]", "[value_food]", "[value_area]", "[value_phone]",
      "[value_stars]", "[value_type]", "[value_reference]", "[value_address]", "[value_postcode]",
      "{", "}", "=", ";", ","};
  return specials;
}

Tokenizer::Tokenizer() {
  for (const auto& t : special_tokens()) add(t);
}

Tokenizer::Tokenizer(std::vector<std::string> tokens) {
  const auto& specials = special_tokens();
  if (tokens.size() < specials.size()) throw CheckpointError("vocabulary is missing special tokens");
  for (std::size_t i = 0; i < specials.size(); ++i) {
    if (tokens[i] != specials[i]) throw CheckpointError("vocabulary special token mismatch at id " + std::to_string(i));
  }
  for (auto& t : tokens) {
    if (ids_.count(t)) throw CheckpointError("duplicate vocabulary token '" + t + "'");
    add(t);
  }
}

void Tokenizer::add(const std::string& token) {
  if (ids_.emplace(token, static_cast<int>(tokens_.size())).second) tokens_.push_back(token);
}

Tokenizer Tokenizer::build(const std::vector<std::string>& texts, std::size_t min_count) {
  std::unordered_map<std::string, std::size_t> counts;
  std::vector<std::string> order;
  for (const auto& text : texts) {
    for (auto& tok : split_tokens(text)) {
      if (counts[tok]++ == 0) order.push_back(std::move(tok));
    }
  }
  Tokenizer t;
  for (const auto& tok : order) {
    if (counts[tok] >= min_count) t.add(tok);
  }
  return t;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> out;
  for (const auto& tok : split_tokens(text)) out.push_back(id(tok));
  return out;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int i : ids) {
    if (i == kPad || i == kBos || i == kEos) continue;
    if (!out.empty()) out += ' ';
    out += token(i);
  }
  return out;
}

int Tokenizer::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

bool Tokenizer::contains(std::string_view token) const { return ids_.count(std::string(token)) != 0; }

const std::string& Tokenizer::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw RangeError("token id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::uint64_t Tokenizer::hash() const {
  std::uint64_t h = fnv1a("vocab");
  for (const auto& t : tokens_) {
    h = fnv1a(t, h);
    h = fnv1a("\n", h);
  }
  return h;
}

bool is_bracket_token(std::string_view token) {
  return token.size() >= 3 && token.front() == '[' && token.back() == ']';
}

}  // namespace tod
