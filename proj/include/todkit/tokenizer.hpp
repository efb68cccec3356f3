#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace tod {

/// Whitespace tokenizer over a corpus-built vocabulary. Specials occupy the
/// first ids: pad, bos, eos, unk, then speaker markers, prompt words, DB
/// tokens, delex placeholders and codec punctuation.
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  Tokenizer();  // specials only
  explicit Tokenizer(std::vector<std::string> tokens);

  /// Specials plus every whitespace token of `texts` seen at least
  /// `min_count` times, in first-seen order.
  static Tokenizer build(const std::vector<std::string>& texts, std::size_t min_count = 1);

  static const std::vector<std::string>& special_tokens();

  std::vector<int> encode(std::string_view text) const;
  std::string decode(const std::vector<int>& ids) const;

  int id(std::string_view token) const;  // kUnk if absent
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// FNV-1a over the ordered vocabulary.
  std::uint64_t hash() const;

 private:
  void add(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

/// "[...]" tokens (markers, DB tokens, placeholders, intents, domains).
bool is_bracket_token(std::string_view token);

}  // namespace tod
