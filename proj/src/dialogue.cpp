#include "todkit/dialogue.hpp"

#include <cctype>

#include "todkit/error.hpp"

namespace tod {

std::string_view to_string(Speaker s) { return s == Speaker::user ? "user" : "system"; }

std::string_view to_string(TaskTag t) {
  switch (t) {
    case TaskTag::NLU: return "NLU";
    case TaskTag::DST: return "DST";
    case TaskTag::POL: return "POL";
    case TaskTag::NLG: return "NLG";
  }
  return "?";
}

TaskTag parse_task(std::string_view name) {
  for (auto t : kAllTasks) {
    if (to_string(t) == name) return t;
  }
  throw ArgumentError("unknown task '" + std::string(name) + "'");
}

TaskPrompt prompt_for(TaskTag task) {
  switch (task) {
    case TaskTag::NLU: return {task, "translate dialogue to user intent:"};
    case TaskTag::DST: return {task, "translate dialogue to belief state:"};
    case TaskTag::POL: return {task, "translate dialogue to dialogue act:"};
    case TaskTag::NLG: return {task, "translate dialogue to system response:"};
  }
  throw ArgumentError("unknown task");
}

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out += ' ';
      pending_space = false;
      out += c;
    }
  }
  return out;
}

std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::size_t count_tokens(std::string_view text) {
  std::size_t n = 0;
  bool in_token = false;
  for (char c : text) {
    bool space = std::isspace(static_cast<unsigned char>(c));
    if (!space && !in_token) ++n;
    in_token = !space;
  }
  return n;
}

std::string join_tokens(const std::vector<std::string>& tokens, std::size_t begin) {
  std::string out;
  for (std::size_t i = begin; i < tokens.size(); ++i) {
    if (i > begin) out += ' ';
    out += tokens[i];
  }
  return out;
}

void DialogueSession::validate() const {
  const std::string where = "session '" + session_id + "'";
  if (utterances.empty()) throw ValidationError(where + " has no turns");
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    const auto& u = utterances[i];
    const std::string at = where + " turn " + std::to_string(i);
    if (normalize_whitespace(u.text).empty()) throw ValidationError(at + ": empty text");
    if (i > 0 && u.turn_index <= utterances[i - 1].turn_index) {
      throw ValidationError(at + ": turn_index does not increase");
    }
    Speaker expected = i % 2 == 0 ? Speaker::user : Speaker::system;
    if (u.speaker != expected) {
      throw ValidationError(at + ": speakers must alternate starting with user");
    }
    if (u.speaker == Speaker::user) {
      if (u.dialogue_act || u.delex_response) {
        throw ValidationError(at + ": act/response annotations belong to system turns");
      }
    } else if (u.belief_state || u.intent) {
      throw ValidationError(at + ": state/intent annotations belong to user turns");
    }
    try {
      if (u.belief_state) u.belief_state->validate();
      if (u.dialogue_act) u.dialogue_act->validate();
    } catch (const ValidationError& e) {
      throw ValidationError(at + ": " + e.what());
    }
    if (u.intent && !is_valid_intent(*u.intent)) {
      throw ValidationError(at + ": invalid intent '" + *u.intent + "'");
    }
    if (u.delex_response && normalize_whitespace(*u.delex_response).empty()) {
      throw ValidationError(at + ": empty delexicalized response");
    }
  }
}

std::string render_turns(const std::vector<std::pair<Speaker, std::string>>& turns) {
  std::string out;
  for (const auto& [speaker, text] : turns) {
    if (!out.empty()) out += ' ';
    out += speaker == Speaker::user ? kUserMarker : kSystemMarker;
    auto norm = normalize_whitespace(text);
    if (!norm.empty()) out += ' ' + norm;
  }
  return out;
}

std::string render_context(const DialogueSession& session, std::size_t upto_turn) {
  if (upto_turn >= session.utterances.size()) {
    throw RangeError("turn " + std::to_string(upto_turn) + " out of range for session '" +
                     session.session_id + "' with " + std::to_string(session.size()) + " turns");
  }
  session.validate();
  if (session.utterances[upto_turn].speaker != Speaker::user) {
    throw RangeError("turn " + std::to_string(upto_turn) + " is not a user turn");
  }
  std::vector<std::pair<Speaker, std::string>> turns;
  for (std::size_t i = 0; i <= upto_turn; ++i) {
    turns.emplace_back(session.utterances[i].speaker, session.utterances[i].text);
  }
  return render_turns(turns);
}

std::string truncate_context(std::string_view context, std::size_t budget) {
  auto tokens = split_tokens(context);
  if (tokens.size() <= budget) return join_tokens(tokens);
  if (budget == 0) return {};

  auto is_marker = [](const std::string& t) { return t == kUserMarker || t == kSystemMarker; };
  const std::size_t n = tokens.size();
  // Oldest turn start whose suffix fits.
  std::size_t keep_from = n;
  std::size_t prev_marker = n;
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_marker(tokens[i])) continue;
    if (n - i <= budget) {
      keep_from = i;
      break;
    }
    prev_marker = i;
  }
  if (prev_marker == n) {
    // No marker before the cut point: plain tail truncation.
    return join_tokens(std::vector<std::string>(tokens.end() - static_cast<long>(budget), tokens.end()));
  }
  std::vector<std::string> out;
  std::size_t room = budget - (n - keep_from);
  if (room >= 1) {
    // Keep the tail of the straddling turn behind its own marker.
    out.push_back(tokens[prev_marker]);
    out.insert(out.end(), tokens.end() - static_cast<long>(n - keep_from + room - 1),
               tokens.begin() + static_cast<long>(keep_from));
  }
  out.insert(out.end(), tokens.begin() + static_cast<long>(keep_from), tokens.end());
  return join_tokens(out);
}

std::string compose_input(TaskTag task, std::string_view context,
                          const std::optional<std::string>& db_token,
                          std::string_view conditioning, std::size_t max_tokens) {
  if (max_tokens < 16) throw ArgumentError("max_tokens must be at least 16");
  auto prompt = prompt_for(task);
  std::string head(prompt.text);
  if (db_token && !db_token->empty()) head += ' ' + *db_token;
  const std::size_t head_tokens = count_tokens(head);

  auto cond_tokens = split_tokens(conditioning);
  std::size_t cond_room = max_tokens > head_tokens ? max_tokens - head_tokens : 0;
  if (cond_tokens.size() > cond_room) cond_tokens.resize(cond_room);
  std::size_t budget = max_tokens - head_tokens - cond_tokens.size();

  std::string out = head;
  auto ctx = truncate_context(context, budget);
  if (!ctx.empty()) out += ' ' + ctx;
  if (!cond_tokens.empty()) out += ' ' + join_tokens(cond_tokens);
  return out;
}

std::string build_input(const TaskPrompt& prompt, std::string_view context,
                        const std::optional<std::string>& db_token, std::size_t max_tokens) {
  return compose_input(prompt.task, context, db_token, {}, max_tokens);
}

std::string model_input(const TrainingSample& sample, std::size_t max_tokens) {
  return compose_input(sample.task, sample.context, sample.db_token, sample.conditioning, max_tokens);
}

}  // namespace tod
