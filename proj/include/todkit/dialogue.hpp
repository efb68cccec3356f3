#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "todkit/state_codec.hpp"

namespace tod {

enum class Speaker { user, system };

std::string_view to_string(Speaker s);

enum class TaskTag { NLU, DST, POL, NLG };

inline constexpr std::array<TaskTag, 4> kAllTasks = {TaskTag::NLU, TaskTag::DST,
                                                     TaskTag::POL, TaskTag::NLG};

std::string_view to_string(TaskTag t);
/// Throws ArgumentError for anything but "NLU", "DST", "POL", "NLG".
TaskTag parse_task(std::string_view name);

struct TaskPrompt {
  TaskTag task;
  std::string_view text;
};

/// Fixed prompt for each task, e.g. "translate dialogue to belief state:".
TaskPrompt prompt_for(TaskTag task);

inline constexpr std::string_view kUserMarker = "[user]";
inline constexpr std::string_view kSystemMarker = "[system]";

/// Collapse whitespace runs to one space and strip both ends.
std::string normalize_whitespace(std::string_view text);

/// Split on whitespace. This is the token count used for every length budget.
std::vector<std::string> split_tokens(std::string_view text);
std::size_t count_tokens(std::string_view text);
std::string join_tokens(const std::vector<std::string>& tokens, std::size_t begin = 0);

struct Utterance {
  Speaker speaker = Speaker::user;
  std::string text;
  std::size_t turn_index = 0;

  // Annotations. User turns carry state/intent, system turns act/delex.
  std::optional<BeliefState> belief_state;
  std::optional<DialogueAct> dialogue_act;
  std::optional<std::string> intent;
  std::optional<std::string> delex_response;
};

struct DialogueSession {
  std::string session_id;
  std::vector<Utterance> utterances;

  /// Throws ValidationError on empty text, non-increasing turn indices,
  /// non-alternating speakers or misplaced annotations.
  void validate() const;

  std::size_t size() const { return utterances.size(); }
};

/// "[user] u1 [system] s1 ... [user] uk" up to and including `upto_turn`,
/// which must index a user turn.
std::string render_context(const DialogueSession& session, std::size_t upto_turn);

/// Render an arbitrary turn list (used for generated histories).
std::string render_turns(const std::vector<std::pair<Speaker, std::string>>& turns);

/// Drop the oldest context tokens until at most `budget` remain. Whole turns
/// go first; a partially kept turn keeps its speaker marker.
std::string truncate_context(std::string_view context, std::size_t budget);

/// prompt [db_token] context, with the context truncated so the whole input
/// has at most `max_tokens` tokens. Prompt and DB token are never cut.
std::string build_input(const TaskPrompt& prompt, std::string_view context,
                        const std::optional<std::string>& db_token, std::size_t max_tokens);

struct TrainingSample {
  TaskTag task = TaskTag::NLU;
  std::string context;
  std::string target;
  std::string source;
  std::optional<std::string> db_token;
  /// Upstream outputs appended to the input in cascaded formulations.
  std::string conditioning;

  TaskPrompt prompt() const { return prompt_for(task); }
};

/// Model input for a sample: build_input plus the conditioning suffix, which
/// also counts against `max_tokens`.
std::string model_input(const TrainingSample& sample, std::size_t max_tokens);

/// Input text for the given task with an optional appended conditioning
/// string. Shared by training-sample rendering and inference.
std::string compose_input(TaskTag task, std::string_view context,
                          const std::optional<std::string>& db_token,
                          std::string_view conditioning, std::size_t max_tokens);

}  // namespace tod
