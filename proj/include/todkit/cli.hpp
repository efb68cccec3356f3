#pragma once

#include <exception>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "todkit/backend.hpp"
#include "todkit/db.hpp"
#include "todkit/orchestrator.hpp"

namespace tod::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// 2 for usage and validation failures, 1 for everything else.
int exit_code_for(const std::exception& error);

/// Runs one command line (without the program name). Reports go to `out`,
/// structured logs to `err`.
int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

/// Turn-synchronous chat state behind the REPL.
class ChatSession {
 public:
  ChatSession(const GenerationBackend& backend, const EntityDB* db, PipelineMode mode, PipelineOptions options,
              bool show_timing = false);

  /// Handles one input line; returns false after /quit.
  bool handle(const std::string& line, std::ostream& out);

  std::string context() const;
  const PipelineMode& mode() const { return mode_; }
  const TurnMemory& memory() const { return memory_; }
  const std::optional<TurnResult>& last_turn() const { return last_; }

 private:
  void turn(const std::string& text, std::ostream& out);
  void reset();

  const GenerationBackend& backend_;
  const EntityDB* db_;
  PipelineMode mode_;
  PipelineOptions options_;
  bool show_timing_;
  std::vector<std::pair<Speaker, std::string>> history_;
  TurnMemory memory_;
  std::optional<TurnResult> last_;
};

void run_chat(ChatSession& session, std::istream& in, std::ostream& out);

}  // namespace tod::cli
