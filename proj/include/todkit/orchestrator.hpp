#pragma once

#include <chrono>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "todkit/backend.hpp"
#include "todkit/db.hpp"
#include "todkit/dialogue.hpp"
#include "todkit/state_codec.hpp"

namespace tod {

enum class GenerationMode { plug_and_play, cascaded };
enum class HistorySource { generated, gold };

std::string_view to_string(GenerationMode m);
std::string_view to_string(HistorySource h);
/// "pnp" | "plug_and_play" | "cascaded"; throws ArgumentError.
GenerationMode parse_generation_mode(std::string_view text);
HistorySource parse_history_source(std::string_view text);

struct PipelineMode {
  GenerationMode mode = GenerationMode::plug_and_play;
  bool use_db = true;
  HistorySource history = HistorySource::generated;

  std::string label() const;  // e.g. "pnp+db"
  friend bool operator==(const PipelineMode&, const PipelineMode&) = default;
};

/// The four generation-mode x DB cells.
std::vector<PipelineMode> ablation_cells();

struct PipelineOptions {
  std::size_t max_input_tokens = 256;
  std::size_t max_output_tokens = 64;
};

/// What carries over between turns of one dialogue.
struct TurnMemory {
  BeliefState previous_state;
  std::string domain;
};

using Duration = std::chrono::nanoseconds;

struct TurnResult {
  std::string state_text;
  BeliefState state;
  std::optional<DBState> db_state;
  std::optional<Entity> offered;
  std::string act_text;
  std::string delex_response;
  std::string response;
  std::vector<std::string> warnings;
  /// Exact model inputs per task.
  std::map<TaskTag, std::string> inputs;
  std::map<TaskTag, Duration> call_durations;
  Duration total{0};
};

/// DST, POL and NLG from decoupled prompts. Without DB all three run
/// concurrently; with DB, DST runs first and POL/NLG follow concurrently
/// with the DB token injected. `db` is required when mode.use_db and is
/// otherwise only used for lexicalization.
TurnResult run_plug_and_play(const GenerationBackend& backend, std::string_view context, const EntityDB* db,
                             const PipelineMode& mode, TurnMemory& memory, const PipelineOptions& options = {});

/// DST, then POL conditioned on the generated state, then NLG conditioned
/// on state and act.
TurnResult run_cascaded(const GenerationBackend& backend, std::string_view context, const EntityDB* db,
                        const PipelineMode& mode, TurnMemory& memory, const PipelineOptions& options = {});

TurnResult run_turn(const GenerationBackend& backend, std::string_view context, const EntityDB* db,
                    const PipelineMode& mode, TurnMemory& memory, const PipelineOptions& options = {});

struct SessionResult {
  std::string session_id;
  /// Utterance index of each user turn, aligned with `turns`.
  std::vector<std::size_t> user_turns;
  std::vector<TurnResult> turns;
};

/// Runs every user turn. Generated history feeds the model's own lexicalized
/// responses back into the context; gold history uses the recorded ones.
SessionResult run_session(const GenerationBackend& backend, const DialogueSession& session, const EntityDB* db,
                          const PipelineMode& mode, const PipelineOptions& options = {});

struct ModeLatency {
  PipelineMode mode;
  std::size_t turns = 0;
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double p95_ms = 0.0;
  double speedup = 1.0;
};

struct LatencyReport {
  std::string baseline;
  std::size_t repetitions = 0;
  std::vector<ModeLatency> modes;

  /// One JSON record per mode.
  void write_records(std::ostream& out) const;
  void write_table(std::ostream& out) const;
};

/// Per-turn end-to-end latency over `repetitions` passes of every session.
/// Speedup is baseline mean / mode mean; the baseline must be one of
/// `modes`, and defaults to the first. Throws ArgumentError when
/// repetitions < 3.
LatencyReport benchmark_latency(const GenerationBackend& backend, const std::vector<DialogueSession>& sessions,
                                const EntityDB* db, const std::vector<PipelineMode>& modes, std::size_t repetitions,
                                std::optional<PipelineMode> baseline = std::nullopt,
                                const PipelineOptions& options = {});

}  // namespace tod
