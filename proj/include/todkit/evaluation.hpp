#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "todkit/db.hpp"
#include "todkit/dialogue.hpp"
#include "todkit/orchestrator.hpp"
#include "todkit/state_codec.hpp"

namespace tod {

/// Corpus BLEU-4 on a 0-100 scale, one reference per hypothesis, whitespace
/// tokens. Zero counts for n >= 2 are smoothed to 1 / (total + 1); no
/// unigram match scores 0. Throws ArgumentError on length mismatch or no
/// pairs.
double bleu(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references);

/// (inform + success) / 2 + bleu
double combined(double inform, double success, double bleu);

inline const std::set<std::string>& requestable_slots() {
  static const std::set<std::string> slots = {"address", "phone", "postcode", "reference"};
  return slots;
}

struct DomainGoal {
  std::map<std::string, std::string> constraints;
  std::set<std::string> requested;
  friend bool operator==(const DomainGoal&, const DomainGoal&) = default;
};

struct GoalSpec {
  std::map<std::string, DomainGoal> domains;
  friend bool operator==(const GoalSpec&, const GoalSpec&) = default;
};

/// Goal implied by a gold session: informable constraints of the final
/// belief state (excluding "don't care") per db domain, and the requestable
/// slots whose placeholders occur in gold system responses, attributed to
/// the domain active at that turn.
GoalSpec derive_goal(const DialogueSession& session, const EntityDB& db, const DelexOntology& ontology = {});

struct SessionPrediction {
  std::string session_id;
  BeliefState final_state;
  /// Generated responses, delexicalized and lexicalized.
  std::vector<std::string> delex_responses;
  std::vector<std::string> responses;
};

SessionPrediction to_prediction(const SessionResult& result);

struct InformSuccess {
  double inform = 0.0;
  double success = 0.0;
};

/// A session is informed when, for every goal domain, the first entity
/// matching the final predicted state satisfies every goal constraint; it
/// is successful when informed and every requested slot occurs as a
/// placeholder or as the offered entity's value in some response.
/// Percentages over sessions; throws ArgumentError for a missing goal.
InformSuccess inform_success(const std::vector<SessionPrediction>& predictions,
                             const std::map<std::string, GoalSpec>& goals, const EntityDB& db,
                             const DelexOntology& ontology = {});

/// Values lowercased and whitespace-normalized; domains left empty dropped.
BeliefState normalize_state(const BeliefState& state);

/// Fraction of turns whose normalized states are equal. Throws
/// ArgumentError on misaligned sequences; 0 for none.
double joint_goal_accuracy(const std::vector<BeliefState>& predicted, const std::vector<BeliefState>& gold);

/// Exact-match fraction after intent normalization. With a non-empty
/// `known`, predictions outside it count as wrong.
double intent_accuracy(const std::vector<std::string>& predicted, const std::vector<std::string>& gold,
                       const std::set<std::string>& known = {});

struct EvalReport {
  std::string label;
  double inform = 0.0;
  double success = 0.0;
  double bleu = 0.0;
  double combined = 0.0;
  double jga = 0.0;
  std::optional<double> intent_accuracy;
  std::size_t sessions = 0;
  std::size_t turns = 0;
  std::size_t responses = 0;
  std::size_t intents = 0;
  std::vector<std::string> warnings;

  /// Recomputes combined from this report's own fields.
  void finalize();
  std::string to_json() const;
  static void write_table_header(std::ostream& out);
  void write_table_row(std::ostream& out) const;
};

}  // namespace tod
