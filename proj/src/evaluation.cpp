#include "todkit/evaluation.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>

#include <json.hpp>

#include "todkit/error.hpp"

namespace tod {

namespace {

using Gram = std::vector<std::string>;

std::map<Gram, std::size_t> ngrams(const std::vector<std::string>& tokens, std::size_t n) {
  std::map<Gram, std::size_t> out;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) ++out[Gram(tokens.begin() + i, tokens.begin() + i + n)];
  return out;
}

}  // namespace

double bleu(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references) {
  if (hypotheses.size() != references.size()) throw ArgumentError("bleu needs one reference per hypothesis");
  if (hypotheses.empty()) throw ArgumentError("bleu needs at least one pair");
  std::size_t matches[4] = {0, 0, 0, 0};
  std::size_t totals[4] = {0, 0, 0, 0};
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
  for (std::size_t k = 0; k < hypotheses.size(); ++k) {
    const auto hyp = split_tokens(hypotheses[k]);
    const auto ref = split_tokens(references[k]);
    hyp_len += hyp.size();
    ref_len += ref.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto h = ngrams(hyp, n);
      const auto r = ngrams(ref, n);
      for (const auto& [gram, count] : h) {
        auto it = r.find(gram);
        if (it != r.end()) matches[n - 1] += std::min(count, it->second);
      }
      if (hyp.size() >= n) totals[n - 1] += hyp.size() - n + 1;
    }
  }
  if (hyp_len == 0 || matches[0] == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    const double p = matches[n] > 0 ? static_cast<double>(matches[n]) / static_cast<double>(totals[n])
                                     : 1.0 / (static_cast<double>(totals[n]) + 1.0);
    log_sum += std::log(p);
  }
  const double c = static_cast<double>(hyp_len);
  const double r = static_cast<double>(ref_len);
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return 100.0 * bp * std::exp(log_sum / 4.0);
}

double combined(double inform, double success, double bleu) { return (inform + success) * 0.5 + bleu; }

GoalSpec derive_goal(const DialogueSession& session, const EntityDB& db, const DelexOntology& ontology) {
  GoalSpec goal;
  const BeliefState* final_state = nullptr;
  BeliefState previous;
  std::string domain;
  for (std::size_t k = 0; k < session.utterances.size(); ++k) {
    const auto& u = session.utterances[k];
    if (u.speaker == Speaker::user) {
      if (u.belief_state) {
        final_state = &*u.belief_state;
        if (!db.domains().empty()) domain = active_domain(db, previous, *u.belief_state, domain);
        previous = *u.belief_state;
      }
      continue;
    }
    if (!u.delex_response || domain.empty()) continue;
    for (const auto& tok : split_tokens(*u.delex_response)) {
      auto slot = ontology.slot(tok);
      if (slot && requestable_slots().count(*slot)) goal.domains[domain].requested.insert(*slot);
    }
  }
  if (final_state != nullptr) {
    for (const auto& [d, slots] : final_state->entries) {
      if (!db.has_domain(d)) continue;
      const auto& informable = db.table(d).informable;
      auto& g = goal.domains[d];
      for (const auto& [slot, value] : slots) {
        if (value == kDontCare) continue;
        if (std::find(informable.begin(), informable.end(), slot) == informable.end()) continue;
        g.constraints[slot] = value;
      }
    }
  }
  return goal;
}

SessionPrediction to_prediction(const SessionResult& result) {
  SessionPrediction p;
  p.session_id = result.session_id;
  if (!result.turns.empty()) p.final_state = result.turns.back().state;
  for (const auto& t : result.turns) {
    p.delex_responses.push_back(t.delex_response);
    p.responses.push_back(t.response);
  }
  return p;
}

namespace {

bool contains_token(const std::string& text, const std::string& needle) {
  if (needle.empty()) return false;
  const auto hay = " " + normalize_value(text) + " ";
  return hay.find(" " + normalize_value(needle) + " ") != std::string::npos;
}

}  // namespace

InformSuccess inform_success(const std::vector<SessionPrediction>& predictions,
                             const std::map<std::string, GoalSpec>& goals, const EntityDB& db,
                             const DelexOntology& ontology) {
  InformSuccess out;
  if (predictions.empty()) return out;
  std::size_t informed = 0;
  std::size_t succeeded = 0;
  for (const auto& p : predictions) {
    auto it = goals.find(p.session_id);
    if (it == goals.end()) throw ArgumentError("no goal for session '" + p.session_id + "'");
    bool inform_ok = true;
    bool success_ok = true;
    for (const auto& [domain, goal] : it->second.domains) {
      const auto result = query(db, p.final_state, domain);
      const Entity* offered = result.offered();
      if (offered == nullptr) {
        inform_ok = false;
        break;
      }
      for (const auto& [slot, value] : goal.constraints) {
        auto f = offered->find(slot);
        if (f == offered->end() || normalize_value(f->second) != normalize_value(value)) inform_ok = false;
      }
      for (const auto& slot : goal.requested) {
        const auto ph = ontology.placeholder(slot);
        auto v = offered->find(slot);
        bool found = false;
        for (const auto& r : p.delex_responses) found = found || (ph && contains_token(r, *ph));
        for (const auto& r : p.responses) found = found || (v != offered->end() && contains_token(r, v->second));
        if (!found) success_ok = false;
      }
    }
    if (inform_ok) {
      ++informed;
      if (success_ok) ++succeeded;
    }
  }
  const double n = static_cast<double>(predictions.size());
  out.inform = 100.0 * static_cast<double>(informed) / n;
  out.success = 100.0 * static_cast<double>(succeeded) / n;
  return out;
}

BeliefState normalize_state(const BeliefState& state) {
  BeliefState out;
  for (const auto& [domain, slots] : state.entries) {
    for (const auto& [slot, value] : slots) {
      const auto v = normalize_value(value);
      if (!v.empty()) out.entries[normalize_value(domain)][normalize_value(slot)] = v;
    }
  }
  return out;
}

double joint_goal_accuracy(const std::vector<BeliefState>& predicted, const std::vector<BeliefState>& gold) {
  if (predicted.size() != gold.size()) {
    throw ArgumentError("joint goal accuracy over misaligned turns (" + std::to_string(predicted.size()) + " vs " +
                        std::to_string(gold.size()) + ")");
  }
  if (gold.empty()) return 0.0;
  std::size_t exact = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (normalize_state(predicted[i]).entries == normalize_state(gold[i]).entries) ++exact;
  }
  return static_cast<double>(exact) / static_cast<double>(gold.size());
}

double intent_accuracy(const std::vector<std::string>& predicted, const std::vector<std::string>& gold,
                       const std::set<std::string>& known) {
  if (predicted.size() != gold.size()) throw ArgumentError("intent accuracy over misaligned lists");
  if (gold.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto p = normalize_intent(predicted[i]);
    if (!known.empty() && !known.count(p)) continue;
    if (p == normalize_intent(gold[i])) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(gold.size());
}

void EvalReport::finalize() { combined = tod::combined(inform, success, bleu); }

std::string EvalReport::to_json() const {
  nlohmann::json j{{"label", label},         {"inform", inform},       {"success", success},
                   {"bleu", bleu},           {"combined", combined},   {"jga", jga},
                   {"sessions", sessions},   {"turns", turns},         {"responses", responses},
                   {"intents", intents},     {"warnings", warnings}};
  j["intent_accuracy"] = intent_accuracy ? nlohmann::json(*intent_accuracy) : nlohmann::json(nullptr);
  return j.dump();
}

void EvalReport::write_table_header(std::ostream& out) {
  out << std::left << std::setw(24) << "model" << std::right << std::setw(9) << "Inform" << std::setw(9) << "Success"
      << std::setw(9) << "BLEU" << std::setw(10) << "Combined" << std::setw(8) << "JGA" << std::setw(8) << "Intent"
      << '\n';
}

void EvalReport::write_table_row(std::ostream& out) const {
  out << std::fixed << std::setprecision(2) << std::left << std::setw(24) << label << std::right << std::setw(9)
      << inform << std::setw(9) << success << std::setw(9) << bleu << std::setw(10) << combined << std::setw(8)
      << std::setprecision(3) << jga << std::setw(8);
  if (intent_accuracy) {
    out << *intent_accuracy;
  } else {
    out << "-";
  }
  out << '\n' << std::defaultfloat;
}

}  // namespace tod
