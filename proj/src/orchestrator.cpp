#include "todkit/orchestrator.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <iomanip>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "todkit/error.hpp"

namespace tod {

using Clock = std::chrono::steady_clock;

std::string_view to_string(GenerationMode m) { return m == GenerationMode::plug_and_play ? "pnp" : "cascaded"; }
std::string_view to_string(HistorySource h) { return h == HistorySource::generated ? "generated" : "gold"; }

GenerationMode parse_generation_mode(std::string_view text) {
  if (text == "pnp" || text == "plug_and_play" || text == "plug-and-play") return GenerationMode::plug_and_play;
  if (text == "cascaded") return GenerationMode::cascaded;
  throw ArgumentError("unknown generation mode '" + std::string(text) + "' (expected pnp or cascaded)");
}

HistorySource parse_history_source(std::string_view text) {
  if (text == "generated") return HistorySource::generated;
  if (text == "gold") return HistorySource::gold;
  throw ArgumentError("unknown history source '" + std::string(text) + "' (expected generated or gold)");
}

std::string PipelineMode::label() const {
  std::string s(to_string(mode));
  if (use_db) s += "+db";
  if (history == HistorySource::gold) s += "+gold";
  return s;
}

std::vector<PipelineMode> ablation_cells() {
  return {{GenerationMode::cascaded, false, HistorySource::generated},
          {GenerationMode::cascaded, true, HistorySource::generated},
          {GenerationMode::plug_and_play, false, HistorySource::generated},
          {GenerationMode::plug_and_play, true, HistorySource::generated}};
}

namespace {

struct Call {
  std::string output;
  Duration duration{0};
};

Call call(const GenerationBackend& backend, const std::string& input, std::size_t max_tokens) {
  const auto start = Clock::now();
  auto r = backend.generate(GenerationRequest{input, max_tokens});
  return Call{std::move(r.output), Clock::now() - start};
}

// Runs the calls concurrently when the backend allows it.
std::vector<Call> call_all(const GenerationBackend& backend, const std::vector<std::string>& inputs,
                           std::size_t max_tokens) {
  std::vector<Call> out;
  if (!backend.concurrent() || inputs.size() < 2) {
    for (const auto& in : inputs) out.push_back(call(backend, in, max_tokens));
    return out;
  }
  std::vector<std::future<Call>> futures;
  for (const auto& in : inputs) {
    futures.push_back(std::async(std::launch::async, [&backend, &in, max_tokens] { return call(backend, in, max_tokens); }));
  }
  for (auto& f : futures) out.push_back(f.get());
  return out;
}

void check_db(const EntityDB* db, const PipelineMode& mode) {
  if (mode.use_db && db == nullptr) throw ArgumentError("mode " + mode.label() + " needs a database");
}

// Parses the DST output and runs the DB query for it.
struct Grounding {
  std::optional<QueryResult> query;
};

Grounding ground(TurnResult& r, const EntityDB* db, TurnMemory& memory) {
  auto parsed = parse_state(r.state_text);
  r.state = parsed.value;
  Grounding g;
  BeliefState constraints = parsed.value;
  if (!parsed.warnings.empty()) {
    for (auto& w : parsed.warnings) r.warnings.push_back("unparseable belief state: " + w);
    constraints = BeliefState{};
  }
  if (db != nullptr && !db->domains().empty()) {
    memory.domain = active_domain(*db, memory.previous_state, constraints, memory.domain);
    g.query = query(*db, constraints, memory.domain);
    r.db_state = g.query->db_state;
    if (const auto* e = g.query->offered()) r.offered = *e;
  }
  memory.previous_state = r.state;
  return g;
}

void finish(TurnResult& r, const Grounding& g) {
  r.delex_response = r.delex_response.empty() ? std::string() : normalize_whitespace(r.delex_response);
  if (g.query) {
    auto lex = lexicalize(r.delex_response, g.query->matches, g.query->db_state);
    r.response = normalize_whitespace(lex.text);
  } else {
    r.response = r.delex_response;
  }
}

}  // namespace

TurnResult run_plug_and_play(const GenerationBackend& backend, std::string_view context, const EntityDB* db,
                             const PipelineMode& mode, TurnMemory& memory, const PipelineOptions& options) {
  check_db(db, mode);
  TurnResult r;
  const auto start = Clock::now();
  const auto in_budget = options.max_input_tokens;
  r.inputs[TaskTag::DST] = compose_input(TaskTag::DST, context, std::nullopt, "", in_budget);
  Grounding g;
  if (mode.use_db) {
    auto dst = call(backend, r.inputs[TaskTag::DST], options.max_output_tokens);
    r.state_text = dst.output;
    r.call_durations[TaskTag::DST] = dst.duration;
    g = ground(r, db, memory);
    const auto token = g.query ? std::optional<std::string>(g.query->db_state.token) : std::nullopt;
    r.inputs[TaskTag::POL] = compose_input(TaskTag::POL, context, token, "", in_budget);
    r.inputs[TaskTag::NLG] = compose_input(TaskTag::NLG, context, token, "", in_budget);
    auto calls = call_all(backend, {r.inputs[TaskTag::POL], r.inputs[TaskTag::NLG]}, options.max_output_tokens);
    r.act_text = calls[0].output;
    r.call_durations[TaskTag::POL] = calls[0].duration;
    r.delex_response = calls[1].output;
    r.call_durations[TaskTag::NLG] = calls[1].duration;
  } else {
    r.inputs[TaskTag::POL] = compose_input(TaskTag::POL, context, std::nullopt, "", in_budget);
    r.inputs[TaskTag::NLG] = compose_input(TaskTag::NLG, context, std::nullopt, "", in_budget);
    auto calls = call_all(backend, {r.inputs[TaskTag::DST], r.inputs[TaskTag::POL], r.inputs[TaskTag::NLG]},
                          options.max_output_tokens);
    r.state_text = calls[0].output;
    r.act_text = calls[1].output;
    r.delex_response = calls[2].output;
    r.call_durations[TaskTag::DST] = calls[0].duration;
    r.call_durations[TaskTag::POL] = calls[1].duration;
    r.call_durations[TaskTag::NLG] = calls[2].duration;
    g = ground(r, db, memory);
  }
  r.total = Clock::now() - start;
  finish(r, g);
  return r;
}

TurnResult run_cascaded(const GenerationBackend& backend, std::string_view context, const EntityDB* db,
                        const PipelineMode& mode, TurnMemory& memory, const PipelineOptions& options) {
  check_db(db, mode);
  TurnResult r;
  const auto start = Clock::now();
  const auto in_budget = options.max_input_tokens;
  r.inputs[TaskTag::DST] = compose_input(TaskTag::DST, context, std::nullopt, "", in_budget);
  auto dst = call(backend, r.inputs[TaskTag::DST], options.max_output_tokens);
  r.state_text = dst.output;
  r.call_durations[TaskTag::DST] = dst.duration;
  auto g = ground(r, db, memory);
  std::optional<std::string> token;
  if (mode.use_db && g.query) token = g.query->db_state.token;

  r.inputs[TaskTag::POL] = compose_input(TaskTag::POL, context, token, r.state_text, in_budget);
  auto pol = call(backend, r.inputs[TaskTag::POL], options.max_output_tokens);
  r.act_text = pol.output;
  r.call_durations[TaskTag::POL] = pol.duration;

  r.inputs[TaskTag::NLG] =
      compose_input(TaskTag::NLG, context, token, normalize_whitespace(r.state_text + " " + r.act_text), in_budget);
  auto nlg = call(backend, r.inputs[TaskTag::NLG], options.max_output_tokens);
  r.delex_response = nlg.output;
  r.call_durations[TaskTag::NLG] = nlg.duration;
  r.total = Clock::now() - start;
  finish(r, g);
  return r;
}

TurnResult run_turn(const GenerationBackend& backend, std::string_view context, const EntityDB* db,
                    const PipelineMode& mode, TurnMemory& memory, const PipelineOptions& options) {
  return mode.mode == GenerationMode::plug_and_play ? run_plug_and_play(backend, context, db, mode, memory, options)
                                                    : run_cascaded(backend, context, db, mode, memory, options);
}

SessionResult run_session(const GenerationBackend& backend, const DialogueSession& session, const EntityDB* db,
                          const PipelineMode& mode, const PipelineOptions& options) {
  session.validate();
  SessionResult out;
  out.session_id = session.session_id;
  TurnMemory memory;
  std::vector<std::pair<Speaker, std::string>> history;
  for (std::size_t k = 0; k < session.utterances.size(); ++k) {
    const auto& u = session.utterances[k];
    if (u.speaker != Speaker::user) {
      if (mode.history == HistorySource::gold) history.emplace_back(Speaker::system, u.text);
      continue;
    }
    history.emplace_back(Speaker::user, u.text);
    const auto context = render_turns(history);
    auto result = run_turn(backend, context, db, mode, memory, options);
    if (mode.history == HistorySource::generated) {
      const bool has_reply = k + 1 < session.utterances.size();
      if (has_reply) {
        // an empty generation still occupies the turn slot
        history.emplace_back(Speaker::system, result.response.empty() ? std::string("<empty>") : result.response);
      }
    }
    out.user_turns.push_back(k);
    out.turns.push_back(std::move(result));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

double percentile(const std::vector<double>& sorted, double q) {
  const auto n = sorted.size();
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n)));
  rank = std::clamp<std::size_t>(rank, 1, n);
  return sorted[rank - 1];
}

}  // namespace

LatencyReport benchmark_latency(const GenerationBackend& backend, const std::vector<DialogueSession>& sessions,
                                const EntityDB* db, const std::vector<PipelineMode>& modes, std::size_t repetitions,
                                std::optional<PipelineMode> baseline, const PipelineOptions& options) {
  if (repetitions < 3) throw ArgumentError("benchmark needs at least 3 repetitions");
  if (modes.empty()) throw ArgumentError("benchmark needs at least one mode");
  if (sessions.empty()) throw ArgumentError("benchmark needs at least one session");
  const PipelineMode base = baseline.value_or(modes.front());
  if (std::find(modes.begin(), modes.end(), base) == modes.end()) {
    throw ArgumentError("baseline mode " + base.label() + " is not benchmarked");
  }
  LatencyReport report;
  report.baseline = base.label();
  report.repetitions = repetitions;
  for (const auto& mode : modes) {
    std::vector<double> ms;
    for (std::size_t rep = 0; rep < repetitions; ++rep) {
      for (const auto& s : sessions) {
        for (const auto& t : run_session(backend, s, db, mode, options).turns) {
          ms.push_back(std::chrono::duration<double, std::milli>(t.total).count());
        }
      }
    }
    if (ms.empty()) throw ArgumentError("benchmark sessions contain no user turns");
    ModeLatency m;
    m.mode = mode;
    m.turns = ms.size();
    m.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(ms.size());
    std::sort(ms.begin(), ms.end());
    m.median_ms = ms.size() % 2 ? ms[ms.size() / 2] : 0.5 * (ms[ms.size() / 2 - 1] + ms[ms.size() / 2]);
    m.p95_ms = percentile(ms, 0.95);
    report.modes.push_back(m);
  }
  double base_mean = 0.0;
  for (const auto& m : report.modes) {
    if (m.mode == base) base_mean = m.mean_ms;
  }
  for (auto& m : report.modes) {
    m.speedup = m.mode == base ? 1.0 : (m.mean_ms > 0.0 ? base_mean / m.mean_ms : 0.0);
  }
  return report;
}

void LatencyReport::write_records(std::ostream& out) const {
  for (const auto& m : modes) {
    out << nlohmann::json{{"mode", m.mode.label()},
                          {"generation", std::string(to_string(m.mode.mode))},
                          {"use_db", m.mode.use_db},
                          {"turns", m.turns},
                          {"mean_ms", m.mean_ms},
                          {"median_ms", m.median_ms},
                          {"p95_ms", m.p95_ms},
                          {"speedup", m.speedup},
                          {"baseline", baseline}}
               .dump()
        << '\n';
  }
}

void LatencyReport::write_table(std::ostream& out) const {
  out << std::left << std::setw(18) << "mode" << std::right << std::setw(8) << "turns" << std::setw(12) << "mean ms"
      << std::setw(12) << "median ms" << std::setw(12) << "p95 ms" << std::setw(10) << "speedup" << '\n';
  out << std::fixed << std::setprecision(2);
  for (const auto& m : modes) {
    out << std::left << std::setw(18) << m.mode.label() << std::right << std::setw(8) << m.turns << std::setw(12)
        << m.mean_ms << std::setw(12) << m.median_ms << std::setw(12) << m.p95_ms << std::setw(9) << m.speedup
        << "x\n";
  }
  out << std::defaultfloat;
}

}  // namespace tod
