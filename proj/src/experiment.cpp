#include "todkit/experiment.hpp"

#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "todkit/error.hpp"

namespace tod {

SampleSet assemble_samples(const std::vector<Corpus>& corpora, const EntityDB* db, const PipelineMode& mode,
                           const std::set<TaskTag>& tasks) {
  SampleOptions opts;
  opts.db = mode.use_db ? db : nullptr;
  opts.cascaded = mode.mode == GenerationMode::cascaded;
  SampleSet out;
  for (const auto& c : corpora) {
    std::set<TaskTag> usable;
    for (auto t : tasks) {
      if (c.mask.has(t)) usable.insert(t);
    }
    out.append(to_training_samples(c, usable, opts));
  }
  return out;
}

EvalReport evaluate(const GenerationBackend& backend, const Corpus& corpus, const EntityDB* db,
                    const PipelineMode& mode, const PipelineOptions& options) {
  EvalReport report;
  report.label = mode.label();
  report.sessions = corpus.sessions.size();

  std::vector<SessionPrediction> predictions;
  std::map<std::string, GoalSpec> goals;
  std::vector<BeliefState> pred_states, gold_states;
  std::vector<std::string> hyps, refs;
  std::size_t parse_warnings = 0, empty_states = 0, empty_responses = 0;

  const bool run_pipeline = corpus.mask.has(TaskTag::DST) || corpus.mask.has(TaskTag::NLG) ||
                            corpus.mask.has(TaskTag::POL);
  for (const auto& session : corpus.sessions) {
    if (!run_pipeline) break;
    auto result = run_session(backend, session, db, mode, options);
    for (std::size_t t = 0; t < result.turns.size(); ++t) {
      const auto& turn = result.turns[t];
      const auto k = result.user_turns[t];
      const auto& u = session.utterances[k];
      ++report.turns;
      if (!turn.warnings.empty()) ++parse_warnings;
      if (u.belief_state) {
        pred_states.push_back(turn.state);
        gold_states.push_back(*u.belief_state);
        if (normalize_whitespace(turn.state_text).empty()) ++empty_states;
      }
      if (k + 1 < session.utterances.size() && session.utterances[k + 1].delex_response) {
        hyps.push_back(turn.delex_response);
        refs.push_back(normalize_whitespace(*session.utterances[k + 1].delex_response));
        if (turn.delex_response.empty()) ++empty_responses;
      }
    }
    predictions.push_back(to_prediction(result));
    if (db != nullptr) goals[session.session_id] = derive_goal(session, *db);
  }

  if (!gold_states.empty()) {
    report.jga = joint_goal_accuracy(pred_states, gold_states);
  } else {
    report.warnings.push_back("no belief-state annotations; JGA not measured");
  }
  report.responses = hyps.size();
  if (!hyps.empty()) {
    report.bleu = bleu(hyps, refs);
  } else {
    report.warnings.push_back("no reference responses; BLEU not measured");
  }
  if (db != nullptr && !predictions.empty()) {
    auto is = inform_success(predictions, goals, *db);
    report.inform = is.inform;
    report.success = is.success;
  } else {
    report.warnings.push_back("no database or sessions; Inform/Success not measured");
  }
  if (parse_warnings > 0) {
    report.warnings.push_back(std::to_string(parse_warnings) + " turn(s) with unparseable belief state");
  }
  if (empty_states > 0) report.warnings.push_back(std::to_string(empty_states) + " empty belief-state output(s)");
  if (empty_responses > 0) report.warnings.push_back(std::to_string(empty_responses) + " empty response output(s)");

  if (corpus.mask.has(TaskTag::NLU)) {
    std::vector<std::string> pred, gold;
    std::set<std::string> known;
    for (const auto& session : corpus.sessions) {
      for (std::size_t k = 0; k < session.utterances.size(); ++k) {
        const auto& u = session.utterances[k];
        if (u.speaker != Speaker::user || !u.intent) continue;
        const auto input = compose_input(TaskTag::NLU, render_context(session, k), std::nullopt, "",
                                         options.max_input_tokens);
        pred.push_back(backend.generate(GenerationRequest{input, options.max_output_tokens}).output);
        gold.push_back(*u.intent);
        known.insert(normalize_intent(*u.intent));
      }
    }
    report.intents = gold.size();
    if (!gold.empty()) report.intent_accuracy = intent_accuracy(pred, gold, known);
  }
  report.finalize();
  return report;
}

MetricSummary summarize(const std::vector<double>& values) {
  MetricSummary s;
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(sq / (n - 1.0));
  }
  return s;
}

std::vector<LowResourceCell> summarize_runs(const std::vector<LowResourceRun>& runs) {
  std::vector<LowResourceCell> cells;
  std::vector<double> fractions;
  for (const auto& r : runs) {
    if (std::find(fractions.begin(), fractions.end(), r.fraction) == fractions.end()) fractions.push_back(r.fraction);
  }
  for (double f : fractions) {
    LowResourceCell cell;
    cell.fraction = f;
    std::map<std::string, std::vector<double>> values;
    for (const auto& r : runs) {
      if (r.fraction != f) continue;
      ++cell.runs;
      values["inform"].push_back(r.report.inform);
      values["success"].push_back(r.report.success);
      values["bleu"].push_back(r.report.bleu);
      values["combined"].push_back(r.report.combined);
      values["jga"].push_back(r.report.jga);
      if (r.report.intent_accuracy) values["intent"].push_back(*r.report.intent_accuracy);
    }
    for (const auto& [name, v] : values) cell.metrics[name] = summarize(v);
    cells.push_back(std::move(cell));
  }
  return cells;
}

LowResourceReport run_low_resource(const Corpus& train_corpus, const Corpus& test_corpus, const EntityDB* db,
                                   const LowResourceConfig& config) {
  if (config.fractions.empty() || config.seeds.empty()) throw ArgumentError("lowres needs fractions and seeds");
  LowResourceReport report;
  for (double fraction : config.fractions) {
    for (auto seed : config.seeds) {
      const auto subset = subsample(train_corpus, fraction, seed);
      const auto samples = assemble_samples({subset}, db, config.mode);
      auto trainer = config.trainer;
      trainer.seed = seed;
      auto model = config.init_checkpoint ? Seq2SeqModel::load(*config.init_checkpoint) : [&] {
        auto m = config.model;
        m.seed = seed;
        return make_model(samples, m, config.limits);
      }();
      auto trained = fine_tune(std::move(model), samples, trainer);
      ReferenceBackend backend(trained.model);
      PipelineOptions po{trained.model.limits().max_input_tokens, trained.model.limits().max_target_tokens};
      LowResourceRun run;
      run.fraction = fraction;
      run.seed = seed;
      run.sessions = subset.sessions.size();
      run.report = evaluate(backend, test_corpus, db, config.mode, po);
      report.runs.push_back(std::move(run));
    }
  }
  report.cells = summarize_runs(report.runs);
  return report;
}

void LowResourceReport::write_records(std::ostream& out) const {
  for (const auto& r : runs) {
    out << nlohmann::json{{"kind", "run"},
                          {"fraction", r.fraction},
                          {"seed", r.seed},
                          {"sessions", r.sessions},
                          {"report", nlohmann::json::parse(r.report.to_json())}}
               .dump()
        << '\n';
  }
  for (const auto& c : cells) {
    nlohmann::json metrics;
    for (const auto& [name, s] : c.metrics) metrics[name] = {{"mean", s.mean}, {"std", s.std}};
    out << nlohmann::json{{"kind", "cell"}, {"fraction", c.fraction}, {"runs", c.runs}, {"metrics", metrics}}.dump()
        << '\n';
  }
}

void LowResourceReport::write_table(std::ostream& out) const {
  static const char* names[] = {"inform", "success", "bleu", "combined", "jga"};
  out << std::left << std::setw(10) << "fraction" << std::right << std::setw(6) << "runs";
  for (const char* n : names) out << std::setw(18) << n;
  out << '\n' << std::fixed;
  for (const auto& c : cells) {
    out << std::left << std::setw(10) << std::setprecision(2) << c.fraction * 100.0 << std::right << std::setw(6)
        << c.runs;
    for (const char* n : names) {
      auto it = c.metrics.find(n);
      std::ostringstream cell;
      cell << std::fixed << std::setprecision(std::string(n) == "jga" ? 3 : 2);
      if (it != c.metrics.end()) cell << it->second.mean << " +- " << it->second.std;
      out << std::setw(18) << cell.str();
    }
    out << '\n';
  }
  out << std::defaultfloat;
}

}  // namespace tod
