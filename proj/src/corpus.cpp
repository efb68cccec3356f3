#include "todkit/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "todkit/error.hpp"
#include "todkit/random.hpp"
#include "todkit/synthetic.hpp"

namespace tod {

using nlohmann::json;

bool AnnotationMask::covers(const std::set<TaskTag>& requested) const {
  return std::includes(tasks.begin(), tasks.end(), requested.begin(), requested.end());
}

std::string AnnotationMask::to_string() const {
  std::string out;
  for (auto t : tasks) {
    if (!out.empty()) out += ',';
    out += tod::to_string(t);
  }
  return out;
}

AnnotationMask AnnotationMask::parse(std::string_view csv) {
  AnnotationMask m;
  std::size_t start = 0;
  while (start <= csv.size()) {
    auto end = csv.find(',', start);
    if (end == std::string_view::npos) end = csv.size();
    auto item = normalize_whitespace(csv.substr(start, end - start));
    if (!item.empty()) m.tasks.insert(parse_task(item));
    start = end + 1;
  }
  if (m.tasks.empty()) throw ArgumentError("annotation mask must not be empty");
  return m;
}

AnnotationMask AnnotationMask::all() { return AnnotationMask{{kAllTasks.begin(), kAllTasks.end()}}; }

std::set<std::string> Corpus::domains() const {
  std::set<std::string> out;
  for (const auto& s : sessions) {
    for (const auto& u : s.utterances) {
      if (u.belief_state) {
        for (const auto& [d, _] : u.belief_state->entries) out.insert(d);
      }
      if (u.dialogue_act) {
        for (const auto& [d, _] : u.dialogue_act->entries) out.insert(d);
      }
    }
  }
  return out;
}

void Corpus::validate() const {
  if (mask.tasks.empty()) throw ValidationError("corpus '" + corpus_id + "' has an empty mask");
  for (const auto& s : sessions) {
    s.validate();
    for (std::size_t i = 0; i < s.utterances.size(); ++i) {
      const auto& u = s.utterances[i];
      auto check = [&](bool present, TaskTag t, const char* what) {
        if (present && !mask.has(t)) {
          throw ValidationError("session '" + s.session_id + "' turn " + std::to_string(i) + " carries " +
                                what + " but mask lacks " + std::string(tod::to_string(t)));
        }
      };
      check(u.intent.has_value(), TaskTag::NLU, "an intent");
      check(u.belief_state.has_value(), TaskTag::DST, "a belief state");
      check(u.dialogue_act.has_value(), TaskTag::POL, "a dialogue act");
      check(u.delex_response.has_value(), TaskTag::NLG, "a delexicalized response");
    }
  }
}

void SampleSet::add(TrainingSample s) {
  ++counts[s.task];
  samples.push_back(std::move(s));
}

void SampleSet::append(const SampleSet& other) {
  for (const auto& s : other.samples) add(s);
}

// ---------------------------------------------------------------------------
// Canonical format

namespace {

json state_to_json(const BeliefState& s) {
  json j = json::object();
  for (const auto& [d, slots] : s.entries) j[d] = slots;
  return j;
}

json act_to_json(const DialogueAct& a) {
  json j = json::object();
  for (const auto& [d, acts] : a.entries) {
    json dj = json::object();
    for (const auto& [type, slots] : acts) dj[type] = std::vector<std::string>(slots.begin(), slots.end());
    j[d] = dj;
  }
  return j;
}

BeliefState state_from_json(const json& j) {
  BeliefState s;
  for (auto it = j.begin(); it != j.end(); ++it) {
    s.entries[it.key()] = it.value().get<std::map<std::string, std::string>>();
  }
  return s;
}

DialogueAct act_from_json(const json& j) {
  DialogueAct a;
  for (auto dom = j.begin(); dom != j.end(); ++dom) {
    auto& acts = a.entries[dom.key()];
    if (!dom.value().is_object()) throw ValidationError("dialogue act domain must map act types to slots");
    for (auto type = dom.value().begin(); type != dom.value().end(); ++type) {
      auto slots = type.value().get<std::vector<std::string>>();
      acts[type.key()].insert(slots.begin(), slots.end());
    }
  }
  return a;
}

json session_to_json(const Corpus& c, const DialogueSession& s) {
  json turns = json::array();
  for (const auto& u : s.utterances) {
    json t{{"speaker", std::string(to_string(u.speaker))}, {"text", u.text}};
    if (u.belief_state) t["belief_state"] = state_to_json(*u.belief_state);
    if (u.dialogue_act) t["dialogue_act"] = act_to_json(*u.dialogue_act);
    if (u.intent) t["intent"] = *u.intent;
    if (u.delex_response) t["delex_response"] = *u.delex_response;
    turns.push_back(std::move(t));
  }
  std::vector<std::string> mask;
  for (auto t : c.mask.tasks) mask.emplace_back(to_string(t));
  return json{{"session_id", s.session_id}, {"corpus_id", c.corpus_id}, {"mask", mask}, {"turns", turns}};
}

void reject_unknown(const json& obj, std::initializer_list<std::string_view> known, const std::string& where,
                    std::size_t line) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      throw SchemaError("unknown field '" + it.key() + "' in " + where, line);
    }
  }
}

DialogueSession session_from_json(const json& rec, std::size_t line) {
  DialogueSession s;
  s.session_id = rec.at("session_id").get<std::string>();
  const auto& turns = rec.at("turns");
  if (!turns.is_array()) throw SchemaError("'turns' must be an array", line);
  for (std::size_t i = 0; i < turns.size(); ++i) {
    const auto& t = turns[i];
    const std::string where = "session '" + s.session_id + "' turn " + std::to_string(i);
    if (!t.is_object()) throw SchemaError(where + " is not an object", line);
    reject_unknown(t, {"speaker", "text", "belief_state", "dialogue_act", "intent", "delex_response"}, where,
                   line);
    Utterance u;
    auto speaker = t.at("speaker").get<std::string>();
    if (speaker == "user") {
      u.speaker = Speaker::user;
    } else if (speaker == "system") {
      u.speaker = Speaker::system;
    } else {
      throw SchemaError(where + ": unknown speaker '" + speaker + "'", line);
    }
    u.text = t.at("text").get<std::string>();
    u.turn_index = i;
    if (t.contains("belief_state")) u.belief_state = state_from_json(t["belief_state"]);
    if (t.contains("dialogue_act")) u.dialogue_act = act_from_json(t["dialogue_act"]);
    if (t.contains("intent")) u.intent = t["intent"].get<std::string>();
    if (t.contains("delex_response")) u.delex_response = t["delex_response"].get<std::string>();
    s.utterances.push_back(std::move(u));
  }
  return s;
}

}  // namespace

Corpus read_canonical(std::istream& in, std::string_view name) {
  Corpus corpus;
  bool first = true;
  std::string line;
  std::size_t lineno = 0;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++lineno;
    if (normalize_whitespace(line).empty()) continue;
    try {
      auto rec = json::parse(line);
      if (!rec.is_object()) throw SchemaError("record must be an object", lineno);
      reject_unknown(rec, {"session_id", "turns", "corpus_id", "mask"}, "session record", lineno);
      auto corpus_id = rec.at("corpus_id").get<std::string>();
      AnnotationMask mask;
      for (const auto& m : rec.at("mask")) mask.tasks.insert(parse_task(m.get<std::string>()));
      if (first) {
        corpus.corpus_id = corpus_id;
        corpus.mask = mask;
        first = false;
      } else if (corpus_id != corpus.corpus_id || !(mask == corpus.mask)) {
        throw SchemaError("corpus_id/mask differ from the first record", lineno);
      }
      auto session = session_from_json(rec, lineno);
      if (!ids.insert(session.session_id).second) {
        throw SchemaError("duplicate session_id '" + session.session_id + "'", lineno);
      }
      Corpus one{corpus.corpus_id, corpus.mask, {session}};
      one.validate();
      corpus.sessions.push_back(std::move(session));
    } catch (const SchemaError&) {
      throw;
    } catch (const std::exception& e) {
      throw SchemaError(std::string(name) + ": " + e.what(), lineno);
    }
  }
  return corpus;
}

void write_canonical(const Corpus& corpus, std::ostream& out) {
  for (const auto& s : corpus.sessions) out << session_to_json(corpus, s).dump() << '\n';
}

std::string to_canonical_string(const Corpus& corpus) {
  std::ostringstream os;
  write_canonical(corpus, os);
  return os.str();
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write corpus file " + path.string());
  write_canonical(corpus, out);
}

std::uint64_t corpus_digest(const Corpus& corpus) { return fnv1a(to_canonical_string(corpus)); }

// ---------------------------------------------------------------------------
// Adapters

namespace {

std::string option(const AdapterOptions& o, const std::string& key, const std::string& fallback) {
  auto it = o.find(key);
  return it == o.end() ? fallback : it->second;
}

std::uint64_t option_u64(const AdapterOptions& o, const std::string& key, std::uint64_t fallback) {
  auto it = o.find(key);
  if (it == o.end()) return fallback;
  try {
    std::size_t pos = 0;
    auto v = std::stoull(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw ArgumentError("option '" + key + "' expects an integer, got '" + it->second + "'");
  }
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return in;
}

Corpus load_canonical_file(const std::filesystem::path& path, const AdapterOptions&) {
  auto in = open_input(path);
  return read_canonical(in, path.string());
}

// "utterance<TAB>intent" per line: single-turn NLU sessions.
Corpus load_intent_tsv(const std::filesystem::path& path, const AdapterOptions& opts) {
  auto in = open_input(path);
  Corpus c;
  c.corpus_id = option(opts, "corpus_id", path.stem().string());
  c.mask.tasks = {TaskTag::NLU};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (normalize_whitespace(line).empty()) continue;
    auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw SchemaError("expected 'text<TAB>intent'", lineno);
    auto intent = normalize_intent(line.substr(tab + 1));
    if (!is_valid_intent(intent)) throw SchemaError("invalid intent '" + intent + "'", lineno);
    DialogueSession s;
    s.session_id = c.corpus_id + "-" + std::to_string(lineno);
    Utterance u;
    u.text = normalize_whitespace(line.substr(0, tab));
    u.intent = intent;
    s.utterances.push_back(std::move(u));
    try {
      s.validate();
    } catch (const ValidationError& e) {
      throw SchemaError(e.what(), lineno);
    }
    c.sessions.push_back(std::move(s));
  }
  return c;
}

// {"id": ..., "turns": ["user", "system", ...]} per line: response-only data.
Corpus load_raw_dialogue(const std::filesystem::path& path, const AdapterOptions& opts) {
  auto in = open_input(path);
  Corpus c;
  c.corpus_id = option(opts, "corpus_id", path.stem().string());
  c.mask.tasks = {TaskTag::NLG};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (normalize_whitespace(line).empty()) continue;
    try {
      auto rec = json::parse(line);
      reject_unknown(rec, {"id", "turns"}, "raw dialogue", lineno);
      DialogueSession s;
      s.session_id = rec.at("id").get<std::string>();
      auto turns = rec.at("turns").get<std::vector<std::string>>();
      for (std::size_t i = 0; i < turns.size(); ++i) {
        Utterance u;
        u.speaker = i % 2 == 0 ? Speaker::user : Speaker::system;
        u.text = normalize_whitespace(turns[i]);
        u.turn_index = i;
        if (u.speaker == Speaker::system) u.delex_response = u.text;
        s.utterances.push_back(std::move(u));
      }
      s.validate();
      c.sessions.push_back(std::move(s));
    } catch (const SchemaError&) {
      throw;
    } catch (const std::exception& e) {
      throw SchemaError(e.what(), lineno);
    }
  }
  return c;
}

}  // namespace

SyntheticConfig synthetic_config(const AdapterOptions& opts) {
  static const std::set<std::string> known = {"seed", "sessions", "entities", "max_domains", "corpus_id", "mask", "domains"};
  for (const auto& [key, _] : opts) {
    if (!known.count(key)) throw ArgumentError("unknown synthetic option '" + key + "'");
  }
  SyntheticConfig cfg;
  cfg.seed = option_u64(opts, "seed", cfg.seed);
  cfg.sessions = option_u64(opts, "sessions", cfg.sessions);
  cfg.entities_per_domain = option_u64(opts, "entities", cfg.entities_per_domain);
  cfg.max_domains_per_session = option_u64(opts, "max_domains", cfg.max_domains_per_session);
  cfg.corpus_id = option(opts, "corpus_id", cfg.corpus_id);
  if (auto it = opts.find("mask"); it != opts.end()) cfg.mask = AnnotationMask::parse(it->second);
  if (auto it = opts.find("domains"); it != opts.end()) {
    cfg.domains.clear();
    std::stringstream ss(it->second);
    std::string d;
    while (std::getline(ss, d, ',')) {
      if (!d.empty()) cfg.domains.push_back(d);
    }
  }
  return cfg;
}

namespace {

Corpus load_synthetic(const std::filesystem::path&, const AdapterOptions& opts) {
  return generate_synthetic(synthetic_config(opts)).corpus;
}

}  // namespace

AdapterRegistry::AdapterRegistry() {
  add({"canonical",
       "one JSON object per line: {session_id, corpus_id, mask, turns:[{speaker, text, belief_state?, "
       "dialogue_act?, intent?, delex_response?}]}",
       load_canonical_file});
  add({"intent-tsv", "one 'utterance<TAB>intent' pair per line; yields single-turn NLU sessions",
       load_intent_tsv});
  add({"raw-dialogue",
       "one JSON object per line: {id, turns:[text, ...]} alternating user/system; yields NLG-only sessions",
       load_raw_dialogue});
  add({"synthetic",
       "no input file; options seed, sessions, entities, domains, max_domains, mask, corpus_id",
       load_synthetic});
}

AdapterRegistry& AdapterRegistry::instance() {
  static AdapterRegistry registry;
  return registry;
}

void AdapterRegistry::add(AdapterInfo info) {
  auto id = info.id;
  adapters_[id] = std::move(info);
}

const AdapterInfo& AdapterRegistry::get(const std::string& id) const {
  auto it = adapters_.find(id);
  if (it == adapters_.end()) throw ArgumentError("unknown adapter '" + id + "'");
  return it->second;
}

std::vector<std::string> AdapterRegistry::ids() const {
  std::vector<std::string> out;
  for (const auto& [id, _] : adapters_) out.push_back(id);
  return out;
}

Corpus load_corpus(const std::filesystem::path& path, const std::string& adapter_id,
                   const AdapterOptions& options) {
  auto corpus = AdapterRegistry::instance().get(adapter_id).load(path, options);
  corpus.validate();
  return corpus;
}

// ---------------------------------------------------------------------------
// Samples

SampleSet to_training_samples(const Corpus& corpus, const std::set<TaskTag>& tasks,
                              const SampleOptions& options) {
  if (!corpus.mask.covers(tasks)) {
    std::string missing;
    for (auto t : tasks) {
      if (!corpus.mask.has(t)) missing += std::string(missing.empty() ? "" : ",") + std::string(to_string(t));
    }
    throw CapabilityError("corpus '" + corpus.corpus_id + "' (mask " + corpus.mask.to_string() +
                          ") is not annotated for " + missing);
  }
  SampleSet out;
  if (tasks.empty()) return out;

  for (const auto& session : corpus.sessions) {
    BeliefState previous;
    std::string domain;
    for (std::size_t k = 0; k < session.utterances.size(); ++k) {
      const auto& u = session.utterances[k];
      if (u.speaker != Speaker::user) continue;
      const Utterance* reply = k + 1 < session.utterances.size() ? &session.utterances[k + 1] : nullptr;
      const auto context = render_context(session, k);

      std::optional<std::string> token;
      if (options.db != nullptr && u.belief_state && !options.db->domains().empty()) {
        domain = active_domain(*options.db, previous, *u.belief_state, domain);
        token = query(*options.db, *u.belief_state, domain).db_state.token;
      }
      const std::string state_text = u.belief_state ? serialize_state(*u.belief_state) : std::string();

      auto make = [&](TaskTag task, std::string target) {
        TrainingSample s;
        s.task = task;
        s.context = context;
        s.target = std::move(target);
        s.source = corpus.corpus_id;
        if (task == TaskTag::POL || task == TaskTag::NLG) s.db_token = token;
        return s;
      };

      if (tasks.count(TaskTag::NLU) && u.intent) out.add(make(TaskTag::NLU, serialize_intent(*u.intent)));
      if (tasks.count(TaskTag::DST) && u.belief_state) out.add(make(TaskTag::DST, state_text));
      if (tasks.count(TaskTag::POL) && reply && reply->dialogue_act) {
        auto s = make(TaskTag::POL, serialize_act(*reply->dialogue_act));
        if (options.cascaded) s.conditioning = state_text;
        out.add(std::move(s));
      }
      if (tasks.count(TaskTag::NLG) && reply && reply->delex_response) {
        auto s = make(TaskTag::NLG, normalize_whitespace(*reply->delex_response));
        if (options.cascaded) {
          std::string act_text = reply->dialogue_act ? serialize_act(*reply->dialogue_act) : std::string();
          s.conditioning = normalize_whitespace(state_text + " " + act_text);
        }
        out.add(std::move(s));
      }
      if (u.belief_state) previous = *u.belief_state;
    }
  }
  return out;
}

std::size_t subsample_size(std::size_t sessions, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ArgumentError("fraction must lie in (0, 1], got " + std::to_string(fraction));
  }
  const double x = fraction * static_cast<double>(sessions);
  const double r = std::round(x);
  // Absorb representation error such as 0.07 * 100 = 7.000000000000001.
  return static_cast<std::size_t>(std::abs(x - r) < 1e-9 ? r : std::ceil(x));
}

Corpus subsample(const Corpus& corpus, double fraction, std::uint64_t seed) {
  const std::size_t n = corpus.sessions.size();
  const std::size_t k = subsample_size(n, fraction);
  if (k == 0) throw ArgumentError("subsample of corpus '" + corpus.corpus_id + "' selects no sessions");

  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());

  Corpus out{corpus.corpus_id, corpus.mask, {}};
  out.sessions.reserve(k);
  for (auto i : idx) out.sessions.push_back(corpus.sessions[i]);
  return out;
}

}  // namespace tod
