#include "todkit/synthetic.hpp"

#include <algorithm>
#include <set>

#include "todkit/error.hpp"
#include "todkit/random.hpp"

namespace tod {
namespace {

struct SlotSpec {
  std::string name;
  std::vector<std::string> values;
  std::string ask;     // "what <ask> would you like ?"
  std::string phrase;  // user phrase, "{}" replaced by the value
};

struct DomainSpec {
  std::string name;
  std::string noun;
  std::vector<SlotSpec> informable;
  std::vector<std::string> first_names, second_names;
  std::string offer;  // delexicalized offer sentence
};

const std::vector<DomainSpec>& domain_specs() {
  static const std::vector<DomainSpec> specs = {
      {"restaurant",
       "restaurant",
       {{"area", {"centre", "north", "south", "east", "west"}, "area", "in the {} of town"},
        {"food", {"indian", "chinese", "italian", "british", "thai", "french", "korean"}, "type of food",
         "serving {} food"},
        {"pricerange", {"cheap", "moderate", "expensive"}, "price range", "in the {} price range"}},
       {"curry", "golden", "river", "royal", "little", "saffron", "lotus", "bella", "old", "green"},
       {"garden", "wok", "house", "kitchen", "palace", "table", "bistro", "grill"},
       "[value_name] is a [value_price] [value_food] restaurant in the [value_area] ."},
      {"hotel",
       "hotel",
       {{"area", {"centre", "north", "south", "east", "west"}, "area", "in the {}"},
        {"pricerange", {"cheap", "moderate", "expensive"}, "price range", "with {} prices"},
        {"stars", {"2", "3", "4", "5"}, "star rating", "with {} stars"},
        {"type", {"hotel", "guesthouse"}, "kind of place", "that is a {}"}},
       {"gonville", "acorn", "ashley", "lensfield", "alpha", "city", "bridge", "carolina", "avalon"},
       {"hotel", "lodge", "inn", "rooms"},
       "[value_name] is a [value_stars] star [value_type] in the [value_area] with [value_price] prices ."},
      {"attraction",
       "attraction",
       {{"area", {"centre", "north", "south", "east", "west"}, "area", "in the {}"},
        {"type", {"museum", "park", "college", "theatre", "gallery"}, "type of attraction", "that is a {}"}},
       {"fitzwilliam", "whipple", "botanic", "scott", "corpus", "abbey", "mill", "byard", "castle"},
       {"museum", "gardens", "hall", "college", "playhouse"},
       "[value_name] is a [value_type] in the [value_area] ."},
  };
  return specs;
}

const DomainSpec& spec_for(const std::string& name) {
  for (const auto& s : domain_specs()) {
    if (s.name == name) return s;
  }
  throw ArgumentError("unknown synthetic domain '" + name + "'");
}

const std::vector<std::string> kRequestable = {"phone", "address", "postcode"};
const std::vector<std::string> kStreets = {"regent", "mill", "trumpington", "hills", "castle", "king"};

std::string fill(const std::string& pattern, const std::string& value) {
  auto pos = pattern.find("{}");
  return pattern.substr(0, pos) + value + pattern.substr(pos + 2);
}

std::string join_and(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out += " and ";
    out += parts[i];
  }
  return out;
}

std::vector<Entity> make_entities(const DomainSpec& spec, std::size_t count, Rng& rng) {
  std::vector<std::string> names;
  for (const auto& a : spec.first_names) {
    for (const auto& b : spec.second_names) names.push_back(a + " " + b);
  }
  rng.shuffle(names);
  if (count > names.size()) count = names.size();
  std::vector<Entity> out;
  for (std::size_t i = 0; i < count; ++i) {
    Entity e;
    e["name"] = names[i];
    for (const auto& slot : spec.informable) e[slot.name] = rng.pick(slot.values);
    std::string phone = "01223";
    for (int d = 0; d < 6; ++d) phone += static_cast<char>('0' + rng.below(10));
    e["phone"] = phone;
    e["address"] = std::to_string(1 + rng.below(99)) + " " + rng.pick(kStreets) + " street";
    e["postcode"] = "cb" + std::to_string(1 + rng.below(5)) + std::to_string(rng.below(10)) +
                    static_cast<char>('a' + rng.below(26)) + static_cast<char>('a' + rng.below(26));
    out.push_back(std::move(e));
  }
  return out;
}

const SlotSpec& slot_spec(const DomainSpec& spec, const std::string& slot) {
  for (const auto& s : spec.informable) {
    if (s.name == slot) return s;
  }
  throw ArgumentError("unknown slot " + slot);
}

struct SessionBuilder {
  const SyntheticConfig& cfg;
  const EntityDB& db;
  DialogueSession session;

  void user(const std::string& text, const BeliefState& state, const std::string& intent) {
    Utterance u;
    u.speaker = Speaker::user;
    u.text = text;
    u.turn_index = session.utterances.size();
    if (cfg.mask.has(TaskTag::DST)) u.belief_state = state;
    if (cfg.mask.has(TaskTag::NLU)) u.intent = intent;
    session.utterances.push_back(std::move(u));
  }

  void system(const std::string& delex, const DialogueAct& act, const QueryResult* q) {
    Utterance u;
    u.speaker = Speaker::system;
    if (q != nullptr) {
      u.text = lexicalize(delex, q->matches, q->db_state).text;
    } else {
      u.text = delex;
    }
    u.turn_index = session.utterances.size();
    if (cfg.mask.has(TaskTag::POL)) u.dialogue_act = act;
    if (cfg.mask.has(TaskTag::NLG)) u.delex_response = delex;
    session.utterances.push_back(std::move(u));
  }
};

}  // namespace

std::vector<std::string> synthetic_domain_names() {
  std::vector<std::string> out;
  for (const auto& s : domain_specs()) out.push_back(s.name);
  return out;
}

EntityDB synthetic_db(const SyntheticConfig& config) {
  Rng rng(mix_seed(config.seed, 0xdb));
  EntityDB db;
  for (const auto& d : config.domains) {
    const auto& spec = spec_for(d);
    std::vector<std::string> informable;
    for (const auto& s : spec.informable) informable.push_back(s.name);
    db.add_domain(spec.name, informable, make_entities(spec, config.entities_per_domain, rng));
  }
  return db;
}

SyntheticData generate_synthetic(const SyntheticConfig& config) {
  if (config.domains.empty()) throw ArgumentError("synthetic generator needs at least one domain");
  if (config.mask.tasks.empty()) throw ArgumentError("synthetic generator needs a non-empty mask");
  if (config.entities_per_domain == 0) throw ArgumentError("entities_per_domain must be positive");

  SyntheticData data;
  data.db = synthetic_db(config);
  data.corpus.corpus_id = config.corpus_id;
  data.corpus.mask = config.mask;

  Rng rng(mix_seed(config.seed, 0x5e55));
  const std::size_t width = std::max<std::size_t>(1, std::to_string(config.sessions).size());
  for (std::size_t n = 0; n < config.sessions; ++n) {
    SessionBuilder b{config, data.db, {}};
    auto id = std::to_string(n);
    b.session.session_id = config.corpus_id + "-" + std::string(width - id.size(), '0') + id;

    std::vector<std::string> domains = config.domains;
    rng.shuffle(domains);
    std::size_t visit = 1 + rng.below(std::min(config.max_domains_per_session, domains.size()));
    domains.resize(std::max<std::size_t>(1, visit));

    BeliefState state;
    for (std::size_t di = 0; di < domains.size(); ++di) {
      const auto& spec = spec_for(domains[di]);
      const auto& table = data.db.table(spec.name);
      const Entity& target = rng.pick(table.entities);

      std::vector<std::string> slots;
      for (const auto& s : spec.informable) slots.push_back(s.name);
      rng.shuffle(slots);
      std::size_t n_constraints = std::min<std::size_t>(slots.size(), 2 + rng.below(2));
      std::vector<std::string> constraints(slots.begin(), slots.begin() + static_cast<long>(n_constraints));
      std::vector<std::string> spare(slots.begin() + static_cast<long>(n_constraints), slots.end());
      std::size_t initial = 1 + rng.below(n_constraints - 1 == 0 ? 1 : n_constraints - 1);
      if (n_constraints == 1) initial = 1;

      std::vector<std::string> requests = kRequestable;
      rng.shuffle(requests);
      requests.resize(rng.below(3));
      std::sort(requests.begin(), requests.end());

      // User states the first constraints.
      std::vector<std::string> phrases;
      for (std::size_t i = 0; i < initial; ++i) {
        const auto& c = constraints[i];
        state.set(spec.name, c, target.at(c));
        phrases.push_back(fill(slot_spec(spec, c).phrase, target.at(c)));
      }
      std::string opener = di == 0 ? "i am looking for a " : "i also need a ";
      b.user(opener + spec.noun + " " + join_and(phrases) + " .", state, "find_" + spec.name);

      if (initial < constraints.size()) {
        auto q = query(data.db, state, spec.name);
        const auto& ask = slot_spec(spec, constraints[initial]);
        DialogueAct act;
        act.add(spec.name, "inform", {"choice"});
        act.add(spec.name, "request", {ask.name});
        b.system("i found [value_choice] " + spec.noun + "s for you . what " + ask.ask + " would you like ?", act,
                 &q);

        phrases.clear();
        for (std::size_t i = initial; i < constraints.size(); ++i) {
          const auto& c = constraints[i];
          state.set(spec.name, c, target.at(c));
          phrases.push_back(fill(slot_spec(spec, c).phrase, target.at(c)));
        }
        std::string text = "i would like it " + join_and(phrases);
        if (!spare.empty() && rng.chance(0.3)) {
          const auto& dc = slot_spec(spec, spare.front());
          state.set(spec.name, dc.name, std::string(kDontCare));
          text += " , i don't care about the " + dc.ask;
        }
        b.user(text + " .", state, "inform_constraints");
      }

      auto q = query(data.db, state, spec.name);
      DialogueAct offer;
      std::vector<std::string> offer_slots = {"name"};
      for (const auto& s : spec.informable) offer_slots.push_back(s.name);
      offer.add(spec.name, "inform", offer_slots);
      b.system(spec.offer, offer, &q);

      if (!requests.empty()) {
        b.user("can i get the " + join_and(requests) + " please ?", state, "request_info");
        std::vector<std::string> parts;
        for (const auto& r : requests) parts.push_back("the " + r + " is [value_" + r + "]");
        DialogueAct act;
        act.add(spec.name, "inform", requests);
        b.system(join_and(parts) + " .", act, &q);
      }
    }
    b.user("thank you , that is all i need .", state, "goodbye");
    DialogueAct bye;
    bye.add("general", "bye");
    b.system("you are welcome . goodbye .", bye, nullptr);

    b.session.validate();
    data.corpus.sessions.push_back(std::move(b.session));
  }
  data.corpus.validate();
  return data;
}

}  // namespace tod
