#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "todkit/corpus.hpp"
#include "todkit/db.hpp"

namespace tod {

struct SyntheticConfig {
  std::uint64_t seed = 7;
  std::size_t sessions = 50;
  std::vector<std::string> domains = {"restaurant", "hotel", "attraction"};
  std::size_t entities_per_domain = 12;
  /// At most this many domains are visited per session.
  std::size_t max_domains_per_session = 2;
  AnnotationMask mask = AnnotationMask::all();
  std::string corpus_id = "synthetic";
};

struct SyntheticData {
  Corpus corpus;
  EntityDB db;
};

/// Seeded template grammar over a paired entity database. System turns carry
/// the lexicalized text and its delexicalized form; annotations outside the
/// mask are omitted. Deterministic in the config.
SyntheticData generate_synthetic(const SyntheticConfig& config);

/// The database alone, as generated for `config`.
EntityDB synthetic_db(const SyntheticConfig& config);

std::vector<std::string> synthetic_domain_names();

/// Config from adapter options (seed, sessions, entities, domains,
/// max_domains, mask, corpus_id). Throws ArgumentError on unknown keys.
SyntheticConfig synthetic_config(const AdapterOptions& options);

}  // namespace tod
