#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "todkit/db.hpp"
#include "todkit/dialogue.hpp"

namespace tod {

/// Which tasks a corpus is annotated for. Never empty once validated.
struct AnnotationMask {
  std::set<TaskTag> tasks;

  bool has(TaskTag t) const { return tasks.count(t) != 0; }
  bool covers(const std::set<TaskTag>& requested) const;
  std::string to_string() const;  // "DST,NLG"
  static AnnotationMask parse(std::string_view csv);
  static AnnotationMask all();

  friend bool operator==(const AnnotationMask&, const AnnotationMask&) = default;
};

struct Corpus {
  std::string corpus_id;
  AnnotationMask mask;
  std::vector<DialogueSession> sessions;

  /// Domains mentioned by any state or act annotation.
  std::set<std::string> domains() const;
  /// Throws ValidationError when a session breaks dialogue invariants or
  /// carries an annotation type outside the mask.
  void validate() const;
};

struct SampleSet {
  std::vector<TrainingSample> samples;
  std::map<TaskTag, std::size_t> counts;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  void add(TrainingSample s);
  void append(const SampleSet& other);
};

using AdapterOptions = std::map<std::string, std::string>;
using Adapter = std::function<Corpus(const std::filesystem::path&, const AdapterOptions&)>;

struct AdapterInfo {
  std::string id;
  std::string source_schema;
  Adapter load;
};

/// String-keyed adapter table. "canonical", "intent-tsv", "raw-dialogue" and
/// "synthetic" are always present.
class AdapterRegistry {
 public:
  static AdapterRegistry& instance();
  void add(AdapterInfo info);
  const AdapterInfo& get(const std::string& id) const;
  std::vector<std::string> ids() const;

 private:
  AdapterRegistry();
  std::map<std::string, AdapterInfo> adapters_;
};

Corpus load_corpus(const std::filesystem::path& path, const std::string& adapter_id = "canonical",
                   const AdapterOptions& options = {});

/// Canonical reader/writer. One JSON object per line (sorted keys, compact),
/// so a canonical file re-serializes byte-identically.
Corpus read_canonical(std::istream& in, std::string_view name = "<stream>");
void write_canonical(const Corpus& corpus, std::ostream& out);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
std::string to_canonical_string(const Corpus& corpus);

/// FNV-1a over the canonical serialization.
std::uint64_t corpus_digest(const Corpus& corpus);

struct SampleOptions {
  /// When set, POL/NLG samples carry the DB token retrieved with the gold state.
  const EntityDB* db = nullptr;
  /// Append gold upstream outputs (state; state + act) to POL/NLG inputs.
  bool cascaded = false;
};

/// One sample per (user turn, requested task) whose annotation exists.
/// Throws CapabilityError if a task lies outside the mask.
SampleSet to_training_samples(const Corpus& corpus, const std::set<TaskTag>& tasks,
                              const SampleOptions& options = {});

/// ceil(fraction * N) whole sessions without replacement, in original order.
Corpus subsample(const Corpus& corpus, double fraction, std::uint64_t seed);
std::size_t subsample_size(std::size_t sessions, double fraction);

}  // namespace tod
