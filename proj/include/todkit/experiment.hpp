#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "todkit/backend.hpp"
#include "todkit/corpus.hpp"
#include "todkit/db.hpp"
#include "todkit/evaluation.hpp"
#include "todkit/orchestrator.hpp"
#include "todkit/trainer.hpp"

namespace tod {

/// Multi-task samples from several corpora; each corpus contributes the
/// requested tasks it is annotated for. The mode decides DB tokens and
/// cascaded conditioning.
SampleSet assemble_samples(const std::vector<Corpus>& corpora, const EntityDB* db, const PipelineMode& mode,
                           const std::set<TaskTag>& tasks = {kAllTasks.begin(), kAllTasks.end()});

/// Runs the pipeline over every session of `corpus` (and NLU over its
/// intent-annotated turns) and scores the result.
EvalReport evaluate(const GenerationBackend& backend, const Corpus& corpus, const EntityDB* db,
                    const PipelineMode& mode, const PipelineOptions& options = {});

struct LowResourceConfig {
  std::vector<double> fractions = {0.01, 0.05, 0.10, 0.20};
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  TrainerConfig trainer;
  TransformerConfig model;
  ModelLimits limits;
  PipelineMode mode;
  /// Fine-tune from this checkpoint instead of a fresh model.
  std::optional<std::filesystem::path> init_checkpoint;
};

struct LowResourceRun {
  double fraction = 0.0;
  std::uint64_t seed = 0;
  std::size_t sessions = 0;
  EvalReport report;
};

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single run
};

MetricSummary summarize(const std::vector<double>& values);

struct LowResourceCell {
  double fraction = 0.0;
  std::size_t runs = 0;
  std::map<std::string, MetricSummary> metrics;  // inform, success, bleu, combined, jga, intent
};

struct LowResourceReport {
  std::vector<LowResourceRun> runs;
  std::vector<LowResourceCell> cells;

  void write_records(std::ostream& out) const;
  void write_table(std::ostream& out) const;
};

std::vector<LowResourceCell> summarize_runs(const std::vector<LowResourceRun>& runs);

/// For each fraction and seed: subsample `train_corpus` by session, train
/// (or fine-tune), evaluate on `test_corpus`.
LowResourceReport run_low_resource(const Corpus& train_corpus, const Corpus& test_corpus, const EntityDB* db,
                                   const LowResourceConfig& config);

}  // namespace tod
