#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "todkit/corpus.hpp"
#include "todkit/seq2seq.hpp"

namespace tod {

struct TrainerConfig {
  std::size_t max_epochs = 10;
  std::size_t batch_size = 16;
  double lr = 3e-4;
  /// Input budget; must equal the model's max_input_tokens.
  std::size_t max_tokens = 256;
  std::uint64_t seed = 0;
  /// Save a checkpoint every N epochs into checkpoint_dir; 0 disables.
  std::size_t checkpoint_interval = 0;
  std::filesystem::path checkpoint_dir;
  AdamConfig adam;

  /// Throws ArgumentError.
  void validate() const;
};

/// Full-scale values (batch 128, lr 5e-5, 1024 tokens, 10 epochs).
TrainerConfig full_scale_trainer_config();

struct EpochPlan {
  std::vector<std::size_t> order;
  /// Batch b is order[boundaries[b], boundaries[b + 1]).
  std::vector<std::size_t> boundaries;

  std::size_t batch_count() const { return boundaries.empty() ? 0 : boundaries.size() - 1; }
  std::span<const std::size_t> batch(std::size_t b) const;
};

/// Seeded uniform shuffle of every sample regardless of task, then
/// contiguous batches. `epoch` is the global epoch index.
EpochPlan plan_epoch(const SampleSet& samples, const TrainerConfig& config, std::size_t epoch);

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double duration_seconds = 0.0;
};

using TrainHistory = std::vector<EpochRecord>;

/// One JSON object per line: {epoch, mean_loss, duration}.
void write_history(const TrainHistory& history, std::ostream& out);

struct TrainCallbacks {
  std::function<void(std::size_t epoch, std::size_t batch, double loss)> on_batch;
  std::function<void(const EpochRecord&, const Seq2SeqModel&)> on_epoch;
};

/// Runs max_epochs epochs of plan_epoch + train_step. Epoch indices continue
/// from model.epochs_completed so resumed runs see fresh shuffles.
TrainHistory train(Seq2SeqModel& model, const SampleSet& samples, const TrainerConfig& config,
                   const TrainCallbacks& callbacks = {});

/// Bracket tokens used by the samples that the vocabulary lacks.
std::vector<std::string> missing_special_tokens(const Tokenizer& tokenizer, const SampleSet& samples,
                                                std::size_t max_tokens);

struct TrainedModel {
  Seq2SeqModel model;
  TrainHistory history;
};

/// train() starting from a checkpoint. Throws CheckpointError when the
/// checkpoint vocabulary lacks bracket tokens the new samples use.
TrainedModel fine_tune(const std::filesystem::path& checkpoint, const SampleSet& samples,
                       const TrainerConfig& config, const TrainCallbacks& callbacks = {});
TrainedModel fine_tune(Seq2SeqModel model, const SampleSet& samples, const TrainerConfig& config,
                       const TrainCallbacks& callbacks = {});

/// Vocabulary over every model input and target of `samples`.
Tokenizer build_vocabulary(const SampleSet& samples, std::size_t max_tokens);

/// Fresh model whose vocabulary is built from `samples`.
Seq2SeqModel make_model(const SampleSet& samples, TransformerConfig config, ModelLimits limits);

/// Keeps the checkpoint with the lowest dev loss seen so far.
class DevLossSelector {
 public:
  DevLossSelector(const SampleSet& dev, std::filesystem::path path);

  void operator()(const EpochRecord& record, const Seq2SeqModel& model);

  double best_loss() const { return best_; }
  std::size_t best_epoch() const { return best_epoch_; }

 private:
  const SampleSet& dev_;
  std::filesystem::path path_;
  double best_;
  std::size_t best_epoch_ = 0;
};

}  // namespace tod
