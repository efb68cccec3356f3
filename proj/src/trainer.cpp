#include "todkit/trainer.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>

#include <json.hpp>

#include "todkit/error.hpp"
#include "todkit/random.hpp"

namespace tod {

void TrainerConfig::validate() const {
  if (batch_size == 0) throw ArgumentError("batch_size must be positive");
  if (!(lr > 0.0)) throw ArgumentError("lr must be positive");
  if (max_tokens < 16) throw ArgumentError("max_tokens must be at least 16");
  if (checkpoint_interval > 0 && checkpoint_dir.empty()) {
    throw ArgumentError("checkpoint_interval needs a checkpoint_dir");
  }
}

TrainerConfig full_scale_trainer_config() {
  TrainerConfig c;
  c.max_epochs = 10;
  c.batch_size = 128;
  c.lr = 5e-5;
  c.max_tokens = 1024;
  return c;
}

std::span<const std::size_t> EpochPlan::batch(std::size_t b) const {
  if (b >= batch_count()) throw RangeError("batch index out of range");
  return std::span<const std::size_t>(order).subspan(boundaries[b], boundaries[b + 1] - boundaries[b]);
}

EpochPlan plan_epoch(const SampleSet& samples, const TrainerConfig& config, std::size_t epoch) {
  if (samples.empty()) throw ArgumentError("cannot plan an epoch over an empty sample set");
  if (config.batch_size == 0) throw ArgumentError("batch_size must be positive");
  EpochPlan plan;
  plan.order.resize(samples.size());
  std::iota(plan.order.begin(), plan.order.end(), std::size_t{0});
  Rng rng(mix_seed(config.seed, epoch));
  rng.shuffle(plan.order);
  for (std::size_t b = 0; b < samples.size(); b += config.batch_size) plan.boundaries.push_back(b);
  plan.boundaries.push_back(samples.size());
  return plan;
}

void write_history(const TrainHistory& history, std::ostream& out) {
  for (const auto& r : history) {
    out << nlohmann::json{{"epoch", r.epoch}, {"mean_loss", r.mean_loss}, {"duration", r.duration_seconds}}.dump()
        << '\n';
  }
}

TrainHistory train(Seq2SeqModel& model, const SampleSet& samples, const TrainerConfig& config,
                   const TrainCallbacks& callbacks) {
  config.validate();
  if (config.max_tokens != model.limits().max_input_tokens) {
    throw ArgumentError("trainer max_tokens " + std::to_string(config.max_tokens) +
                        " differs from the model input limit " + std::to_string(model.limits().max_input_tokens));
  }
  TrainHistory history;
  if (config.max_epochs == 0) return history;
  if (samples.empty()) throw ArgumentError("cannot train on an empty sample set");

  std::vector<TrainingSample> batch;
  for (std::size_t e = 0; e < config.max_epochs; ++e) {
    const std::size_t epoch = model.epochs_completed;
    const auto start = std::chrono::steady_clock::now();
    const auto plan = plan_epoch(samples, config, epoch);
    double weighted = 0.0;
    for (std::size_t b = 0; b < plan.batch_count(); ++b) {
      batch.clear();
      for (auto i : plan.batch(b)) batch.push_back(samples.samples[i]);
      double loss = 0.0;
      try {
        loss = model.train_step(batch, config.lr, config.adam);
      } catch (const TrainingError& err) {
        throw TrainingError("epoch " + std::to_string(epoch) + " batch " + std::to_string(b) + ": " + err.what());
      }
      weighted += loss * static_cast<double>(batch.size());
      if (callbacks.on_batch) callbacks.on_batch(epoch, b, loss);
    }
    EpochRecord record;
    record.epoch = epoch;
    record.mean_loss = weighted / static_cast<double>(samples.size());
    record.duration_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    model.epochs_completed = epoch + 1;
    model.last_epoch_loss = record.mean_loss;
    history.push_back(record);

    if (config.checkpoint_interval > 0 && (e + 1) % config.checkpoint_interval == 0) {
      std::filesystem::create_directories(config.checkpoint_dir);
      model.save(config.checkpoint_dir / ("epoch-" + std::to_string(epoch + 1) + ".ckpt"));
    }
    if (callbacks.on_epoch) callbacks.on_epoch(record, model);
  }
  return history;
}

std::vector<std::string> missing_special_tokens(const Tokenizer& tokenizer, const SampleSet& samples,
                                                std::size_t max_tokens) {
  std::set<std::string> missing;
  auto scan = [&](const std::string& text) {
    for (const auto& tok : split_tokens(text)) {
      if (is_bracket_token(tok) && !tokenizer.contains(tok)) missing.insert(tok);
    }
  };
  for (const auto& s : samples.samples) {
    scan(model_input(s, max_tokens));
    scan(s.target);
  }
  return {missing.begin(), missing.end()};
}

TrainedModel fine_tune(Seq2SeqModel model, const SampleSet& samples, const TrainerConfig& config,
                       const TrainCallbacks& callbacks) {
  auto missing = missing_special_tokens(model.tokenizer(), samples, model.limits().max_input_tokens);
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size() && i < 10; ++i) list += (i ? ", " : "") + missing[i];
    throw CheckpointError("checkpoint vocabulary lacks " + std::to_string(missing.size()) +
                          " special token(s) used by the new samples: " + list);
  }
  auto history = train(model, samples, config, callbacks);
  return TrainedModel{std::move(model), std::move(history)};
}

TrainedModel fine_tune(const std::filesystem::path& checkpoint, const SampleSet& samples,
                       const TrainerConfig& config, const TrainCallbacks& callbacks) {
  return fine_tune(Seq2SeqModel::load(checkpoint), samples, config, callbacks);
}

Tokenizer build_vocabulary(const SampleSet& samples, std::size_t max_tokens) {
  std::vector<std::string> texts;
  texts.reserve(samples.size() * 2);
  for (const auto& s : samples.samples) {
    texts.push_back(model_input(s, max_tokens));
    texts.push_back(s.target);
  }
  return Tokenizer::build(texts);
}

Seq2SeqModel make_model(const SampleSet& samples, TransformerConfig config, ModelLimits limits) {
  return Seq2SeqModel(build_vocabulary(samples, limits.max_input_tokens), config, limits);
}

DevLossSelector::DevLossSelector(const SampleSet& dev, std::filesystem::path path)
    : dev_(dev), path_(std::move(path)), best_(std::numeric_limits<double>::infinity()) {
  if (dev_.empty()) throw ArgumentError("dev set is empty");
}

void DevLossSelector::operator()(const EpochRecord& record, const Seq2SeqModel& model) {
  const double loss = model.loss(dev_.samples);
  if (loss < best_) {
    best_ = loss;
    best_epoch_ = record.epoch;
    model.save(path_);
  }
}

}  // namespace tod
