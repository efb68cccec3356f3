#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "todkit/dialogue.hpp"
#include "todkit/tokenizer.hpp"
#include "todkit/transformer.hpp"

namespace tod {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 1.0;
};

struct AdamState {
  std::vector<double> m, v;
  std::uint64_t step = 0;
};

/// One Adam step. With lr == 0 the moments advance but parameters are not
/// touched.
void adam_update(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
                 const AdamConfig& config = {});

struct ModelLimits {
  std::size_t max_input_tokens = 256;
  std::size_t max_target_tokens = 64;
  friend bool operator==(const ModelLimits&, const ModelLimits&) = default;
};

struct GenerationRequest {
  std::string input;
  std::size_t max_tokens = 64;
};

struct GenerationResult {
  std::string output;
  std::size_t token_count = 0;
  std::chrono::nanoseconds duration{0};
};

struct EncodedSample {
  std::vector<int> source, target_in, target_out;
};

/// The reference text-to-text model: vocabulary, transformer parameters and
/// the optimizer state that travels with a checkpoint.
class Seq2SeqModel {
 public:
  /// `config.vocab_size` is overwritten with the tokenizer size.
  Seq2SeqModel(Tokenizer tokenizer, TransformerConfig config, ModelLimits limits = {});

  const Tokenizer& tokenizer() const { return tokenizer_; }
  const Transformer& network() const { return net_; }
  Transformer& network() { return net_; }
  const ModelLimits& limits() const { return limits_; }
  AdamState& optimizer() { return adam_; }
  const AdamState& optimizer() const { return adam_; }

  std::size_t epochs_completed = 0;
  double last_epoch_loss = 0.0;

  EncodedSample encode(const TrainingSample& sample) const;

  /// Mean over the batch of token-summed NLL (targets include eos).
  double loss(std::span<const TrainingSample> batch) const;
  /// Same value; `grad` receives the gradient of the mean.
  double loss_and_grad(std::span<const TrainingSample> batch, std::vector<double>& grad) const;

  /// Loss before the update. Throws TrainingError on a non-finite loss or
  /// non-finite parameters after the step.
  double train_step(std::span<const TrainingSample> batch, double lr, const AdamConfig& adam = {});

  /// Greedy decoding; safe to call concurrently.
  GenerationResult generate(const GenerationRequest& request) const;

  void save(const std::filesystem::path& path) const;
  static Seq2SeqModel load(const std::filesystem::path& path);

 private:
  Tokenizer tokenizer_;
  Transformer net_;
  ModelLimits limits_;
  AdamState adam_;
};

/// Tiny model sizes used for verification.
TransformerConfig tiny_config(int vocab_size, std::uint64_t seed = 0);

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
};

/// Central finite differences against the analytic gradient on a random
/// two-sequence batch at a random subset of at least 200 coordinates
/// (all of them when the model is smaller). Requires <= 1e4 parameters and
/// epsilon in [1e-6, 1e-3].
GradientCheckResult gradient_check(const TransformerConfig& config, double epsilon, std::uint64_t seed = 0);

}  // namespace tod
