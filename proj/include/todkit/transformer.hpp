#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace tod {

struct TransformerConfig {
  int vocab_size = 0;
  int encoder_layers = 2;
  int decoder_layers = 2;
  int heads = 4;
  int width = 128;
  int ff_width = 512;
  int max_positions = 256;
  std::uint64_t seed = 0;

  /// Throws ArgumentError for non-positive sizes or width % heads != 0.
  void validate() const;
  friend bool operator==(const TransformerConfig&, const TransformerConfig&) = default;
};

/// Contiguous slice of the flat parameter vector holding a rows x cols
/// column-major matrix.
struct Block {
  std::size_t offset = 0;
  int rows = 0;
  int cols = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

struct LinearBlocks {
  Block weight;  // in x out
  Block bias;    // 1 x out
};

struct NormBlocks {
  Block gain;
  Block shift;
};

struct AttentionBlocks {
  LinearBlocks query, key, value, output;
};

struct FeedForwardBlocks {
  LinearBlocks in, out;
};

struct EncoderLayerBlocks {
  NormBlocks norm1;
  AttentionBlocks self;
  NormBlocks norm2;
  FeedForwardBlocks ffn;
};

struct DecoderLayerBlocks {
  NormBlocks norm1;
  AttentionBlocks self;
  NormBlocks norm2;
  AttentionBlocks cross;
  NormBlocks norm3;
  FeedForwardBlocks ffn;
};

struct TransformerLayout {
  Block token_embedding;     // vocab x width, shared by encoder and decoder
  Block position_embedding;  // max_positions x width, shared
  std::vector<EncoderLayerBlocks> encoder;
  NormBlocks encoder_norm;
  std::vector<DecoderLayerBlocks> decoder;
  NormBlocks decoder_norm;
  LinearBlocks output;  // width x vocab
  std::size_t total = 0;
};

/// Pre-norm encoder-decoder with learned positions and GELU feed-forward
/// blocks. All parameters live in one flat double vector; gradients use the
/// same layout.
class Transformer {
 public:
  Transformer() = default;
  explicit Transformer(const TransformerConfig& config);

  const TransformerConfig& config() const { return config_; }
  const TransformerLayout& layout() const { return layout_; }

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }
  std::size_t parameter_count() const { return params_.size(); }

  /// Token-summed NLL of `target_out` given `source` and the teacher-forced
  /// `target_in`. When `grad` is non-null the gradient is accumulated into it
  /// (it must have parameter_count() entries).
  double sequence_loss(std::span<const int> source, std::span<const int> target_in,
                       std::span<const int> target_out, std::span<double> grad = {}) const;

  /// Greedy decoding. Returned ids exclude bos and the terminating eos.
  std::vector<int> greedy(std::span<const int> source, int bos, int eos, std::size_t max_tokens) const;

  /// Output logits (rows = target positions) for teacher-forced `target_in`.
  std::vector<std::vector<double>> logits(std::span<const int> source, std::span<const int> target_in) const;

 private:
  TransformerConfig config_;
  TransformerLayout layout_;
  std::vector<double> params_;
};

}  // namespace tod
