#include "todkit/seq2seq.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "todkit/error.hpp"
#include "todkit/random.hpp"

namespace tod {

void adam_update(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
                 const AdamConfig& config) {
  if (grads.size() != params.size()) throw ArgumentError("gradient/parameter size mismatch");
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
    state.step = 0;
  }
  double scale = 1.0;
  if (config.clip_norm > 0.0) {
    double sq = 0.0;
    for (double g : grads) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > config.clip_norm) scale = config.clip_norm / norm;
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i] * scale;
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
  }
  if (lr == 0.0) return;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + config.eps);
  }
}

namespace {

TransformerConfig with_vocab(TransformerConfig c, const Tokenizer& t) {
  c.vocab_size = static_cast<int>(t.size());
  return c;
}

}  // namespace

Seq2SeqModel::Seq2SeqModel(Tokenizer tokenizer, TransformerConfig config, ModelLimits limits)
    : tokenizer_(std::move(tokenizer)), net_(with_vocab(config, tokenizer_)), limits_(limits) {
  const auto positions = static_cast<std::size_t>(net_.config().max_positions);
  if (limits_.max_input_tokens > positions || limits_.max_target_tokens + 1 > positions) {
    throw ArgumentError("model max_positions " + std::to_string(positions) +
                        " is smaller than the configured input/target limits");
  }
  if (limits_.max_input_tokens < 16) throw ArgumentError("max_input_tokens must be at least 16");
  if (limits_.max_target_tokens == 0) throw ArgumentError("max_target_tokens must be positive");
}

EncodedSample Seq2SeqModel::encode(const TrainingSample& sample) const {
  EncodedSample e;
  e.source = tokenizer_.encode(model_input(sample, limits_.max_input_tokens));
  auto target = tokenizer_.encode(sample.target);
  if (target.size() > limits_.max_target_tokens) target.resize(limits_.max_target_tokens);
  e.target_in.push_back(Tokenizer::kBos);
  e.target_in.insert(e.target_in.end(), target.begin(), target.end());
  e.target_out = target;
  e.target_out.push_back(Tokenizer::kEos);
  return e;
}

double Seq2SeqModel::loss(std::span<const TrainingSample> batch) const {
  if (batch.empty()) throw ArgumentError("loss of an empty batch");
  double total = 0.0;
  for (const auto& s : batch) {
    auto e = encode(s);
    total += net_.sequence_loss(e.source, e.target_in, e.target_out);
  }
  return total / static_cast<double>(batch.size());
}

double Seq2SeqModel::loss_and_grad(std::span<const TrainingSample> batch, std::vector<double>& grad) const {
  if (batch.empty()) throw ArgumentError("loss of an empty batch");
  grad.assign(net_.parameter_count(), 0.0);
  double total = 0.0;
  for (const auto& s : batch) {
    auto e = encode(s);
    total += net_.sequence_loss(e.source, e.target_in, e.target_out, grad);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (auto& g : grad) g *= inv;
  return total * inv;
}

double Seq2SeqModel::train_step(std::span<const TrainingSample> batch, double lr, const AdamConfig& adam) {
  if (!(lr >= 0.0)) throw ArgumentError("learning rate must be non-negative");
  std::vector<double> grad;
  const double loss_value = loss_and_grad(batch, grad);
  if (!std::isfinite(loss_value)) {
    throw TrainingError("non-finite loss on a batch of " + std::to_string(batch.size()) +
                        " samples; first target: '" + batch.front().target + "'");
  }
  adam_update(net_.parameters(), grad, adam_, lr, adam);
  for (double p : net_.parameters()) {
    if (!std::isfinite(p)) {
      throw TrainingError("non-finite parameter after update on a batch of " + std::to_string(batch.size()) +
                          " samples");
    }
  }
  return loss_value;
}

GenerationResult Seq2SeqModel::generate(const GenerationRequest& request) const {
  const auto start = std::chrono::steady_clock::now();
  auto source = tokenizer_.encode(request.input);
  const auto positions = static_cast<std::size_t>(net_.config().max_positions);
  if (source.size() > positions) source.resize(positions);
  if (source.empty()) source.push_back(Tokenizer::kUnk);
  const std::size_t limit = std::min(request.max_tokens, positions - 1);
  auto ids = net_.greedy(source, Tokenizer::kBos, Tokenizer::kEos, limit);
  GenerationResult r;
  r.output = tokenizer_.decode(ids);
  r.token_count = ids.size();
  r.duration = std::chrono::steady_clock::now() - start;
  return r;
}

// ---------------------------------------------------------------------------
// Checkpoints: magic, version, JSON header, vocabulary, parameters, Adam state.

namespace {

constexpr char kMagic[8] = {'T', 'O', 'D', 'K', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw CheckpointError("truncated checkpoint");
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, std::size_t limit = 1u << 30) {
  auto n = get<std::uint64_t>(in);
  if (n > limit) throw CheckpointError("corrupt checkpoint string length");
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n))) throw CheckpointError("truncated checkpoint");
  return s;
}

void put_doubles(std::ostream& out, std::span<const double> v) {
  put<std::uint64_t>(out, v.size());
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> get_doubles(std::istream& in, std::size_t expected) {
  auto n = get<std::uint64_t>(in);
  if (n != expected) throw CheckpointError("checkpoint tensor has " + std::to_string(n) + " values, expected " +
                                           std::to_string(expected));
  std::vector<double> v(n);
  if (n > 0 && !in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)))) {
    throw CheckpointError("truncated checkpoint");
  }
  return v;
}

}  // namespace

void Seq2SeqModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  const auto& c = net_.config();
  nlohmann::json header{
      {"config",
       {{"vocab_size", c.vocab_size},
        {"encoder_layers", c.encoder_layers},
        {"decoder_layers", c.decoder_layers},
        {"heads", c.heads},
        {"width", c.width},
        {"ff_width", c.ff_width},
        {"max_positions", c.max_positions},
        {"seed", c.seed}}},
      {"limits", {{"max_input_tokens", limits_.max_input_tokens}, {"max_target_tokens", limits_.max_target_tokens}}},
      {"vocab_hash", tokenizer_.hash()},
      {"epochs_completed", epochs_completed},
      {"last_epoch_loss", last_epoch_loss},
      {"adam_step", adam_.step}};
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, header.dump());
  put<std::uint64_t>(out, tokenizer_.size());
  for (const auto& t : tokenizer_.tokens()) put_string(out, t);
  put_doubles(out, net_.parameters());
  const bool has_adam = !adam_.m.empty();
  put<std::uint8_t>(out, has_adam ? 1 : 0);
  if (has_adam) {
    put_doubles(out, adam_.m);
    put_doubles(out, adam_.v);
  }
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Seq2SeqModel Seq2SeqModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint");
  }
  auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(get_string(in, 1u << 20));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  auto n_tokens = get<std::uint64_t>(in);
  if (n_tokens > (1u << 24)) throw CheckpointError("corrupt vocabulary size");
  std::vector<std::string> tokens;
  tokens.reserve(n_tokens);
  for (std::uint64_t i = 0; i < n_tokens; ++i) tokens.push_back(get_string(in, 1u << 16));
  Tokenizer tokenizer(std::move(tokens));
  try {
    if (header.at("vocab_hash").get<std::uint64_t>() != tokenizer.hash()) {
      throw CheckpointError("checkpoint vocabulary hash mismatch");
    }
    const auto& hc = header.at("config");
    TransformerConfig cfg;
    cfg.vocab_size = hc.at("vocab_size").get<int>();
    cfg.encoder_layers = hc.at("encoder_layers").get<int>();
    cfg.decoder_layers = hc.at("decoder_layers").get<int>();
    cfg.heads = hc.at("heads").get<int>();
    cfg.width = hc.at("width").get<int>();
    cfg.ff_width = hc.at("ff_width").get<int>();
    cfg.max_positions = hc.at("max_positions").get<int>();
    cfg.seed = hc.at("seed").get<std::uint64_t>();
    if (cfg.vocab_size != static_cast<int>(tokenizer.size())) {
      throw CheckpointError("checkpoint vocabulary size disagrees with its config");
    }
    ModelLimits limits{header.at("limits").at("max_input_tokens").get<std::size_t>(),
                       header.at("limits").at("max_target_tokens").get<std::size_t>()};
    Seq2SeqModel model(std::move(tokenizer), cfg, limits);
    auto params = get_doubles(in, model.net_.parameter_count());
    std::copy(params.begin(), params.end(), model.net_.parameters().begin());
    if (get<std::uint8_t>(in) != 0) {
      model.adam_.m = get_doubles(in, params.size());
      model.adam_.v = get_doubles(in, params.size());
    }
    model.adam_.step = header.at("adam_step").get<std::uint64_t>();
    model.epochs_completed = header.at("epochs_completed").get<std::size_t>();
    model.last_epoch_loss = header.at("last_epoch_loss").get<double>();
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  } catch (const ArgumentError& e) {
    throw CheckpointError(std::string("invalid checkpoint config: ") + e.what());
  }
}

TransformerConfig tiny_config(int vocab_size, std::uint64_t seed) {
  TransformerConfig c;
  c.vocab_size = vocab_size;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.heads = 2;
  c.width = 8;
  c.ff_width = 16;
  c.max_positions = 16;
  c.seed = seed;
  return c;
}

GradientCheckResult gradient_check(const TransformerConfig& config, double epsilon, std::uint64_t seed) {
  if (!(epsilon >= 1e-6 && epsilon <= 1e-3)) throw ArgumentError("epsilon must lie in [1e-6, 1e-3]");
  Transformer net(config);
  const std::size_t n = net.parameter_count();
  if (n > 10000) throw ArgumentError("gradient check needs a model with at most 1e4 parameters");

  Rng rng(mix_seed(seed, 0x9c));
  const auto positions = static_cast<std::uint64_t>(config.max_positions);
  struct Seq {
    std::vector<int> src, tin, tout;
  };
  std::vector<Seq> batch(2);
  auto tok = [&] { return static_cast<int>(rng.below(static_cast<std::uint64_t>(config.vocab_size))); };
  for (auto& s : batch) {
    const auto src_len = 2 + rng.below(std::min<std::uint64_t>(5, positions - 1));
    const auto tgt_len = 1 + rng.below(std::min<std::uint64_t>(5, positions - 1));
    for (std::uint64_t i = 0; i < src_len; ++i) s.src.push_back(tok());
    for (std::uint64_t i = 0; i < tgt_len; ++i) s.tout.push_back(tok());
    s.tin.push_back(0);
    s.tin.insert(s.tin.end(), s.tout.begin(), s.tout.end() - 1);
  }
  auto total_loss = [&](std::span<double> grad) {
    double l = 0.0;
    for (const auto& s : batch) l += net.sequence_loss(s.src, s.tin, s.tout, grad);
    return l;
  };

  std::vector<double> grad(n, 0.0);
  total_loss(grad);

  std::vector<std::size_t> coords(n);
  for (std::size_t i = 0; i < n; ++i) coords[i] = i;
  const std::size_t k = std::min<std::size_t>(n, 256);
  for (std::size_t i = 0; i < k; ++i) std::swap(coords[i], coords[i + rng.below(n - i)]);
  coords.resize(k);

  GradientCheckResult result;
  auto params = net.parameters();
  for (auto i : coords) {
    const double saved = params[i];
    auto at = [&](double offset) {
      params[i] = saved + offset;
      return total_loss({});
    };
    // Fourth-order central stencil.
    const double numeric =
        (8.0 * (at(epsilon) - at(-epsilon)) - (at(2.0 * epsilon) - at(-2.0 * epsilon))) / (12.0 * epsilon);
    params[i] = saved;
    const double denom = std::max({std::abs(grad[i]), std::abs(numeric), 1e-5});
    result.max_relative_error = std::max(result.max_relative_error, std::abs(grad[i] - numeric) / denom);
  }
  result.coordinates = k;
  return result;
}

}  // namespace tod
