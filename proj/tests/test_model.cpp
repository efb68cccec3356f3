#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <future>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "todkit/error.hpp"
#include "todkit/seq2seq.hpp"

using namespace tod;

namespace {

TrainingSample sample(TaskTag task, std::string context, std::string target) {
  TrainingSample s;
  s.task = task;
  s.context = std::move(context);
  s.target = std::move(target);
  return s;
}

std::vector<TrainingSample> eight_samples() {
  const std::vector<std::pair<std::string, std::string>> pairs = {
      {"hi there", "[greet]"},         {"cheap food", "[restaurant] {pricerange = cheap}"},
      {"north hotel", "[hotel] {area = north}"}, {"bye now", "[bye]"},
      {"a museum", "[attraction] {type = museum}"}, {"thanks", "[thank]"},
      {"indian food", "[restaurant] {food = indian}"}, {"weather", "[get_weather]"},
  };
  std::vector<TrainingSample> out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    out.push_back(sample(i % 2 ? TaskTag::DST : TaskTag::NLU, "[user] " + pairs[i].first, pairs[i].second));
  }
  return out;
}

Tokenizer tokenizer_for(const std::vector<TrainingSample>& samples) {
  std::vector<std::string> texts;
  for (const auto& s : samples) {
    texts.push_back(s.context);
    texts.push_back(s.target);
  }
  return Tokenizer::build(texts);
}

Seq2SeqModel tiny_model(const std::vector<TrainingSample>& samples, std::uint64_t seed = 0) {
  auto tok = tokenizer_for(samples);
  return Seq2SeqModel(tok, tiny_config(static_cast<int>(tok.size()), seed), ModelLimits{16, 8});
}

void zero_block(Transformer& net, const Block& b) {
  auto p = net.parameters();
  std::fill(p.begin() + static_cast<long>(b.offset), p.begin() + static_cast<long>(b.offset + b.size()), 0.0);
}

// log-softmax by hand, one target position at a time
double naive_nll(const Transformer& net, const EncodedSample& e) {
  double total = 0;
  for (std::size_t t = 0; t < e.target_out.size(); ++t) {
    std::vector<int> prefix(e.target_in.begin(), e.target_in.begin() + static_cast<long>(t + 1));
    const auto rows = net.logits(e.source, prefix);
    const auto& row = rows.back();
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double z = 0;
    for (double v : row) z += std::exp(v - mx);
    total += -(row[static_cast<std::size_t>(e.target_out[t])] - mx - std::log(z));
  }
  return total;
}

}  // namespace

TEST(TokenizerTest, SpecialsAndRoundTrip) {
  Tokenizer t;
  EXPECT_EQ(t.token(Tokenizer::kPad), "<pad>");
  EXPECT_EQ(t.token(Tokenizer::kEos), "<eos>");
  for (const char* s : {"[user]", "[system]", "[db_0]", "[db_3]", "[value_name]", "{", "}", "=", ";", ","}) {
    EXPECT_TRUE(t.contains(s)) << s;
  }
  auto b = Tokenizer::build({"[restaurant] {food = indian}", "hello hello"});
  const std::string text = "translate dialogue to belief state: [user] hello [restaurant] {food = indian}";
  EXPECT_EQ(b.decode(b.encode(text)), text);
  EXPECT_EQ(b.encode("zzz"), std::vector<int>{Tokenizer::kUnk});
  EXPECT_NE(b.hash(), t.hash());
}

TEST(TokenizerTest, MinCountAndValidation) {
  auto b = Tokenizer::build({"a a b"}, 2);
  EXPECT_TRUE(b.contains("a"));
  EXPECT_FALSE(b.contains("b"));
  auto tokens = b.tokens();
  EXPECT_EQ(Tokenizer(tokens).hash(), b.hash());
  tokens.push_back("a");
  EXPECT_THROW(Tokenizer{tokens}, CheckpointError);
  EXPECT_THROW(Tokenizer(std::vector<std::string>{"a"}), CheckpointError);
  EXPECT_TRUE(is_bracket_token("[x]"));
  EXPECT_FALSE(is_bracket_token("[]"));
}

TEST(Loss, UniformLogitsClosedForm) {
  auto samples = eight_samples();
  auto model = tiny_model(samples);
  zero_block(model.network(), model.network().layout().output.weight);
  zero_block(model.network(), model.network().layout().output.bias);
  const double v = static_cast<double>(model.tokenizer().size());
  for (const auto& s : samples) {
    const double len = static_cast<double>(count_tokens(s.target));
    const TrainingSample one[] = {s};
    // targets carry a closing eos
    EXPECT_NEAR(model.loss(one), (len + 1) * std::log(v), 1e-9);
  }
}

TEST(Loss, DuplicatedBatchInvariance) {
  auto samples = eight_samples();
  auto model = tiny_model(samples, 3);
  auto twice = samples;
  twice.insert(twice.end(), samples.begin(), samples.end());
  EXPECT_NEAR(model.loss(twice), model.loss(samples), 1e-12 * model.loss(samples));
}

TEST(Loss, MatchesNaiveOracle) {
  auto samples = eight_samples();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto model = tiny_model(samples, seed);
    double sum = 0;
    for (const auto& s : samples) sum += naive_nll(model.network(), model.encode(s));
    const double expected = sum / static_cast<double>(samples.size());
    EXPECT_NEAR(model.loss(samples), expected, 1e-6 * expected);
  }
}

TEST(Loss, EmptyBatch) {
  auto model = tiny_model(eight_samples());
  EXPECT_THROW(model.loss({}), ArgumentError);
}

TEST(Loss, CausalLogits) {
  auto model = tiny_model(eight_samples(), 9);
  const auto e = model.encode(eight_samples()[1]);
  const auto full = model.network().logits(e.source, e.target_in);
  for (std::size_t t = 1; t <= e.target_in.size(); ++t) {
    const auto part = model.network().logits(e.source, std::span<const int>(e.target_in.data(), t));
    for (std::size_t j = 0; j < part.back().size(); ++j) ASSERT_NEAR(part.back()[j], full[t - 1][j], 1e-10);
  }
}

TEST(Encode, Shapes) {
  auto model = tiny_model(eight_samples());
  const auto e = model.encode(eight_samples()[1]);
  ASSERT_EQ(e.target_in.size(), e.target_out.size());
  EXPECT_EQ(e.target_in.front(), Tokenizer::kBos);
  EXPECT_EQ(e.target_out.back(), Tokenizer::kEos);
  EXPECT_LE(e.source.size(), 16u);
}

TEST(Model, LimitValidation) {
  Tokenizer tok;
  const auto cfg = tiny_config(static_cast<int>(tok.size()));
  EXPECT_THROW(Seq2SeqModel(tok, cfg, ModelLimits{32, 8}), ArgumentError);
  EXPECT_THROW(Seq2SeqModel(tok, cfg, ModelLimits{8, 4}), ArgumentError);
  EXPECT_THROW(Seq2SeqModel(tok, cfg, ModelLimits{16, 0}), ArgumentError);
}

TEST(GradientCheck, TinyDefault) {
  Tokenizer tok;
  const auto r = gradient_check(tiny_config(static_cast<int>(tok.size())), 1e-4);
  EXPECT_LT(r.max_relative_error, 1e-4);
  EXPECT_GE(r.coordinates, 200u);
}

TEST(GradientCheck, RandomConfigs) {
  Rng rng(17);
  for (int i = 0; i < 8; ++i) {
    const auto c = oracles::random_tiny_config(rng);
    const auto r = gradient_check(c, 1e-4, c.seed);
    EXPECT_LT(r.max_relative_error, 1e-4) << "config " << i;
  }
}

TEST(GradientCheck, Preconditions) {
  Tokenizer tok;
  const auto tiny = tiny_config(static_cast<int>(tok.size()));
  EXPECT_THROW(gradient_check(tiny, 1e-2), ArgumentError);
  EXPECT_THROW(gradient_check(tiny, 1e-8), ArgumentError);
  TransformerConfig big;
  big.vocab_size = 100;
  EXPECT_THROW(gradient_check(big, 1e-4), ArgumentError);
}

TEST(Adam, ZeroLearningRateLeavesParameters) {
  auto samples = eight_samples();
  auto model = tiny_model(samples);
  const std::vector<double> before(model.network().parameters().begin(), model.network().parameters().end());
  model.train_step(samples, 0.0);
  const std::vector<double> after(model.network().parameters().begin(), model.network().parameters().end());
  EXPECT_EQ(before, after);
  EXPECT_EQ(model.optimizer().step, 1u);
}

TEST(Adam, FirstStepMagnitude) {
  // bias-corrected first step moves every coordinate with nonzero gradient by ~lr
  std::vector<double> p = {1.0, -2.0, 0.5};
  const std::vector<double> g = {0.3, -0.001, 0.0};
  AdamState st;
  AdamConfig cfg;
  cfg.clip_norm = 0;
  adam_update(p, g, st, 0.1, cfg);
  EXPECT_NEAR(p[0], 0.9, 1e-6);
  EXPECT_NEAR(p[1], -1.9, 1e-4);
  EXPECT_DOUBLE_EQ(p[2], 0.5);
}

TEST(Train, OverfitsFixedBatch) {
  auto samples = eight_samples();
  auto model = tiny_model(samples, 1);
  double loss = 0;
  for (int step = 0; step < 200; ++step) loss = model.train_step(samples, 3e-2);
  EXPECT_LT(model.loss(samples), 0.1) << "last step loss " << loss;
}

TEST(Train, DeterministicTrajectory) {
  auto samples = eight_samples();
  auto a = tiny_model(samples, 4);
  auto b = tiny_model(samples, 4);
  for (int step = 0; step < 20; ++step) ASSERT_EQ(a.train_step(samples, 1e-2), b.train_step(samples, 1e-2));
}

TEST(Train, NonFiniteIsTrainingError) {
  auto samples = eight_samples();
  auto model = tiny_model(samples);
  model.network().parameters()[0] = std::nan("");
  model.network().parameters()[model.network().layout().output.bias.offset] = std::nan("");
  EXPECT_THROW(model.train_step(samples, 1e-3), TrainingError);
}

TEST(Generate, RiggedEosGivesEmpty) {
  auto model = tiny_model(eight_samples());
  auto& net = model.network();
  zero_block(net, net.layout().output.weight);
  zero_block(net, net.layout().output.bias);
  net.parameters()[net.layout().output.bias.offset + Tokenizer::kEos] = 50.0;
  const auto r = model.generate({"translate dialogue to user intent: [user] hi there", 8});
  EXPECT_EQ(r.output, "");
  EXPECT_EQ(r.token_count, 0u);
}

TEST(Generate, TokenBudgetAndDeterminism) {
  auto model = tiny_model(eight_samples(), 2);
  auto& net = model.network();
  zero_block(net, net.layout().output.weight);
  zero_block(net, net.layout().output.bias);
  net.parameters()[net.layout().output.bias.offset + static_cast<std::size_t>(model.tokenizer().id("[bye]"))] = 50.0;
  const auto a = model.generate({"[user] hi", 5});
  EXPECT_EQ(a.token_count, 5u);
  EXPECT_EQ(a.output, "[bye] [bye] [bye] [bye] [bye]");
  const auto b = model.generate({"[user] hi", 5});
  EXPECT_EQ(a.output, b.output);
  EXPECT_GE(a.duration.count(), 0);
  EXPECT_LE(model.generate({"[user] hi", 100}).token_count, 15u);
}

TEST(Generate, OverfitWeatherExample) {
  TrainingSample s = sample(TaskTag::NLU, std::string("[user] ") + fixtures::kWeather, "[get_weather]");
  std::vector<TrainingSample> batch = {s};
  auto tok = tokenizer_for(batch);
  auto cfg = tiny_config(static_cast<int>(tok.size()), 5);
  Seq2SeqModel model(tok, cfg, ModelLimits{16, 8});
  for (int step = 0; step < 150; ++step) model.train_step(batch, 3e-2);
  EXPECT_EQ(model.generate({model_input(s, 16), 8}).output, "[get_weather]");
}

TEST(Generate, ConcurrentCallsAgree) {
  auto samples = eight_samples();
  auto model = tiny_model(samples, 6);
  for (int step = 0; step < 50; ++step) model.train_step(samples, 3e-2);
  std::vector<std::string> expected;
  for (const auto& s : samples) expected.push_back(model.generate({model_input(s, 16), 8}).output);
  std::vector<std::future<std::vector<std::string>>> jobs;
  for (int t = 0; t < 4; ++t) {
    jobs.push_back(std::async(std::launch::async, [&] {
      std::vector<std::string> out;
      for (const auto& s : samples) out.push_back(model.generate({model_input(s, 16), 8}).output);
      return out;
    }));
  }
  for (auto& j : jobs) EXPECT_EQ(j.get(), expected);
}

TEST(Checkpoint, RoundTrip) {
  auto samples = eight_samples();
  auto model = tiny_model(samples, 8);
  for (int step = 0; step < 5; ++step) model.train_step(samples, 1e-2);
  model.epochs_completed = 3;
  model.last_epoch_loss = 1.25;
  const auto path = fixtures::temp_dir("ckpt") / "m.ckpt";
  model.save(path);
  const auto back = Seq2SeqModel::load(path);
  EXPECT_EQ(back.tokenizer().tokens(), model.tokenizer().tokens());
  EXPECT_EQ(back.network().config(), model.network().config());
  EXPECT_EQ(back.limits(), model.limits());
  EXPECT_TRUE(std::equal(back.network().parameters().begin(), back.network().parameters().end(),
                         model.network().parameters().begin()));
  EXPECT_EQ(back.optimizer().m, model.optimizer().m);
  EXPECT_EQ(back.optimizer().v, model.optimizer().v);
  EXPECT_EQ(back.optimizer().step, model.optimizer().step);
  EXPECT_EQ(back.epochs_completed, 3u);
  EXPECT_EQ(back.last_epoch_loss, 1.25);
  EXPECT_EQ(back.loss(samples), model.loss(samples));
}

TEST(Checkpoint, CorruptionDetected) {
  auto model = tiny_model(eight_samples());
  const auto dir = fixtures::temp_dir("ckpt-bad");
  model.save(dir / "m.ckpt");
  std::ifstream in(dir / "m.ckpt", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});

  auto write = [&](const std::string& name, const std::string& data) {
    std::ofstream(dir / name, std::ios::binary) << data;
    return dir / name;
  };
  EXPECT_THROW(Seq2SeqModel::load(write("magic.ckpt", "XXXX" + bytes.substr(4))), CheckpointError);
  EXPECT_THROW(Seq2SeqModel::load(write("short.ckpt", bytes.substr(0, bytes.size() / 2))), CheckpointError);
  EXPECT_THROW(Seq2SeqModel::load(dir / "missing.ckpt"), CheckpointError);

  // flip one character of a vocabulary entry
  auto tampered = bytes;
  const auto pos = tampered.find("[get_weather]");
  ASSERT_NE(pos, std::string::npos);
  tampered[pos + 1] = 'G';
  EXPECT_THROW(Seq2SeqModel::load(write("vocab.ckpt", tampered)), CheckpointError);
}
