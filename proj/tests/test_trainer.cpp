#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "todkit/error.hpp"
#include "todkit/synthetic.hpp"
#include "todkit/trainer.hpp"

using namespace tod;

namespace {

TrainingSample sample(TaskTag task, const std::string& context, const std::string& target) {
  TrainingSample s;
  s.task = task;
  s.context = context;
  s.target = target;
  return s;
}

SampleSet two_task_set(std::size_t dst, std::size_t nlg) {
  SampleSet set;
  for (std::size_t i = 0; i < dst; ++i) set.add(sample(TaskTag::DST, "[user] d" + std::to_string(i), "[x] {a = b}"));
  for (std::size_t i = 0; i < nlg; ++i) set.add(sample(TaskTag::NLG, "[user] n" + std::to_string(i), "ok"));
  return set;
}

SampleSet toy_multitask() {
  SampleSet set;
  const char* words[] = {"red", "blue", "green", "gold"};
  for (int i = 0; i < 4; ++i) {
    const std::string w = words[i];
    set.add(sample(TaskTag::NLU, "[user] find " + w, "[find_" + w + "]"));
    set.add(sample(TaskTag::DST, "[user] find " + w, "[shop] {colour = " + w + "}"));
    set.add(sample(TaskTag::POL, "[user] find " + w, "[shop] [inform] colour"));
    set.add(sample(TaskTag::NLG, "[user] find " + w, "here is a " + w + " one"));
  }
  return set;
}

TransformerConfig small_config() {
  TransformerConfig c;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.heads = 2;
  c.width = 16;
  c.ff_width = 32;
  c.max_positions = 32;
  c.seed = 1;
  return c;
}

constexpr ModelLimits kLimits{32, 16};

TrainerConfig trainer_config(std::size_t epochs) {
  TrainerConfig t;
  t.max_epochs = epochs;
  t.batch_size = 4;
  t.lr = 1e-2;
  t.max_tokens = kLimits.max_input_tokens;
  t.seed = 3;
  return t;
}

std::vector<double> params(const Seq2SeqModel& m) {
  return {m.network().parameters().begin(), m.network().parameters().end()};
}

double exact_match(const Seq2SeqModel& m, const SampleSet& set, std::optional<TaskTag> only = {}) {
  std::size_t hits = 0, total = 0;
  for (const auto& s : set.samples) {
    if (only && s.task != *only) continue;
    ++total;
    hits += m.generate({model_input(s, m.limits().max_input_tokens), m.limits().max_target_tokens}).output == s.target;
  }
  return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

}  // namespace

TEST(TrainerConfigTest, Validation) {
  EXPECT_NO_THROW(TrainerConfig{}.validate());
  auto c = TrainerConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ArgumentError);
  c = TrainerConfig{};
  c.lr = 0;
  EXPECT_THROW(c.validate(), ArgumentError);
  const auto p = full_scale_trainer_config();
  EXPECT_EQ(p.batch_size, 128u);
  EXPECT_DOUBLE_EQ(p.lr, 5e-5);
  EXPECT_EQ(p.max_tokens, 1024u);
  EXPECT_EQ(p.max_epochs, 10u);
}

TEST(PlanEpoch, TenByFour) {
  auto set = two_task_set(10, 0);
  auto cfg = trainer_config(1);
  const auto plan = plan_epoch(set, cfg, 0);
  ASSERT_EQ(plan.batch_count(), 3u);
  EXPECT_EQ(plan.batch(0).size(), 4u);
  EXPECT_EQ(plan.batch(1).size(), 4u);
  EXPECT_EQ(plan.batch(2).size(), 2u);
  std::vector<std::size_t> seen;
  for (std::size_t b = 0; b < 3; ++b) seen.insert(seen.end(), plan.batch(b).begin(), plan.batch(b).end());
  std::sort(seen.begin(), seen.end());
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(seen[i], i);
}

TEST(PlanEpoch, EmptyIsError) {
  EXPECT_THROW(plan_epoch(SampleSet{}, trainer_config(1), 0), ArgumentError);
}

TEST(PlanEpoch, BijectionProperty) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    auto set = two_task_set(1 + rng.below(200), rng.below(50));
    auto cfg = trainer_config(1);
    cfg.batch_size = 1 + rng.below(40);
    const auto plan = plan_epoch(set, cfg, rng.below(100));
    std::vector<std::size_t> order(plan.order);
    std::sort(order.begin(), order.end());
    for (std::size_t i = 0; i < set.size(); ++i) ASSERT_EQ(order[i], i);
    ASSERT_EQ(plan.boundaries.front(), 0u);
    ASSERT_EQ(plan.boundaries.back(), set.size());
    for (std::size_t b = 0; b < plan.batch_count(); ++b) {
      ASSERT_GT(plan.batch(b).size(), 0u);
      ASSERT_LE(plan.batch(b).size(), cfg.batch_size);
      if (b + 1 < plan.batch_count()) ASSERT_EQ(plan.batch(b).size(), cfg.batch_size);
    }
  }
}

TEST(PlanEpoch, TaskProportions) {
  auto set = two_task_set(900, 100);
  auto cfg = trainer_config(1);
  cfg.batch_size = 10;
  double mean_fraction = 0;
  std::size_t epochs = 200;
  for (std::size_t e = 0; e < epochs; ++e) {
    const auto plan = plan_epoch(set, cfg, e);
    std::size_t dst = 0;
    for (std::size_t b = 0; b < plan.batch_count(); ++b) {
      std::size_t in_batch = 0;
      for (auto i : plan.batch(b)) in_batch += set.samples[i].task == TaskTag::DST;
      dst += in_batch;
      mean_fraction += static_cast<double>(in_batch) / 10.0;
    }
    ASSERT_EQ(dst, 900u);
  }
  mean_fraction /= static_cast<double>(epochs * 100);
  EXPECT_NEAR(mean_fraction, 0.9, 0.01);
}

TEST(PlanEpoch, NoTaskSegregation) {
  auto set = two_task_set(5000, 5000);
  auto cfg = trainer_config(1);
  cfg.batch_size = 32;
  const auto plan = plan_epoch(set, cfg, 0);
  std::size_t single = 0;
  for (std::size_t b = 0; b < plan.batch_count(); ++b) {
    std::set<TaskTag> tasks;
    for (auto i : plan.batch(b)) tasks.insert(set.samples[i].task);
    single += tasks.size() == 1;
  }
  EXPECT_EQ(single, 0u);
}

TEST(PlanEpoch, Deterministic) {
  auto set = two_task_set(50, 50);
  auto cfg = trainer_config(1);
  EXPECT_EQ(plan_epoch(set, cfg, 2).order, plan_epoch(set, cfg, 2).order);
  EXPECT_NE(plan_epoch(set, cfg, 2).order, plan_epoch(set, cfg, 3).order);
  auto other = cfg;
  other.seed = 4;
  EXPECT_NE(plan_epoch(set, cfg, 2).order, plan_epoch(set, other, 2).order);
}

TEST(Train, ZeroEpochsNoChange) {
  auto set = toy_multitask();
  auto model = make_model(set, small_config(), kLimits);
  const auto before = params(model);
  const auto history = train(model, set, trainer_config(0));
  EXPECT_TRUE(history.empty());
  EXPECT_EQ(params(model), before);
  EXPECT_EQ(model.epochs_completed, 0u);
}

TEST(Train, OverfitsMultitask) {
  auto set = toy_multitask();
  auto model = make_model(set, small_config(), kLimits);
  const auto history = train(model, set, trainer_config(60));
  ASSERT_EQ(history.size(), 60u);
  for (std::size_t i = 0; i < history.size(); ++i) EXPECT_EQ(history[i].epoch, i);
  EXPECT_LT(history.back().mean_loss, 0.1);
  EXPECT_GE(exact_match(model, set), 0.95);
}

TEST(Train, Reproducible) {
  auto set = toy_multitask();
  auto a = make_model(set, small_config(), kLimits);
  auto b = make_model(set, small_config(), kLimits);
  const auto ha = train(a, set, trainer_config(3));
  const auto hb = train(b, set, trainer_config(3));
  EXPECT_EQ(params(a), params(b));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(ha[i].mean_loss, hb[i].mean_loss);
}

TEST(Train, ResumeMatchesUninterrupted) {
  auto set = toy_multitask();
  auto whole = make_model(set, small_config(), kLimits);
  train(whole, set, trainer_config(4));
  auto part = make_model(set, small_config(), kLimits);
  train(part, set, trainer_config(2));
  const auto path = fixtures::temp_dir("resume") / "half.ckpt";
  part.save(path);
  auto resumed = fine_tune(path, set, trainer_config(2));
  EXPECT_EQ(resumed.history.front().epoch, 2u);
  EXPECT_EQ(params(resumed.model), params(whole));
}

TEST(Train, LimitMismatch) {
  auto set = toy_multitask();
  auto model = make_model(set, small_config(), kLimits);
  auto cfg = trainer_config(1);
  cfg.max_tokens = 16;
  EXPECT_THROW(train(model, set, cfg), ArgumentError);
}

TEST(Train, ErrorsCarryCoordinates) {
  auto set = toy_multitask();
  auto model = make_model(set, small_config(), kLimits);
  model.network().parameters()[model.network().layout().output.bias.offset] = std::nan("");
  try {
    train(model, set, trainer_config(1));
    FAIL();
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 0 batch 0"), std::string::npos) << e.what();
  }
}

TEST(Train, StructurallyIdenticalArtifacts) {
  auto multi = toy_multitask();
  SampleSet single;
  for (int i = 0; i < 16; ++i) single.add(sample(TaskTag::DST, "[user] find w" + std::to_string(i), "[shop] {colour = red}"));
  const auto dir = fixtures::temp_dir("shapes");
  auto a = make_model(multi, small_config(), kLimits);
  auto b = make_model(single, small_config(), kLimits);
  train(a, multi, trainer_config(2));
  train(b, single, trainer_config(2));
  a.save(dir / "a.ckpt");
  b.save(dir / "b.ckpt");
  const auto la = Seq2SeqModel::load(dir / "a.ckpt");
  const auto lb = Seq2SeqModel::load(dir / "b.ckpt");
  auto ca = la.network().config(), cb = lb.network().config();
  ca.vocab_size = cb.vocab_size = 0;
  EXPECT_EQ(ca, cb);
  EXPECT_EQ(la.limits(), lb.limits());
  EXPECT_EQ(la.epochs_completed, lb.epochs_completed);
  EXPECT_EQ(la.optimizer().step > 0, lb.optimizer().step > 0);
}

TEST(Train, CheckpointInterval) {
  auto set = toy_multitask();
  auto model = make_model(set, small_config(), kLimits);
  auto cfg = trainer_config(5);
  cfg.checkpoint_interval = 2;
  cfg.checkpoint_dir = fixtures::temp_dir("interval");
  std::size_t batches = 0, epochs = 0;
  TrainCallbacks cb;
  cb.on_batch = [&](std::size_t, std::size_t, double loss) {
    ++batches;
    EXPECT_TRUE(std::isfinite(loss));
  };
  cb.on_epoch = [&](const EpochRecord&, const Seq2SeqModel&) { ++epochs; };
  train(model, set, cfg, cb);
  EXPECT_EQ(batches, 20u);
  EXPECT_EQ(epochs, 5u);
  EXPECT_TRUE(std::filesystem::exists(cfg.checkpoint_dir / "epoch-2.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(cfg.checkpoint_dir / "epoch-4.ckpt"));
  EXPECT_FALSE(std::filesystem::exists(cfg.checkpoint_dir / "epoch-5.ckpt"));
  EXPECT_EQ(Seq2SeqModel::load(cfg.checkpoint_dir / "epoch-4.ckpt").epochs_completed, 4u);
}

TEST(Train, HistoryJsonl) {
  TrainHistory h = {{0, 2.5, 0.1}, {1, 1.25, 0.2}};
  std::ostringstream out;
  write_history(h, out);
  std::istringstream in(out.str());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    EXPECT_NE(line.find("\"epoch\":" + std::to_string(n)), std::string::npos) << line;
    EXPECT_NE(line.find("\"mean_loss\""), std::string::npos);
    EXPECT_NE(line.find("\"duration\""), std::string::npos);
    ++n;
  }
  EXPECT_EQ(n, 2u);
}

TEST(FineTune, ZeroEpochsBitwiseEqual) {
  auto set = toy_multitask();
  auto model = make_model(set, small_config(), kLimits);
  train(model, set, trainer_config(2));
  const auto path = fixtures::temp_dir("ft0") / "m.ckpt";
  model.save(path);
  auto ft = fine_tune(path, set, trainer_config(0));
  EXPECT_EQ(params(ft.model), params(model));
  EXPECT_TRUE(ft.history.empty());
}

TEST(FineTune, ContinuationDoesNotIncreaseLoss) {
  auto set = toy_multitask();
  auto model = make_model(set, small_config(), kLimits);
  auto cfg = trainer_config(20);
  cfg.lr = 3e-3;
  train(model, set, cfg);
  const auto path = fixtures::temp_dir("ftc") / "m.ckpt";
  model.save(path);
  cfg.max_epochs = 1;
  auto ft = fine_tune(path, set, cfg);
  EXPECT_LE(ft.history.front().mean_loss, model.last_epoch_loss);
}

TEST(FineTune, VocabularyMismatch) {
  auto set = toy_multitask();
  auto model = make_model(set, small_config(), kLimits);
  SampleSet other;
  other.add(sample(TaskTag::NLU, "[user] book a taxi", "[book_taxi]"));
  other.add(sample(TaskTag::NLG, "[user] book a taxi", "your taxi is [value_car]"));
  try {
    fine_tune(std::move(model), other, trainer_config(1));
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("[book_taxi]"), std::string::npos);
  }
  // plain words are allowed to be unknown
  SampleSet words;
  words.add(sample(TaskTag::NLG, "[user] unseen words here", "some reply"));
  EXPECT_NO_THROW(fine_tune(make_model(set, small_config(), kLimits), words, trainer_config(1)));
}

TEST(FineTune, DstSubsetKeepsDstAccuracy) {
  auto set = toy_multitask();
  auto model = make_model(set, small_config(), kLimits);
  train(model, set, trainer_config(25));
  const double before = exact_match(model, set, TaskTag::DST);
  SampleSet dst;
  for (const auto& s : set.samples) {
    if (s.task == TaskTag::DST) dst.add(s);
  }
  auto ft = fine_tune(std::move(model), dst, trainer_config(10));
  EXPECT_GE(exact_match(ft.model, set, TaskTag::DST), before);
}

TEST(DevSelector, KeepsBestCheckpoint) {
  auto set = toy_multitask();
  auto model = make_model(set, small_config(), kLimits);
  const auto path = fixtures::temp_dir("dev") / "best.ckpt";
  DevLossSelector selector(set, path);
  TrainCallbacks cb;
  cb.on_epoch = std::ref(selector);
  train(model, set, trainer_config(6), cb);
  ASSERT_TRUE(std::filesystem::exists(path));
  const auto best = Seq2SeqModel::load(path);
  EXPECT_NEAR(best.loss(set.samples), selector.best_loss(), 1e-12);
  EXPECT_EQ(best.epochs_completed, selector.best_epoch() + 1);
}
