#include <gtest/gtest.h>

#include <sys/wait.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fixtures.hpp"
#include "todkit/cli.hpp"
#include "todkit/error.hpp"
#include "todkit/experiment.hpp"
#include "todkit/synthetic.hpp"

using namespace tod;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

Run invoke(std::vector<std::string> args, const std::string& input = "") {
  std::istringstream in(input);
  std::ostringstream out, err;
  Run r;
  r.code = cli::run(args, in, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

int binary(const std::string& args) {
  const int status = std::system((std::string(TODKIT_CLI) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

nlohmann::json report(const fs::path& dir) { return nlohmann::json::parse(slurp(dir / "report.json")); }

const std::vector<std::string> kSmallModel = {"--enc-layers", "1", "--dec-layers", "1", "--heads", "2", "--width", "16",
                                              "--ff-width", "32", "--max-tokens", "96", "--max-target-tokens", "32"};

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// Small synthetic corpus + db shared by the slower tests.
const fs::path& synthetic_dir() {
  static const fs::path dir = [] {
    auto d = fixtures::temp_dir("cli-data");
    const auto r = invoke({"ingest", "--adapter", "synthetic", "--option", "sessions=3", "--option", "seed=5", "--out", d.string()});
    EXPECT_EQ(r.code, 0) << r.err;
    return d;
  }();
  return dir;
}

}  // namespace

TEST(ExitCodes, Table) {
  struct Case {
    std::function<void()> raise;
    int code;
  };
  const std::vector<Case> cases = {
      {[] { throw ValidationError("v"); }, 2},   {[] { throw SchemaError("s", 3); }, 2},
      {[] { throw ArgumentError("a"); }, 2},     {[] { throw CapabilityError("c"); }, 2},
      {[] { throw RangeError("r"); }, 2},        {[] { throw TrainingError("t"); }, 1},
      {[] { throw CheckpointError("k"); }, 1},   {[] { throw TransportError("x"); }, 1},
      {[] { throw TimeoutError("x"); }, 1},      {[] { throw ProtocolError("p"); }, 1},
      {[] { throw LookupError("l"); }, 1},       {[] { throw IoError("f"); }, 1},       {[] { throw std::runtime_error("io"); }, 1},
  };
  for (const auto& c : cases) {
    try {
      c.raise();
    } catch (const std::exception& e) {
      EXPECT_EQ(cli::exit_code_for(e), c.code) << e.what();
    }
  }
}

TEST(ExitCodes, Binary) {
  const auto dir = fixtures::temp_dir("cli-bin");
  EXPECT_EQ(binary("--help"), 0);
  EXPECT_EQ(binary(""), 2);
  EXPECT_EQ(binary("frobnicate"), 2);
  EXPECT_EQ(binary("ingest --adapter nope --out " + dir.string()), 2);
  EXPECT_EQ(binary("ingest --adapter synthetic --option sessions=2 --out " + (dir / "ok").string()), 0);
  EXPECT_EQ(binary("eval --data " + (dir / "missing.jsonl").string() + " --out " + dir.string()), 1);
  EXPECT_EQ(binary("bench --data " + (dir / "ok" / "corpus.jsonl").string() + " --backend stub --repetitions 2 --out " +
                   dir.string()),
            2);
}

TEST(Ingest, CanonicalPassthroughByteIdentical) {
  const auto dir = fixtures::temp_dir("cli-pass");
  SyntheticConfig cfg;
  cfg.sessions = 7;
  const auto src = dir / "src.jsonl";
  save_corpus(generate_synthetic(cfg).corpus, src);
  const auto r = invoke({"ingest", "--adapter", "canonical", "--source", src.string(), "--out", (dir / "o").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir / "o" / "corpus.jsonl"), slurp(src));
  EXPECT_TRUE(fs::exists(dir / "o" / "summary.json"));
  EXPECT_TRUE(fs::exists(dir / "o" / "config.toml"));
}

TEST(Ingest, SyntheticDigestsStable) {
  const auto dir = fixtures::temp_dir("cli-syn");
  for (const char* sub : {"a", "b"}) {
    ASSERT_EQ(invoke({"ingest", "--adapter", "synthetic", "--option", "seed=7", "--option", "sessions=50", "--out",
                   (dir / sub).string()})
                  .code,
              0);
  }
  EXPECT_EQ(slurp(dir / "a" / "corpus.jsonl"), slurp(dir / "b" / "corpus.jsonl"));
  EXPECT_EQ(slurp(dir / "a" / "db.jsonl"), slurp(dir / "b" / "db.jsonl"));
  const auto summary = nlohmann::json::parse(slurp(dir / "a" / "summary.json"));
  EXPECT_EQ(summary.at("sessions").get<int>(), 50);
}

TEST(Ingest, BadSchemaExitsTwoWithLine) {
  const auto dir = fixtures::temp_dir("cli-bad");
  std::ofstream(dir / "bad.jsonl") << R"({"corpus_id":"x","mask":["NLG"],"session_id":"s","turns":[{"speaker":"system","text":"a"}]})"
                                   << "\n";
  const auto r = invoke({"ingest", "--adapter", "canonical", "--source", (dir / "bad.jsonl").string(), "--out", dir.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("line 1"), std::string::npos) << r.err;
  const auto unknown = invoke({"ingest", "--adapter", "synthetic", "--option", "sesions=3", "--out", dir.string()});
  EXPECT_EQ(unknown.code, 2);
}

TEST(Ingest, TestSplit) {
  const auto dir = fixtures::temp_dir("cli-split");
  ASSERT_EQ(invoke({"ingest", "--adapter", "synthetic", "--option", "sessions=20", "--test-fraction", "0.25", "--out",
                 dir.string()})
                .code,
            0);
  std::istringstream train_in(slurp(dir / "corpus.jsonl")), test_in(slurp(dir / "test.jsonl"));
  EXPECT_EQ(read_canonical(train_in).sessions.size(), 15u);
  EXPECT_EQ(read_canonical(test_in).sessions.size(), 5u);
}

TEST(Train, ZeroEpochsEqualsInit) {
  const auto dir = fixtures::temp_dir("cli-e0");
  const auto data = (synthetic_dir() / "corpus.jsonl").string();
  const auto db = (synthetic_dir() / "db.jsonl").string();
  auto a = invoke(concat({"train", "--data", data, "--db", db, "--use-db", "--epochs", "0", "--out", (dir / "a").string()},
                      kSmallModel));
  ASSERT_EQ(a.code, 0) << a.err;
  auto b = invoke(concat({"train", "--data", data, "--db", db, "--use-db", "--epochs", "0", "--out", (dir / "b").string()},
                      kSmallModel));
  ASSERT_EQ(b.code, 0);
  EXPECT_EQ(slurp(dir / "a" / "model.ckpt"), slurp(dir / "b" / "model.ckpt"));
  EXPECT_EQ(slurp(dir / "a" / "history.jsonl"), "");
}

TEST(Train, SnapshotReloadsToIdenticalRun) {
  const auto dir = fixtures::temp_dir("cli-snap");
  const auto data = (synthetic_dir() / "corpus.jsonl").string();
  const auto db = (synthetic_dir() / "db.jsonl").string();
  auto a = invoke(concat({"train", "--data", data, "--db", db, "--use-db", "--epochs", "2", "--seed", "4", "--lr", "0.003",
                       "--out", (dir / "a").string()},
                      kSmallModel));
  ASSERT_EQ(a.code, 0) << a.err;
  auto b = invoke({"--config", (dir / "a" / "config.toml").string(), "train", "--out", (dir / "b").string()});
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(slurp(dir / "a" / "model.ckpt"), slurp(dir / "b" / "model.ckpt"));
  // the snapshot records the non-default values
  const auto snap = slurp(dir / "a" / "config.toml");
  EXPECT_NE(snap.find("train.lr=0.003"), std::string::npos) << snap;
  EXPECT_NE(snap.find("train.seed=4"), std::string::npos) << snap;
  std::ofstream(dir / "bad.toml") << "train.nonsense=1\n";
  EXPECT_EQ(invoke({"--config", (dir / "bad.toml").string(), "train", "--data", data, "--out", dir.string()}).code, 2);
}

TEST(Train, ResumeMatchesUninterrupted) {
  const auto dir = fixtures::temp_dir("cli-resume");
  const auto data = (synthetic_dir() / "corpus.jsonl").string();
  auto base = concat({"train", "--data", data, "--lr", "0.003"}, kSmallModel);
  ASSERT_EQ(invoke(concat(base, {"--epochs", "2", "--out", (dir / "whole").string()})).code, 0);
  ASSERT_EQ(invoke(concat(base, {"--epochs", "1", "--out", (dir / "half").string()})).code, 0);
  ASSERT_EQ(invoke(concat(base, {"--epochs", "1", "--checkpoint", (dir / "half" / "model.ckpt").string(), "--out",
                              (dir / "rest").string()}))
                .code,
            0);
  EXPECT_EQ(slurp(dir / "whole" / "model.ckpt"), slurp(dir / "rest" / "model.ckpt"));
}

TEST(Eval, EmptyBackendReport) {
  const auto dir = fixtures::temp_dir("cli-empty");
  const auto data = synthetic_dir() / "corpus.jsonl";
  const auto r = invoke({"eval", "--data", data.string(), "--db", (synthetic_dir() / "db.jsonl").string(), "--use-db",
                      "--backend", "stub", "--stub-latency-ms", "0", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = report(dir);
  const auto corpus = load_corpus(data);
  std::size_t turns = 0, empty = 0;
  for (const auto& s : corpus.sessions) {
    for (const auto& u : s.utterances) {
      if (u.speaker == Speaker::user && u.belief_state) {
        ++turns;
        empty += u.belief_state->empty();
      }
    }
  }
  EXPECT_NEAR(j.at("jga").get<double>(), static_cast<double>(empty) / static_cast<double>(turns), 1e-12);
  EXPECT_FALSE(j.at("warnings").empty());
  EXPECT_DOUBLE_EQ(j.at("bleu").get<double>(), 0.0);
  EXPECT_NEAR(j.at("combined").get<double>(),
              combined(j.at("inform").get<double>(), j.at("success").get<double>(), j.at("bleu").get<double>()), 1e-12);
  EXPECT_TRUE(fs::exists(dir / "report.txt"));
}

TEST(Eval, OracleBackendScoresPerfectly) {
  SyntheticConfig cfg;
  cfg.sessions = 6;
  const auto data = generate_synthetic(cfg);
  const PipelineMode mode{GenerationMode::plug_and_play, true, HistorySource::gold};
  const PipelineOptions options{4096, 256};
  const auto samples = assemble_samples({data.corpus}, &data.db, mode);
  std::map<std::string, std::string> gold;
  for (const auto& s : samples.samples) gold[model_input(s, options.max_input_tokens)] = s.target;
  StubBackend oracle(std::chrono::microseconds(0), [&](const std::string& in) {
    auto it = gold.find(in);
    return it == gold.end() ? std::string("<miss>") : it->second;
  });
  const auto r = evaluate(oracle, data.corpus, &data.db, mode, options);
  EXPECT_DOUBLE_EQ(r.inform, 100.0);
  EXPECT_DOUBLE_EQ(r.success, 100.0);
  EXPECT_NEAR(r.bleu, 100.0, 1e-9);
  EXPECT_DOUBLE_EQ(r.jga, 1.0);
  ASSERT_TRUE(r.intent_accuracy);
  EXPECT_DOUBLE_EQ(*r.intent_accuracy, 1.0);
  EXPECT_NEAR(r.combined, 200.0, 1e-9);
}

TEST(Lowres, FullFractionEqualsTrainThenEval) {
  const auto dir = fixtures::temp_dir("cli-lowres");
  const auto data = (synthetic_dir() / "corpus.jsonl").string();
  const auto db = (synthetic_dir() / "db.jsonl").string();
  const auto common = concat({"--data", data, "--db", db, "--use-db", "--epochs", "2", "--lr", "0.003"}, kSmallModel);
  ASSERT_EQ(invoke(concat(concat({"lowres"}, common), {"--fractions", "100", "--seeds", "0", "--out", (dir / "lr").string()}))
                .code,
            0);
  ASSERT_EQ(invoke(concat(concat({"train"}, common), {"--seed", "0", "--out", (dir / "t").string()})).code, 0);
  const auto ev = invoke({"eval", "--data", data, "--db", db, "--use-db", "--checkpoint", (dir / "t" / "model.ckpt").string(),
                       "--out", (dir / "e").string()});
  ASSERT_EQ(ev.code, 0) << ev.err;
  const auto direct = report(dir / "e");
  std::istringstream lines(slurp(dir / "lr" / "lowres.jsonl"));
  std::string line;
  std::optional<nlohmann::json> run;
  while (std::getline(lines, line)) {
    auto j = nlohmann::json::parse(line);
    if (j.contains("seed")) run = j;
  }
  ASSERT_TRUE(run);
  for (const char* k : {"inform", "success", "bleu", "jga"}) {
    EXPECT_DOUBLE_EQ(run->at("report").at(k).get<double>(), direct.at(k).get<double>()) << k;
  }
}

TEST(Lowres, RepeatedSeedHasZeroStd) {
  const auto dir = fixtures::temp_dir("cli-lowres-std");
  const auto data = (synthetic_dir() / "corpus.jsonl").string();
  const auto r = invoke(concat({"lowres", "--data", data, "--epochs", "1", "--fractions", "50", "--seeds", "3,3,3", "--out",
                             dir.string()},
                            kSmallModel));
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream lines(slurp(dir / "lowres.jsonl"));
  std::string line;
  int cells = 0;
  while (std::getline(lines, line)) {
    auto j = nlohmann::json::parse(line);
    if (!j.contains("metrics")) continue;
    ++cells;
    for (const auto& [name, m] : j.at("metrics").items()) EXPECT_EQ(m.at("std").get<double>(), 0.0) << name;
  }
  EXPECT_EQ(cells, 1);
}

TEST(Bench, StubOrderingThroughCli) {
  const auto dir = fixtures::temp_dir("cli-bench");
  const auto r = invoke({"bench", "--data", (synthetic_dir() / "corpus.jsonl").string(), "--db",
                      (synthetic_dir() / "db.jsonl").string(), "--backend", "stub", "--stub-latency-ms", "5",
                      "--repetitions", "3", "--sessions", "1", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::map<std::string, double> speed;
  std::istringstream lines(slurp(dir / "bench.jsonl"));
  std::string line;
  while (std::getline(lines, line)) {
    auto j = nlohmann::json::parse(line);
    speed[j.at("mode").get<std::string>()] = j.at("speedup").get<double>();
  }
  ASSERT_EQ(speed.size(), 4u);
  EXPECT_GT(speed["pnp"], speed["pnp+db"]);
  EXPECT_GT(speed["pnp+db"], speed["cascaded+db"]);
  EXPECT_EQ(speed["cascaded"], 1.0);
  const auto single = fixtures::temp_dir("cli-bench1");
  ASSERT_EQ(invoke({"bench", "--data", (synthetic_dir() / "corpus.jsonl").string(), "--backend", "stub", "--modes", "pnp",
                 "--repetitions", "3", "--out", single.string()})
                .code,
            0);
  EXPECT_NE(slurp(single / "bench.jsonl").find("\"speedup\":1.0"), std::string::npos);
  const auto listed = fixtures::temp_dir("cli-bench2");
  ASSERT_EQ(invoke({"bench", "--data", (synthetic_dir() / "corpus.jsonl").string(), "--db",
                    (synthetic_dir() / "db.jsonl").string(), "--backend", "stub", "--modes", "pnp,cascaded+db",
                    "--repetitions", "3", "--out", listed.string()})
                .code,
            0);
  const auto records = slurp(listed / "bench.jsonl");
  EXPECT_EQ(std::count(records.begin(), records.end(), '\n'), 2);
}

TEST(Chat, ResetAndMode) {
  StubBackend stub(std::chrono::milliseconds(5), [](const std::string& in) -> std::string {
    if (in.starts_with("translate dialogue to belief state:")) return "[restaurant] {food = indian}";
    if (in.starts_with("translate dialogue to system response:")) return "[value_name] is good";
    return "";
  });
  const auto db = fixtures::restaurant_db();
  cli::ChatSession chat(stub, &db, PipelineMode{GenerationMode::plug_and_play, true, HistorySource::generated},
                        PipelineOptions{}, true);
  std::ostringstream out;
  chat.handle("i want indian food", out);
  chat.handle("something else", out);
  EXPECT_EQ(chat.context(), "[user] i want indian food [system] curry garden is good [user] something else [system] curry garden is good");
  chat.handle("/reset", out);
  EXPECT_EQ(chat.context(), "");
  chat.handle("hello again", out);
  EXPECT_EQ(chat.last_turn()->inputs.at(TaskTag::DST), "translate dialogue to belief state: [user] hello again");
  chat.handle("/state", out);
  EXPECT_NE(out.str().find("state: [restaurant] {food = indian}"), std::string::npos);
  EXPECT_NE(out.str().find("db: 3 matches in restaurant [db_3], offering curry garden"), std::string::npos) << out.str();

  chat.handle("/mode pnp nodb", out);
  chat.handle("hi", out);
  const auto pnp_total = chat.last_turn()->total;
  chat.handle("/mode cascaded", out);
  EXPECT_NE(out.str().find("mode: cascaded"), std::string::npos);
  chat.handle("hi", out);
  const auto& t = *chat.last_turn();
  Duration sum{0};
  for (const auto& [task, d] : t.call_durations) sum += d;
  EXPECT_GE(t.total, sum);
  EXPECT_LT(pnp_total, sum);
  EXPECT_NE(out.str().find("timing: DST"), std::string::npos);
  EXPECT_FALSE(chat.handle("/quit", out));
}

TEST(Chat, ScriptedTranscriptDeterministic) {
  const auto dir = fixtures::temp_dir("cli-chat");
  const auto data = (synthetic_dir() / "corpus.jsonl").string();
  const auto db = (synthetic_dir() / "db.jsonl").string();
  ASSERT_EQ(invoke(concat({"train", "--data", data, "--db", db, "--use-db", "--epochs", "2", "--out", dir.string()},
                       kSmallModel))
                .code,
            0);
  const std::string script = "i need a cheap restaurant\n/state\nin the north please\n/mode cascaded\nthanks\n/reset\nhello\n/quit\n";
  const std::vector<std::string> args = {"chat", "--checkpoint", (dir / "model.ckpt").string(), "--db", db, "--use-db"};
  const auto a = invoke(args, script);
  const auto b = invoke(args, script);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_NE(a.out.find("context cleared"), std::string::npos);
  EXPECT_NE(a.out.find("mode: cascaded+db"), std::string::npos);
  EXPECT_EQ(a.out.find("timing:"), std::string::npos);
}
