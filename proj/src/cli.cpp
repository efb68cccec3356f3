#include "todkit/cli.hpp"

#include <csignal>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "todkit/corpus.hpp"
#include "todkit/error.hpp"
#include "todkit/evaluation.hpp"
#include "todkit/experiment.hpp"
#include "todkit/remote.hpp"
#include "todkit/synthetic.hpp"
#include "todkit/trainer.hpp"

namespace tod::cli {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for(const std::exception& error) {
  if (dynamic_cast<const CLI::ParseError*>(&error) != nullptr) return kExitUsage;
  if (dynamic_cast<const ValidationError*>(&error) != nullptr) return kExitUsage;
  if (dynamic_cast<const ArgumentError*>(&error) != nullptr) return kExitUsage;
  if (dynamic_cast<const CapabilityError*>(&error) != nullptr) return kExitUsage;
  if (dynamic_cast<const RangeError*>(&error) != nullptr) return kExitUsage;
  return kExitRuntime;
}

// ---------------------------------------------------------------------------
// Chat

ChatSession::ChatSession(const GenerationBackend& backend, const EntityDB* db, PipelineMode mode,
                         PipelineOptions options, bool show_timing)
    : backend_(backend), db_(db), mode_(mode), options_(options), show_timing_(show_timing) {
  if (mode_.use_db && db_ == nullptr) throw ArgumentError("--use-db needs --db");
}

std::string ChatSession::context() const { return render_turns(history_); }

void ChatSession::reset() {
  history_.clear();
  memory_ = TurnMemory{};
  last_.reset();
}

namespace {

double ms(Duration d) { return std::chrono::duration<double, std::milli>(d).count(); }

}  // namespace

void ChatSession::turn(const std::string& text, std::ostream& out) {
  history_.emplace_back(Speaker::user, text);
  auto r = run_turn(backend_, context(), db_, mode_, memory_, options_);
  out << "state: " << (r.state_text.empty() ? "(empty)" : r.state_text) << '\n';
  if (r.db_state) {
    out << "db: " << r.db_state->match_count << " match" << (r.db_state->match_count == 1 ? "" : "es") << " in "
        << r.db_state->domain << ' ' << r.db_state->token;
    if (r.offered) out << ", offering " << r.offered->at("name");
    out << '\n';
  }
  out << "act: " << (r.act_text.empty() ? "(empty)" : r.act_text) << '\n';
  out << "system: " << r.response << '\n';
  for (const auto& w : r.warnings) out << "warning: " << w << '\n';
  if (show_timing_) {
    out << std::fixed << std::setprecision(1) << "timing:";
    for (const auto& [task, d] : r.call_durations) out << ' ' << to_string(task) << ' ' << ms(d) << "ms";
    out << " total " << ms(r.total) << "ms\n" << std::defaultfloat;
  }
  history_.emplace_back(Speaker::system, r.response.empty() ? std::string("<empty>") : r.response);
  last_ = std::move(r);
}

bool ChatSession::handle(const std::string& raw, std::ostream& out) {
  const auto line = normalize_whitespace(raw);
  if (line.empty()) return true;
  if (line[0] != '/') {
    turn(line, out);
    return true;
  }
  const auto words = split_tokens(line);
  const auto& cmd = words[0];
  if (cmd == "/quit") return false;
  if (cmd == "/reset") {
    reset();
    out << "context cleared\n";
  } else if (cmd == "/state") {
    out << "state: " << (memory_.previous_state.entries.empty() ? "(empty)" : serialize_state(memory_.previous_state))
        << '\n';
  } else if (cmd == "/mode") {
    try {
      for (std::size_t i = 1; i < words.size(); ++i) {
        if (words[i] == "db") {
          if (db_ == nullptr) throw ArgumentError("no database loaded");
          mode_.use_db = true;
        } else if (words[i] == "nodb") {
          mode_.use_db = false;
        } else {
          mode_.mode = parse_generation_mode(words[i]);
        }
      }
      out << "mode: " << mode_.label() << '\n';
    } catch (const ArgumentError& e) {
      out << "error: " << e.what() << '\n';
    }
  } else {
    out << "unknown command " << cmd << " (try /state, /reset, /mode, /quit)\n";
  }
  return true;
}

void run_chat(ChatSession& session, std::istream& in, std::ostream& out) {
  std::string line;
  while (std::getline(in, line)) {
    if (!session.handle(line, out)) break;
    out.flush();
  }
}

// ---------------------------------------------------------------------------
// Command line

namespace {

class Log {
 public:
  Log(std::ostream& err, std::string cmd) : err_(err), cmd_(std::move(cmd)) {}
  void operator()(const std::string& event, json fields = json::object(), const char* level = "info") const {
    json j{{"level", level}, {"cmd", cmd_}, {"event", event}};
    j.update(fields);
    err_ << j.dump() << '\n';
  }

 private:
  std::ostream& err_;
  std::string cmd_;
};

struct ModelFlags {
  int enc_layers = 2;
  int dec_layers = 2;
  int heads = 4;
  int width = 128;
  int ff_width = 512;
  std::size_t max_tokens = 256;
  std::size_t max_target_tokens = 64;
  std::uint64_t seed = 0;

  TransformerConfig transformer() const {
    TransformerConfig c;
    c.encoder_layers = enc_layers;
    c.decoder_layers = dec_layers;
    c.heads = heads;
    c.width = width;
    c.ff_width = ff_width;
    c.max_positions = static_cast<int>(std::max(max_tokens, max_target_tokens + 1));
    c.seed = seed;
    return c;
  }
  ModelLimits limits() const { return ModelLimits{max_tokens, max_target_tokens}; }
};

struct TrainFlags {
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  double lr = 3e-4;
  double clip = 1.0;
  std::size_t checkpoint_interval = 0;
};

struct ModeFlags {
  std::string mode = "pnp";
  bool use_db = false;
  std::string history = "generated";

  PipelineMode resolve() const {
    return PipelineMode{parse_generation_mode(mode), use_db, parse_history_source(history)};
  }
};

struct BackendFlags {
  std::string kind = "reference";
  std::string endpoint;
  int timeout_ms = 30000;
  double stub_latency_ms = 10.0;
  std::size_t max_tokens = 256;
  std::size_t max_output_tokens = 64;
};

struct Options {
  // shared
  std::vector<std::string> data;
  std::string db;
  std::string checkpoint;
  std::string out;
  ModelFlags model;
  TrainFlags train;
  ModeFlags mode;
  BackendFlags backend;
  // ingest
  std::string adapter = "canonical";
  std::string source;
  std::vector<std::string> adapter_options;
  double test_fraction = 0.0;
  // train
  std::string tasks = "NLU,DST,POL,NLG";
  std::vector<std::string> dev;
  // eval / lowres
  std::vector<std::string> test;
  std::string fractions = "1,5,10,20";
  std::string seeds = "0,1,2,3,4";
  // bench
  std::size_t repetitions = 3;
  std::size_t sessions = 5;
  std::vector<std::string> modes = {"cascaded", "cascaded+db", "pnp", "pnp+db"};
  std::string baseline;
  // chat / serve
  bool timing = false;
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

void add_model_flags(CLI::App* app, ModelFlags& m) {
  app->add_option("--enc-layers", m.enc_layers, "Encoder layers")->check(CLI::PositiveNumber);
  app->add_option("--dec-layers", m.dec_layers, "Decoder layers")->check(CLI::PositiveNumber);
  app->add_option("--heads", m.heads, "Attention heads")->check(CLI::PositiveNumber);
  app->add_option("--width", m.width, "Model width")->check(CLI::PositiveNumber);
  app->add_option("--ff-width", m.ff_width, "Feed-forward width")->check(CLI::PositiveNumber);
  app->add_option("--max-tokens", m.max_tokens, "Input token budget");
  app->add_option("--max-target-tokens", m.max_target_tokens, "Target token limit");
  app->add_option("--seed", m.seed, "Random seed");
}

void add_train_flags(CLI::App* app, TrainFlags& t) {
  app->add_option("--epochs", t.epochs, "Maximum epochs");
  app->add_option("--batch-size", t.batch_size, "Batch size")->check(CLI::PositiveNumber);
  app->add_option("--lr", t.lr, "Learning rate")->check(CLI::PositiveNumber);
  app->add_option("--clip", t.clip, "Gradient-norm clip (0 disables)");
  app->add_option("--checkpoint-interval", t.checkpoint_interval, "Save every N epochs (0 disables)");
}

void add_mode_flags(CLI::App* app, ModeFlags& m) {
  app->add_option("--mode", m.mode, "Generation mode")->check(CLI::IsMember({"pnp", "cascaded"}));
  app->add_flag("--use-db", m.use_db, "Ground POL/NLG on the DB state");
  app->add_option("--history", m.history, "Dialogue history source")->check(CLI::IsMember({"generated", "gold"}));
}

void add_backend_flags(CLI::App* app, BackendFlags& b, bool allow_remote = true) {
  if (allow_remote) {
    app->add_option("--backend", b.kind, "Generation backend")->check(CLI::IsMember({"reference", "remote", "stub"}));
    app->add_option("--endpoint", b.endpoint, std::string("Remote host:port (default $") + kEndpointEnv + ")");
    app->add_option("--timeout-ms", b.timeout_ms, "Remote request timeout")->check(CLI::PositiveNumber);
  } else {
    app->add_option("--backend", b.kind, "Generation backend")->check(CLI::IsMember({"reference", "stub"}));
  }
  app->add_option("--stub-latency-ms", b.stub_latency_ms, "Per-call latency of the stub backend");
  app->add_option("--input-tokens", b.max_tokens, "Input budget for non-reference backends");
  app->add_option("--output-tokens", b.max_output_tokens, "Output limit for non-reference backends");
}

TrainerConfig trainer_config(const Options& o, const ModelLimits& limits) {
  TrainerConfig c;
  c.max_epochs = o.train.epochs;
  c.batch_size = o.train.batch_size;
  c.lr = o.train.lr;
  c.max_tokens = limits.max_input_tokens;
  c.seed = o.model.seed;
  c.adam.clip_norm = o.train.clip;
  c.checkpoint_interval = o.train.checkpoint_interval;
  if (c.checkpoint_interval > 0) c.checkpoint_dir = fs::path(o.out) / "checkpoints";
  return c;
}

std::vector<Corpus> load_all(const std::vector<std::string>& paths) {
  std::vector<Corpus> out;
  for (const auto& p : paths) out.push_back(load_corpus(p));
  return out;
}

Corpus merge(std::vector<Corpus> corpora) {
  if (corpora.empty()) throw ArgumentError("no corpus given (use --data)");
  if (corpora.size() == 1) return std::move(corpora.front());
  Corpus c = std::move(corpora.front());
  for (std::size_t i = 1; i < corpora.size(); ++i) {
    if (!(corpora[i].mask == c.mask)) throw ArgumentError("evaluation corpora must share one annotation mask");
    for (auto& s : corpora[i].sessions) c.sessions.push_back(std::move(s));
  }
  return c;
}

std::optional<EntityDB> load_db_opt(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return load_db(path);
}

struct BackendHandle {
  std::optional<Seq2SeqModel> model;
  std::unique_ptr<GenerationBackend> backend;
  PipelineOptions options;
};

BackendHandle make_backend(const Options& o) {
  BackendHandle h;
  const auto& b = o.backend;
  h.options = PipelineOptions{b.max_tokens, b.max_output_tokens};
  if (b.kind == "reference") {
    if (o.checkpoint.empty()) throw ArgumentError("the reference backend needs --checkpoint");
    h.model.emplace(Seq2SeqModel::load(o.checkpoint));
    h.backend = std::make_unique<ReferenceBackend>(*h.model);
    h.options = PipelineOptions{h.model->limits().max_input_tokens, h.model->limits().max_target_tokens};
  } else if (b.kind == "remote") {
    std::optional<Endpoint> ep;
    if (!b.endpoint.empty()) {
      ep = Endpoint::parse(b.endpoint);
    } else {
      ep = endpoint_from_env();
    }
    if (!ep) throw ArgumentError(std::string("the remote backend needs --endpoint or $") + kEndpointEnv);
    h.backend = std::make_unique<RemoteBackend>(*ep, std::chrono::milliseconds(b.timeout_ms));
  } else {
    const auto latency = std::chrono::microseconds(static_cast<long long>(b.stub_latency_ms * 1000.0));
    h.backend = std::make_unique<StubBackend>(latency, [](const std::string&) { return std::string(); });
  }
  return h;
}

std::vector<double> parse_list(const std::string& csv, const char* what) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = normalize_whitespace(item);
    if (item.empty()) continue;
    try {
      std::size_t pos = 0;
      out.push_back(std::stod(item, &pos));
      if (pos != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ArgumentError(std::string("invalid ") + what + " entry '" + item + "'");
    }
  }
  if (out.empty()) throw ArgumentError(std::string("empty ") + what + " list");
  return out;
}

PipelineMode parse_mode_label(const std::string& label) {
  PipelineMode m;
  std::string base = label;
  m.use_db = false;
  if (auto p = base.find("+db"); p != std::string::npos) {
    m.use_db = true;
    base.erase(p, 3);
  }
  m.mode = parse_generation_mode(base);
  return m;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

fs::path prepare_out(const std::string& out) {
  if (out.empty()) throw ArgumentError("--out is required");
  fs::create_directories(out);
  return fs::path(out);
}

// Resolved options of the invoked subcommand, in the format --config reads.
std::string snapshot(const CLI::App* sub) {
  std::istringstream lines(sub->config_to_str(true, false));
  std::string out, line;
  while (std::getline(lines, line)) {
    if (line.empty() || line.rfind("config=", 0) == 0) continue;
    if (line.size() > 3 && (line.ends_with("=\"\"") || line.ends_with("=\"{}\""))) continue;
    out += sub->get_name() + "." + line + "\n";
  }
  return out;
}

// ------------------------------------------------------------------ ingest

int cmd_ingest(const Options& o, const CLI::App* sub, std::ostream& out, const Log& log) {
  AdapterOptions opts;
  for (const auto& kv : o.adapter_options) {
    auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw ArgumentError("adapter option must be key=value, got '" + kv + "'");
    opts[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  if (o.adapter != "synthetic" && o.source.empty()) throw ArgumentError("--source is required for adapter " + o.adapter);
  if (!(o.test_fraction >= 0.0 && o.test_fraction < 1.0)) throw ArgumentError("--test-fraction must lie in [0, 1)");
  const auto dir = prepare_out(o.out);
  write_text(dir / "config.toml", snapshot(sub));

  Corpus corpus = load_corpus(o.source, o.adapter, opts);
  json summary{{"adapter", o.adapter}, {"corpus_id", corpus.corpus_id}, {"mask", corpus.mask.to_string()}};
  if (o.adapter == "synthetic") {
    save_db(synthetic_db(synthetic_config(opts)), dir / "db.jsonl");
    summary["db"] = (dir / "db.jsonl").string();
  }
  Corpus test;
  if (o.test_fraction > 0.0) {
    const auto k = subsample_size(corpus.sessions.size(), o.test_fraction);
    if (k >= corpus.sessions.size()) throw ArgumentError("--test-fraction leaves no training sessions");
    test.corpus_id = corpus.corpus_id;
    test.mask = corpus.mask;
    test.sessions.assign(corpus.sessions.end() - static_cast<std::ptrdiff_t>(k), corpus.sessions.end());
    corpus.sessions.resize(corpus.sessions.size() - k);
    save_corpus(test, dir / "test.jsonl");
    summary["test_sessions"] = test.sessions.size();
    summary["test"] = (dir / "test.jsonl").string();
  }
  save_corpus(corpus, dir / "corpus.jsonl");
  std::size_t turns = 0;
  for (const auto& s : corpus.sessions) turns += s.size();
  std::ostringstream digest;
  digest << std::hex << std::setw(16) << std::setfill('0') << corpus_digest(corpus);
  summary["sessions"] = corpus.sessions.size();
  summary["turns"] = turns;
  summary["domains"] = corpus.domains();
  summary["digest"] = digest.str();
  summary["corpus"] = (dir / "corpus.jsonl").string();
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  log("ingested", {{"sessions", corpus.sessions.size()}, {"digest", digest.str()}});
  out << summary.dump(2) << '\n';
  return kExitOk;
}

// ------------------------------------------------------------------- train

std::set<TaskTag> parse_tasks(const std::string& csv) { return AnnotationMask::parse(csv).tasks; }

int cmd_train(const Options& o, const CLI::App* sub, std::ostream& out, const Log& log) {
  const auto dir = prepare_out(o.out);
  write_text(dir / "config.toml", snapshot(sub));
  const auto mode = o.mode.resolve();
  auto db = load_db_opt(o.db);
  if (mode.use_db && !db) throw ArgumentError("--use-db needs --db");
  const auto tasks = parse_tasks(o.tasks);
  auto corpora = load_all(o.data);
  if (corpora.empty()) throw ArgumentError("no training corpus given (use --data)");
  const auto samples = assemble_samples(corpora, db ? &*db : nullptr, mode, tasks);
  if (samples.empty()) throw ArgumentError("the corpora yield no training samples for tasks " + o.tasks);
  json counts;
  for (const auto& [t, n] : samples.counts) counts[std::string(to_string(t))] = n;
  log("samples", {{"total", samples.size()}, {"tasks", counts}});

  std::optional<Seq2SeqModel> init;
  if (!o.checkpoint.empty()) {
    init.emplace(Seq2SeqModel::load(o.checkpoint));
    log("resume", {{"checkpoint", o.checkpoint}, {"epochs_completed", init->epochs_completed}});
  } else {
    init.emplace(make_model(samples, o.model.transformer(), o.model.limits()));
  }
  log("model", {{"parameters", init->network().parameter_count()}, {"vocab", init->tokenizer().size()}});
  const auto config = trainer_config(o, init->limits());

  std::optional<SampleSet> dev;
  std::optional<DevLossSelector> selector;
  if (!o.dev.empty()) {
    dev.emplace(assemble_samples(load_all(o.dev), db ? &*db : nullptr, mode, tasks));
    selector.emplace(*dev, dir / "best.ckpt");
  }
  TrainCallbacks cb;
  cb.on_epoch = [&](const EpochRecord& r, const Seq2SeqModel& m) {
    log("epoch", {{"epoch", r.epoch}, {"mean_loss", r.mean_loss}, {"duration", r.duration_seconds}});
    if (selector) (*selector)(r, m);
  };
  auto trained = fine_tune(std::move(*init), samples, config, cb);
  trained.model.save(dir / "model.ckpt");
  std::ofstream hist(dir / "history.jsonl");
  write_history(trained.history, hist);

  json summary{{"checkpoint", (dir / "model.ckpt").string()},
               {"samples", samples.size()},
               {"epochs", trained.history.size()},
               {"epochs_completed", trained.model.epochs_completed},
               {"final_loss", trained.history.empty() ? json(nullptr) : json(trained.history.back().mean_loss)}};
  if (selector) {
    summary["best_checkpoint"] = (dir / "best.ckpt").string();
    summary["best_dev_loss"] = selector->best_loss();
  }
  log("done", summary);
  out << summary.dump(2) << '\n';
  return kExitOk;
}

// -------------------------------------------------------------------- eval

int cmd_eval(const Options& o, const CLI::App* sub, std::ostream& out, const Log& log) {
  const auto dir = prepare_out(o.out);
  write_text(dir / "config.toml", snapshot(sub));
  const auto mode = o.mode.resolve();
  auto db = load_db_opt(o.db);
  auto corpus = merge(load_all(o.data));
  auto handle = make_backend(o);
  log("evaluating", {{"sessions", corpus.sessions.size()}, {"mode", mode.label()}, {"backend", handle.backend->name()}});
  auto report = evaluate(*handle.backend, corpus, db ? &*db : nullptr, mode, handle.options);
  for (const auto& w : report.warnings) log("warning", {{"message", w}}, "warn");
  write_text(dir / "report.json", report.to_json() + "\n");
  std::ostringstream table;
  EvalReport::write_table_header(table);
  report.write_table_row(table);
  write_text(dir / "report.txt", table.str());
  out << table.str();
  return kExitOk;
}

// ------------------------------------------------------------------ lowres

int cmd_lowres(const Options& o, const CLI::App* sub, std::ostream& out, const Log& log) {
  const auto dir = prepare_out(o.out);
  write_text(dir / "config.toml", snapshot(sub));
  LowResourceConfig cfg;
  cfg.fractions.clear();
  for (double pct : parse_list(o.fractions, "fraction")) {
    if (!(pct > 0.0 && pct <= 100.0)) throw ArgumentError("fractions are percentages in (0, 100]");
    cfg.fractions.push_back(pct / 100.0);
  }
  cfg.seeds.clear();
  for (double s : parse_list(o.seeds, "seed")) {
    if (s < 0 || s != std::floor(s)) throw ArgumentError("seeds must be non-negative integers");
    cfg.seeds.push_back(static_cast<std::uint64_t>(s));
  }
  cfg.mode = o.mode.resolve();
  cfg.model = o.model.transformer();
  cfg.limits = o.model.limits();
  if (!o.checkpoint.empty()) {
    cfg.init_checkpoint = o.checkpoint;
    cfg.limits = Seq2SeqModel::load(o.checkpoint).limits();
  }
  cfg.trainer = trainer_config(o, cfg.limits);
  cfg.trainer.checkpoint_interval = 0;
  auto db = load_db_opt(o.db);
  if (cfg.mode.use_db && !db) throw ArgumentError("--use-db needs --db");
  auto train_corpus = merge(load_all(o.data));
  auto test_corpus = o.test.empty() ? train_corpus : merge(load_all(o.test));
  log("sweep", {{"fractions", cfg.fractions}, {"seeds", cfg.seeds}, {"sessions", train_corpus.sessions.size()}});
  auto report = run_low_resource(train_corpus, test_corpus, db ? &*db : nullptr, cfg);
  std::ostringstream records, table;
  report.write_records(records);
  report.write_table(table);
  write_text(dir / "lowres.jsonl", records.str());
  write_text(dir / "lowres.txt", table.str());
  out << table.str();
  return kExitOk;
}

// ------------------------------------------------------------------- bench

int cmd_bench(const Options& o, const CLI::App* sub, std::ostream& out, const Log& log) {
  if (o.repetitions < 3) throw ArgumentError("--repetitions must be at least 3");
  const auto dir = prepare_out(o.out);
  write_text(dir / "config.toml", snapshot(sub));
  auto db = load_db_opt(o.db);
  auto corpus = merge(load_all(o.data));
  if (corpus.sessions.size() > o.sessions) corpus.sessions.resize(o.sessions);
  std::vector<PipelineMode> modes;
  for (const auto& label : o.modes) {
    auto m = parse_mode_label(label);
    if (m.use_db && !db) throw ArgumentError("mode " + label + " needs --db");
    modes.push_back(m);
  }
  if (modes.empty()) throw ArgumentError("--modes must name at least one mode");
  PipelineMode baseline = modes.front();
  if (!o.baseline.empty()) {
    baseline = parse_mode_label(o.baseline);
  } else if (auto it = std::find(modes.begin(), modes.end(), parse_mode_label("cascaded")); it != modes.end()) {
    baseline = *it;
  }
  auto handle = make_backend(o);
  log("bench", {{"sessions", corpus.sessions.size()}, {"repetitions", o.repetitions}, {"backend", handle.backend->name()}});
  auto report = benchmark_latency(*handle.backend, corpus.sessions, db ? &*db : nullptr, modes, o.repetitions,
                                  std::optional<PipelineMode>(baseline), handle.options);
  std::ostringstream records, table;
  report.write_records(records);
  report.write_table(table);
  write_text(dir / "bench.jsonl", records.str());
  write_text(dir / "bench.txt", table.str());
  out << table.str();
  return kExitOk;
}

// -------------------------------------------------------------------- chat

int cmd_chat(const Options& o, std::istream& in, std::ostream& out, const Log& log) {
  auto db = load_db_opt(o.db);
  auto handle = make_backend(o);
  ChatSession session(*handle.backend, db ? &*db : nullptr, o.mode.resolve(), handle.options, o.timing);
  log("chat", {{"mode", session.mode().label()}, {"backend", handle.backend->name()}});
  run_chat(session, in, out);
  return kExitOk;
}

// ------------------------------------------------------------------- serve

int cmd_serve(const Options& o, std::ostream& out, const Log& log) {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  auto handle = make_backend(o);
  FrameServer server(generation_handler(*handle.backend), o.port, o.host);
  log("listening", {{"endpoint", server.endpoint().str()}, {"backend", handle.backend->name()}});
  out << server.endpoint().str() << std::endl;
  int sig = 0;
  sigwait(&set, &sig);
  server.stop();
  log("stopped", {{"signal", sig}});
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Prompt-based multi-task task-oriented dialogue toolkit", "todkit"};
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "Read options from a resolved-config snapshot");
  app.allow_config_extras(CLI::config_extras_mode::error);

  auto* ingest = app.add_subcommand("ingest", "Load or synthesize a corpus into canonical files");
  ingest->add_option("--adapter", o.adapter, "Source adapter")->check(CLI::IsMember(AdapterRegistry::instance().ids()));
  ingest->add_option("--source", o.source, "Source file");
  ingest->add_option("--option", o.adapter_options, "Adapter option key=value (repeatable)");
  ingest->add_option("--test-fraction", o.test_fraction, "Hold out this fraction of sessions as test.jsonl");
  ingest->add_option("--out", o.out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Multi-task training or fine-tuning");
  train->add_option("--data", o.data, "Canonical corpus (repeatable)")->required();
  train->add_option("--db", o.db, "Entity database");
  train->add_option("--checkpoint", o.checkpoint, "Fine-tune from this checkpoint");
  train->add_option("--tasks", o.tasks, "Tasks to train");
  train->add_option("--dev", o.dev, "Dev corpus for checkpoint selection (repeatable)");
  train->add_option("--out", o.out, "Output directory")->required();
  add_model_flags(train, o.model);
  add_train_flags(train, o.train);
  add_mode_flags(train, o.mode);

  auto* eval = app.add_subcommand("eval", "Run the pipeline over a corpus and score it");
  eval->add_option("--data", o.data, "Canonical test corpus (repeatable)")->required();
  eval->add_option("--db", o.db, "Entity database");
  eval->add_option("--checkpoint", o.checkpoint, "Model checkpoint");
  eval->add_option("--out", o.out, "Output directory")->required();
  add_mode_flags(eval, o.mode);
  add_backend_flags(eval, o.backend);

  auto* lowres = app.add_subcommand("lowres", "Low-resource sweep over fractions and seeds");
  lowres->add_option("--data", o.data, "Training corpus (repeatable)")->required();
  lowres->add_option("--test", o.test, "Test corpus (default: the training corpus)");
  lowres->add_option("--db", o.db, "Entity database");
  lowres->add_option("--checkpoint", o.checkpoint, "Fine-tune every run from this checkpoint");
  lowres->add_option("--fractions", o.fractions, "Comma-separated percentages");
  lowres->add_option("--seeds", o.seeds, "Comma-separated seeds");
  lowres->add_option("--out", o.out, "Output directory")->required();
  add_model_flags(lowres, o.model);
  add_train_flags(lowres, o.train);
  add_mode_flags(lowres, o.mode);

  auto* bench = app.add_subcommand("bench", "Latency benchmark across generation modes");
  bench->add_option("--data", o.data, "Canonical corpus (repeatable)")->required();
  bench->add_option("--db", o.db, "Entity database");
  bench->add_option("--checkpoint", o.checkpoint, "Model checkpoint");
  bench->add_option("--repetitions", o.repetitions, "Passes over the sessions (at least 3)");
  bench->add_option("--sessions", o.sessions, "Use at most this many sessions");
  bench->add_option("--modes", o.modes, "Modes to time: pnp, pnp+db, cascaded, cascaded+db")->delimiter(',');
  bench->add_option("--baseline", o.baseline, "Mode the speedups are relative to (default: cascaded if timed, else the first mode)");
  bench->add_option("--out", o.out, "Output directory")->required();
  add_backend_flags(bench, o.backend);

  auto* chat = app.add_subcommand("chat", "Interactive dialogue REPL (/state, /reset, /mode, /quit)");
  chat->add_option("--db", o.db, "Entity database");
  chat->add_option("--checkpoint", o.checkpoint, "Model checkpoint");
  chat->add_flag("--timing", o.timing, "Print per-call latencies");
  add_mode_flags(chat, o.mode);
  add_backend_flags(chat, o.backend);

  auto* serve = app.add_subcommand("serve", "Serve a backend over the frame protocol");
  serve->add_option("--checkpoint", o.checkpoint, "Model checkpoint");
  serve->add_option("--host", o.host, "Listen address");
  serve->add_option("--port", o.port, "Listen port (0 picks one)");
  add_backend_flags(serve, o.backend, false);

  std::string name = "todkit";
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
    const CLI::App* sub = app.get_subcommands().front();
    name = sub->get_name();
    Log log(err, name);
    if (sub == ingest) return cmd_ingest(o, sub, out, log);
    if (sub == train) return cmd_train(o, sub, out, log);
    if (sub == eval) return cmd_eval(o, sub, out, log);
    if (sub == lowres) return cmd_lowres(o, sub, out, log);
    if (sub == bench) return cmd_bench(o, sub, out, log);
    if (sub == chat) return cmd_chat(o, in, out, log);
    return cmd_serve(o, out, log);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    Log(err, name)("usage", {{"message", e.what()}}, "error");
    return kExitUsage;
  } catch (const std::exception& e) {
    Log(err, name)("failed", {{"message", e.what()}}, "error");
    return exit_code_for(e);
  }
}

}  // namespace tod::cli
