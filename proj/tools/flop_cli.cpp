// flop: train, prune, compact, evaluate and benchmark factorized gated LMs.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "flop/bench.hpp"
#include "flop/checkpoint.hpp"
#include "flop/config.hpp"
#include "flop/corpus.hpp"
#include "flop/errors.hpp"
#include "flop/metrics.hpp"
#include "flop/report.hpp"
#include "flop/trainer.hpp"

namespace fs = std::filesystem;
using namespace flop;
using nlohmann::json;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> method;
  std::optional<double> target_compression;
  std::optional<std::string> out;
  std::string from;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "Run config (JSON)");
  cmd->add_option("--seed", f.seed, "Random seed");
  cmd->add_option("--method", f.method, "flop-l0 | flop-agp | np-l0 | fac")
      ->check(CLI::IsMember({"flop-l0", "flop-agp", "np-l0", "fac"}));
  cmd->add_option("--target-compression", f.target_compression, "Fraction of parameters to remove")
      ->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--out", f.out, "Output directory (default: FLOP_OUT_DIR, then ./runs)");
}

// Precedence: command-line flags, then the config file, then the config
// stored in the input checkpoint.
RunConfig resolve_config(const CommonFlags& f, const std::string& embedded = {}) {
  RunConfig c;
  if (!f.config.empty()) {
    c = RunConfig::load(f.config);
  } else if (!embedded.empty()) {
    c = RunConfig::parse(embedded);
  }
  if (f.seed) c.seed = *f.seed;
  if (f.method) c.method = *f.method;
  if (f.target_compression) c.controller.target_compression = *f.target_compression;
  if (f.out) {
    c.out_dir = *f.out;
  } else if (c.out_dir.empty()) {
    const char* env = std::getenv("FLOP_OUT_DIR");
    c.out_dir = env && *env ? env : "runs";
  }
  c.validate();
  return c;
}

CharCorpus load_corpus(const RunConfig& c) { return CharCorpus::ingest(c.corpus, c.split_fractions(), c.symbols()); }

std::span<const std::size_t> split_of(const CharCorpus& corpus, const std::string& name) {
  if (name == "train") return corpus.train();
  if (name == "valid") return corpus.valid();
  if (name == "test") return corpus.test();
  throw FormatError("unknown split '" + name + "' (expected train, valid or test)");
}

void print_line(const json& j) { std::cout << j.dump() << std::endl; }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << text;
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
}

Checkpoint require_checkpoint(const std::string& from, std::initializer_list<CheckpointStage> allowed) {
  if (from.empty()) throw FormatError("--from <checkpoint> is required");
  Checkpoint c = load_checkpoint(from);
  for (CheckpointStage s : allowed)
    if (c.stage == s) return c;
  throw FormatError("checkpoint '" + from + "' is at stage " + to_string(c.stage) + ", which this command does not accept");
}

RunSummary finish_run(RecurrentLM& model, const RunConfig& c, const CharCorpus& corpus, MetricsWriter& metrics) {
  const KeptValue kept = parse_kept_value(c.train.kept_value);
  RunSummary s = make_summary(c.method, model.report(), evaluate(model, corpus.valid(), kept),
                              evaluate(model, corpus.test(), kept));
  metrics.emit(summary_record(s));
  return s;
}

// Runs the trainer up to `stop`, streaming metrics and leaving a diagnostic
// checkpoint behind if the loss becomes non-finite.
void drive(Trainer& trainer, RecurrentLM& model, const RunConfig& c, std::size_t stop, MetricsWriter& metrics) {
  const fs::path diag = fs::path(c.out_dir) / "diagnostic.ckpt";
  trainer.set_abort_hook([&](const std::string& why) {
    const TrainState st = trainer.state();
    save_checkpoint(diag, CheckpointStage::trained, c.render(), model, &st);
    std::cerr << "numeric failure at step " << st.step << " (" << why << "); snapshot in " << diag.string() << "\n";
  });
  while (trainer.state().step < stop) metrics.emit(step_record(trainer.step()));
}

int cmd_train(const CommonFlags& f) {
  const RunConfig c = resolve_config(f);
  const CharCorpus corpus = load_corpus(c);
  Rng init(c.seed);
  RecurrentLM model(c.model_config(corpus.num_ids()), init);
  Trainer trainer(model, corpus.train(), c.trainer_options());
  const fs::path out = c.out_dir;
  MetricsWriter metrics(out / "metrics.jsonl");

  // Gated methods stop after warmup; `prune` continues from there.
  const bool gated = !model.gates().empty();
  drive(trainer, model, c, gated ? trainer.warmup_steps() : c.train.total_steps, metrics);
  const CheckpointStage stage = gated ? CheckpointStage::warmup : CheckpointStage::trained;
  if (!gated) finish_run(model, c, corpus, metrics);
  const TrainState st = trainer.state();
  const fs::path path = out / (gated ? "warmup.ckpt" : "model.ckpt");
  save_checkpoint(path, stage, c.render(), model, &st);
  print_line({{"checkpoint", path.string()}, {"stage", to_string(stage)}, {"steps", st.step}});
  return 0;
}

int cmd_prune(const CommonFlags& f) {
  std::optional<Checkpoint> warm;
  if (!f.from.empty()) warm = require_checkpoint(f.from, {CheckpointStage::warmup});
  const RunConfig c = resolve_config(f, warm ? warm->config : std::string{});
  if (parse_method(c.method) == Method::fac) throw FormatError("fac has no pruning phase; use `train`");
  const CharCorpus corpus = load_corpus(c);

  std::unique_ptr<RecurrentLM> model;
  if (warm) {
    model = std::move(warm->model);
    if (model->vocab() != corpus.num_ids()) throw DimensionError("checkpoint vocabulary disagrees with the corpus");
  } else {
    Rng init(c.seed);
    model = std::make_unique<RecurrentLM>(c.model_config(corpus.num_ids()), init);
  }
  if (model->gates().empty()) throw FormatError("model has no gates to prune");
  Trainer trainer(*model, corpus.train(), c.trainer_options());
  if (warm && warm->train_state) trainer.restore(*warm->train_state);

  const fs::path out = c.out_dir;
  MetricsWriter metrics(out / "metrics.jsonl", warm.has_value());
  drive(trainer, *model, c, c.train.total_steps, metrics);
  const RunSummary s = finish_run(*model, c, corpus, metrics);

  const TrainState st = trainer.state();
  save_checkpoint(out / "pruned.ckpt", CheckpointStage::pruned, c.render(), *model, &st);
  write_text(out / "prune_report.json", prune_report_json(model->report()));
  print_line({{"checkpoint", (out / "pruned.ckpt").string()},
              {"compression", s.compression},
              {"prunable_compression", s.prunable_compression},
              {"valid_bpc", s.valid_bpc}});
  return 0;
}

int cmd_compact(const CommonFlags& f) {
  Checkpoint in = require_checkpoint(f.from, {CheckpointStage::pruned});
  const RunConfig c = resolve_config(f, in.config);
  std::vector<std::string> warnings;
  auto compacted = in.model->compact(parse_kept_value(c.train.kept_value), &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  const fs::path path = fs::path(c.out_dir) / "compact.ckpt";
  save_checkpoint(path, CheckpointStage::compacted, c.render(), *compacted);
  const ParamCounts counts = compacted->counts();
  print_line({{"checkpoint", path.string()},
              {"parameters", counts.total},
              {"original_total", compacted->original_total()},
              {"compression", 1.0 - counts.total / compacted->original_total()}});
  return 0;
}

int cmd_eval(const CommonFlags& f, const std::string& split) {
  std::optional<Checkpoint> in;
  if (!f.from.empty()) in = load_checkpoint(f.from);
  const RunConfig c = resolve_config(f, in ? in->config : std::string{});
  const CharCorpus corpus = load_corpus(c);
  std::unique_ptr<RecurrentLM> model;
  if (in) {
    model = std::move(in->model);
    if (model->vocab() != corpus.num_ids()) throw DimensionError("checkpoint vocabulary disagrees with the corpus");
  } else {
    Rng init(c.seed);
    model = std::make_unique<RecurrentLM>(c.model_config(corpus.num_ids()), init);
  }
  const auto ids = split_of(corpus, split);
  const double bpc = evaluate(*model, ids, parse_kept_value(c.train.kept_value));
  print_line({{"split", split}, {"bpc", bpc}, {"symbols", ids.size()}, {"vocab", model->vocab()}});
  return 0;
}

struct BenchFlags {
  std::size_t d_out = 3056;
  std::size_t d_in = 3056;
  std::size_t rank = 512;
  std::vector<std::size_t> kept;
  std::size_t batch = 32;
  std::size_t trials = 30;
  std::size_t warmup = 5;
  std::optional<std::string> out;
};

int cmd_bench(const BenchFlags& b) {
  std::vector<std::size_t> kept = b.kept;
  if (kept.empty()) {
    // Full rank, then 50%, 80% and 90% reduction.
    for (double keep : {1.0, 0.5, 0.2, 0.1})
      kept.push_back(std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(keep * static_cast<double>(b.rank)))));
  }
  BenchOptions opts;
  opts.trials = b.trials;
  opts.warmup = b.warmup;
  const auto results = bench_compacted(b.d_out, b.d_in, b.rank, kept, b.batch, opts);
  std::cout << bench_table(results);
  if (b.out) {
    write_text(fs::path(*b.out) / "bench.json", bench_json(results));
  } else if (const char* env = std::getenv("FLOP_OUT_DIR"); env && *env) {
    write_text(fs::path(env) / "bench.json", bench_json(results));
  }
  return 0;
}

int cmd_report(const std::vector<std::string>& files, bool as_json) {
  std::vector<RunSummary> rows;
  for (const auto& f : files) rows.push_back(summary_from_metrics(f));
  if (as_json) {
    json arr = json::array();
    for (const auto& r : rows) arr.push_back(summary_record(r));
    std::cout << arr.dump(2) << "\n";
  } else {
    std::cout << summary_table(rows);
  }
  return 0;
}

const char* error_kind(const std::exception& e) {
  if (dynamic_cast<const DimensionError*>(&e)) return "dimension";
  if (dynamic_cast<const DomainError*>(&e)) return "domain";
  if (dynamic_cast<const NumericError*>(&e)) return "numeric";
  if (dynamic_cast<const FormatError*>(&e)) return "format";
  if (dynamic_cast<const GraphError*>(&e)) return "graph";
  if (dynamic_cast<const std::filesystem::filesystem_error*>(&e)) return "io";
  return "internal";
}

void fail_line(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Factorized low-rank pruning with Hard Concrete gates"};
  app.require_subcommand(1);

  CommonFlags train_f, prune_f, compact_f, eval_f;
  auto* train = app.add_subcommand("train", "Train a model (gated methods stop after warmup)");
  add_common(train, train_f);

  auto* prune = app.add_subcommand("prune", "Pruning phase from a warmup checkpoint, or warmup inline");
  add_common(prune, prune_f);
  prune->add_option("--from", prune_f.from, "Warmup checkpoint")->check(CLI::ExistingFile);

  auto* compact = app.add_subcommand("compact", "Materialize a pruned checkpoint as smaller dense factors");
  add_common(compact, compact_f);
  compact->add_option("--from", compact_f.from, "Pruned checkpoint")->required()->check(CLI::ExistingFile);

  std::string split = "valid";
  auto* eval = app.add_subcommand("eval", "Bits per character on a split (fresh model without --from)");
  add_common(eval, eval_f);
  eval->add_option("--from", eval_f.from, "Checkpoint")->check(CLI::ExistingFile);
  eval->add_option("--split", split, "train | valid | test")->check(CLI::IsMember({"train", "valid", "test"}));

  BenchFlags bench_f;
  auto* bench = app.add_subcommand("bench", "Time compacted factorized layers against full rank");
  bench->add_option("--d-out", bench_f.d_out, "Output dimension");
  bench->add_option("--d-in", bench_f.d_in, "Input dimension");
  bench->add_option("--rank", bench_f.rank, "Full rank");
  bench->add_option("--kept", bench_f.kept, "Kept ranks, comma separated (default: 100/50/20/10% of rank)")->delimiter(',');
  bench->add_option("--batch", bench_f.batch, "Rows per forward");
  bench->add_option("--trials", bench_f.trials, "Timed trials")->check(CLI::PositiveNumber);
  bench->add_option("--warmup", bench_f.warmup, "Untimed warmup trials");
  bench->add_option("--out", bench_f.out, "Directory for bench.json");

  std::vector<std::string> report_files;
  bool report_json = false;
  auto* report = app.add_subcommand("report", "Summary table from metrics streams");
  report->add_option("metrics", report_files, "metrics.jsonl files")->required()->check(CLI::ExistingFile);
  report->add_flag("--json", report_json, "Emit JSON instead of a table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail_line("usage", e.what());
    return 2;
  }

  try {
    if (*train) return cmd_train(train_f);
    if (*prune) return cmd_prune(prune_f);
    if (*compact) return cmd_compact(compact_f);
    if (*eval) return cmd_eval(eval_f, split);
    if (*bench) return cmd_bench(bench_f);
    if (*report) return cmd_report(report_files, report_json);
  } catch (const std::exception& e) {
    fail_line(error_kind(e), e.what());
    return 1;
  }
  return 0;
}
