#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "metadiffub/checkpoint.hpp"
#include "metadiffub/commands.hpp"
#include "metadiffub/config.hpp"
#include "metadiffub/errors.hpp"

using namespace metadiffub;

namespace {

struct ConfigFlags {
  std::string config_path;
  std::optional<std::int64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<std::string> task;
  std::optional<std::size_t> T;
  std::optional<std::size_t> steps;
  std::optional<std::size_t> mbr;
  std::optional<std::size_t> epochs;
  bool fixed_sqrt = false;
  std::vector<std::string> assignments;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "key=value config file");
    app->add_option("--seed", seed, "root seed");
    app->add_option("--threads", threads, "worker cap");
    app->add_option("--task", task, "synthetic task: copy, reverse or sort");
    app->add_option("--T", T, "diffusion steps");
    app->add_option("--steps", steps, "generation steps (0 uses T)");
    app->add_option("--mbr", mbr, "MBR candidate count");
    app->add_option("--epochs", epochs, "exploiter optimizer steps");
    app->add_flag("--fixed-sqrt", fixed_sqrt, "use the fixed sqrt schedule instead of a scheduler");
    app->add_option("--set", assignments, "config override key=value (repeatable)");
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (!config_path.empty()) cfg.load_file(config_path);
    if (seed) cfg.set("seed", std::to_string(*seed));
    if (threads) cfg.set("threads", std::to_string(*threads));
    if (task) cfg.set("data.task", *task);
    if (T) cfg.set("diffusion.T", std::to_string(*T));
    if (steps) cfg.set("generate.steps", std::to_string(*steps));
    if (mbr) cfg.set("generate.mbr", std::to_string(*mbr));
    if (epochs) cfg.set("train.epochs", std::to_string(*epochs));
    if (fixed_sqrt) cfg.set("train.fixed_sqrt", "true");
    for (const auto& a : assignments) cfg.set_assignment(a);
    return cfg;
  }
};

TokenizeMode mode_of(const RunConfig& cfg) { return parse_tokenize_mode(cfg.get("data.tokenizer")); }

std::uint64_t seed_of(const RunConfig& cfg) { return static_cast<std::uint64_t>(cfg.get_int("seed")); }

void write_json(const nlohmann::json& obj, const std::string& path) {
  if (path.empty()) {
    std::cout << obj.dump(2) << '\n';
    return;
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << obj.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scheduler-exploiter diffusion for sequence-to-sequence generation"};
  app.require_subcommand(1);

  ConfigFlags train_flags;
  std::string train_out;
  auto* train = app.add_subcommand("train", "meta-train an exploiter and its scheduler");
  train_flags.attach(train);
  train->add_option("--out", train_out, "run directory")->required();

  ConfigFlags data_flags;
  std::string data_out;
  auto* make_data = app.add_subcommand("make-data", "write a synthetic train/valid corpus");
  data_flags.attach(make_data);
  make_data->add_option("--out", data_out, "output directory")->required();

  ConfigFlags gen_flags;
  std::string gen_exploiter, gen_scheduler, gen_src, gen_out;
  auto* gen = app.add_subcommand("generate", "generate with MBR selection");
  gen_flags.attach(gen);
  gen->add_option("--exploiter", gen_exploiter, "exploiter checkpoint")->required();
  gen->add_option("--scheduler", gen_scheduler, "scheduler checkpoint");
  gen->add_option("--src", gen_src, "sources: JSONL with src (and optional trg) or plain text")->required();
  gen->add_option("--out", gen_out, "output JSONL")->required();

  ConfigFlags eval_flags;
  std::string eval_gen, eval_ref, eval_table, eval_rank_csv, eval_out;
  std::vector<std::string> eval_systems;
  auto* evaluate = app.add_subcommand("evaluate", "score generations or rank systems");
  eval_flags.attach(evaluate);
  evaluate->add_option("--gen", eval_gen, "generation file");
  evaluate->add_option("--ref", eval_ref, "reference file");
  evaluate->add_option("--system", eval_systems, "name=generation file (repeatable)");
  evaluate->add_option("--table", eval_table, "wide CSV of per-method metric values");
  evaluate->add_option("--rank-csv", eval_rank_csv, "write method,metric,value,rank CSV");
  evaluate->add_option("--out", eval_out, "JSON report path (stdout when omitted)");

  ConfigFlags diff_flags;
  std::string diff_gen, diff_ref, diff_scheduler, diff_out;
  std::optional<std::size_t> diff_k;
  auto* difficulty = app.add_subcommand("analyze-difficulty", "average schedules of hard and easy items");
  diff_flags.attach(difficulty);
  difficulty->add_option("--gen", diff_gen, "generation JSONL")->required();
  difficulty->add_option("--ref", diff_ref, "reference file when the generations carry no trg");
  difficulty->add_option("--scheduler", diff_scheduler, "scheduler checkpoint")->required();
  difficulty->add_option("--K", diff_k, "bucket size");
  difficulty->add_option("--out", diff_out, "CSV path")->required();

  ConfigFlags pnp_flags;
  std::string pnp_scheduler, pnp_exploiter, pnp_src, pnp_out;
  auto* pnp = app.add_subcommand("plug-and-play", "schedule another exploiter's inference noise");
  pnp_flags.attach(pnp);
  pnp->add_option("--scheduler", pnp_scheduler, "scheduler checkpoint")->required();
  pnp->add_option("--exploiter", pnp_exploiter, "exploiter checkpoint")->required();
  pnp->add_option("--src", pnp_src, "sources with optional references")->required();
  pnp->add_option("--out", pnp_out, "output directory")->required();

  ConfigFlags export_flags;
  std::string export_scheduler, export_src, export_out;
  auto* exporter = app.add_subcommand("export-schedule", "write greedy per-sentence schedules as CSV");
  export_flags.attach(exporter);
  exporter->add_option("--scheduler", export_scheduler, "scheduler checkpoint")->required();
  exporter->add_option("--src", export_src, "sources")->required();
  exporter->add_option("--out", export_out, "CSV path")->required();

  ConfigFlags init_flags;
  std::string init_exploiter, init_out, init_constant;
  auto* init = app.add_subcommand("init-scheduler", "write an untrained or constant scheduler");
  init_flags.attach(init);
  init->add_option("--exploiter", init_exploiter, "exploiter checkpoint supplying vocabulary and T")->required();
  init->add_option("--constant", init_constant, "true or false: emit that instruction at every step");
  init->add_option("--out", init_out, "checkpoint path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      const RunConfig cfg = train_flags.resolve();
      const MetaTrainResult result = cmd_train(cfg, train_out);
      if (!result.evals.empty()) {
        std::cout << "held-out BLEU " << result.evals.front().bleu << " -> " << result.evals.back().bleu << '\n';
      }
      std::cout << "run written to " << train_out << '\n';
    } else if (*make_data) {
      cmd_make_data(data_flags.resolve(), data_out);
    } else if (*gen) {
      const RunConfig cfg = gen_flags.resolve();
      GenerateRequest req;
      req.exploiter = gen_exploiter;
      if (!gen_scheduler.empty()) req.scheduler = gen_scheduler;
      req.fixed_sqrt = gen_flags.fixed_sqrt;
      req.sources = gen_src;
      req.out = gen_out;
      req.mbr = cfg.get_size("generate.mbr");
      req.steps = cfg.get_size("generate.steps");
      req.seed = seed_of(cfg);
      req.mode = mode_of(cfg);
      cmd_generate(req);
    } else if (*evaluate) {
      const RunConfig cfg = eval_flags.resolve();
      std::ofstream rank_file;
      std::ostream* rank_csv = nullptr;
      if (!eval_rank_csv.empty()) {
        rank_file.open(eval_rank_csv);
        rank_csv = &rank_file;
      }
      if (!eval_table.empty()) {
        write_json(cmd_rank_table(eval_table, rank_csv), eval_out);
      } else if (!eval_systems.empty()) {
        if (eval_ref.empty()) throw ConfigError("--system needs --ref");
        std::vector<std::pair<std::string, std::filesystem::path>> systems;
        for (const auto& s : eval_systems) {
          const auto eq = s.find('=');
          if (eq == std::string::npos) throw ConfigError("--system expects name=path, got '" + s + "'");
          systems.emplace_back(s.substr(0, eq), s.substr(eq + 1));
        }
        write_json(cmd_evaluate_systems(systems, eval_ref, mode_of(cfg), rank_csv), eval_out);
      } else {
        if (eval_gen.empty() || eval_ref.empty()) throw ConfigError("evaluate needs --gen and --ref, --system or --table");
        write_json(cmd_evaluate(eval_gen, eval_ref, mode_of(cfg)), eval_out);
      }
    } else if (*difficulty) {
      RunConfig cfg = diff_flags.resolve();
      if (diff_k) cfg.set("analysis.K", std::to_string(*diff_k));
      auto items = read_generations(diff_gen, mode_of(cfg));
      if (!diff_ref.empty()) {
        const auto refs = read_references(diff_ref, mode_of(cfg));
        if (refs.size() != items.size()) throw ContractError("reference count does not match the generations");
        for (std::size_t i = 0; i < items.size(); ++i) items[i].ref = refs[i];
      }
      const Scheduler scheduler = load_scheduler(diff_scheduler);
      const BaseSchedule base = build_sqrt_schedule(scheduler.config.T, cfg.get_double("diffusion.s"));
      const DifficultyReport report = analyze_difficulty(items, scheduler, base, cfg.get_size("analysis.K"));
      std::ofstream out(diff_out);
      write_difficulty_csv(out, report);
      std::cout << nlohmann::json{{"K", report.hard.size()},
                                  {"hard_mean_bleu", report.hard_bleu},
                                  {"easy_mean_bleu", report.easy_bleu}}
                       .dump(2)
                << '\n';
    } else if (*pnp) {
      const RunConfig cfg = pnp_flags.resolve();
      std::string scheduler_tag, exploiter_tag;
      const Scheduler scheduler = load_scheduler(pnp_scheduler, &scheduler_tag);
      const Exploiter exploiter = load_exploiter(pnp_exploiter, &exploiter_tag);
      const auto sources = read_sources(pnp_src, mode_of(cfg));
      PlugAndPlayReport report = plug_and_play(scheduler, exploiter, sources, cfg.get_size("generate.mbr"),
                                               seed_of(cfg), cfg.get_size("generate.steps"));
      report.scheduler_tag = scheduler_tag;
      report.exploiter_tag = exploiter_tag;
      const std::filesystem::path dir = pnp_out;
      std::filesystem::create_directories(dir);
      write_generations(dir / "scheduled.jsonl", report.scheduled, mode_of(cfg));
      write_generations(dir / "baseline.jsonl", report.baseline, mode_of(cfg));
      std::ofstream csv(dir / "report.csv");
      write_plug_and_play_csv(csv, report);
      std::cout << "weights unchanged: " << (report.weights_unchanged ? "yes" : "no") << '\n';
      if (!report.weights_unchanged) return 1;
    } else if (*exporter) {
      const RunConfig cfg = export_flags.resolve();
      const Scheduler scheduler = load_scheduler(export_scheduler);
      const BaseSchedule base = build_sqrt_schedule(scheduler.config.T, cfg.get_double("diffusion.s"));
      std::vector<TokenList> srcs;
      for (const auto& p : read_sources(export_src, mode_of(cfg))) srcs.push_back(p.src);
      std::ofstream out(export_out);
      write_schedule_export(out, greedy_schedules(scheduler, srcs, base));
    } else if (*init) {
      const RunConfig cfg = init_flags.resolve();
      std::string tag;
      const Exploiter exploiter = load_exploiter(init_exploiter, &tag);
      SchedulerConfig sc = scheduler_config(cfg);
      sc.T = exploiter.config.T;
      sc.dim = exploiter.config.dim;
      Scheduler scheduler;
      if (init_constant.empty()) {
        RngStream rng = RngStream(seed_of(cfg)).fork(1);
        scheduler = init_scheduler(sc, exploiter.vocab, rng);
      } else if (init_constant == "true" || init_constant == "false") {
        scheduler = constant_scheduler(sc, exploiter.vocab, init_constant == "true");
        tag = "constant-" + init_constant;
      } else {
        throw ConfigError("--constant expects true or false");
      }
      save_scheduler(init_out, scheduler, tag);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
