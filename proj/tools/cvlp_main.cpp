// cvlp: synthetic continual vision-language pretraining runner.
//
//   cvlp gen --config exp.ini [--seed S]
//   cvlp train --config exp.ini --strategy incclip --seed S [--resume] [--stop-after N]
//   cvlp eval --config exp.ini --checkpoint run/checkpoints/model_step_003.bin --seed S --step 3
//   cvlp report --config exp.ini
//   cvlp sweep-memory --config exp.ini
//   cvlp ablate --config exp.ini
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

#include <CLI11.hpp>
#include <iostream>

#include "cvlp/errors.hpp"
#include "cvlp/experiment.hpp"

namespace {

using namespace cvlp;

exp::ExperimentConfig load(const std::string& path, const std::string& out) {
  auto c = path.empty() ? exp::ExperimentConfig{} : exp::load_config(path);
  if (!out.empty()) c.out_dir = out;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual vision-language contrastive pretraining on synthetic streams"};
  app.require_subcommand(1);

  std::string config_path, out_dir, strategy_name = "incclip", checkpoint;
  std::uint64_t seed = 0;
  bool seed_given = false, resume = false;
  std::uint32_t stop_after = 0, step = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment INI file (defaults apply when omitted)");
    sub->add_option("--out", out_dir, "output root, overriding [experiment] out_dir");
  };

  auto* gen = app.add_subcommand("gen", "generate and split the synthetic stream");
  add_common(gen);
  gen->add_option("--seed", seed, "data seed (default: every configured seed)");

  auto* train = app.add_subcommand("train", "train one strategy on one seed");
  add_common(train);
  train->add_option("--strategy", strategy_name, "finetune, er, distill, incclip or joint");
  train->add_option("--seed", seed, "run seed");
  train->add_flag("--resume", resume, "continue after the last completed step");
  auto* stop_opt = train->add_option("--stop-after", stop_after, "stop once this many steps are done");

  auto* ev = app.add_subcommand("eval", "evaluate a model checkpoint");
  add_common(ev);
  ev->add_option("--checkpoint", checkpoint, "model checkpoint file")->required();
  ev->add_option("--seed", seed, "seed of the held-out world");
  ev->add_option("--step", step, "stream step the checkpoint belongs to");

  auto* report = app.add_subcommand("report", "aggregate completed runs into tables");
  add_common(report);

  auto* sweep = app.add_subcommand("sweep-memory", "run the memory-budget sweep over all seeds");
  add_common(sweep);

  auto* ablate = app.add_subcommand("ablate", "run er, distill and incclip over all seeds");
  add_common(ablate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  seed_given = gen->count("--seed") > 0;

  try {
    const auto cfg = load(config_path, out_dir);
    if (gen->parsed()) {
      const auto seeds = seed_given ? std::vector<std::uint64_t>{seed} : cfg.seeds;
      for (auto s : seeds) std::cout << exp::cmd_gen(cfg, s).string() << "\n";
    } else if (train->parsed()) {
      exp::TrainRequest req;
      req.strategy = train::parse_strategy(strategy_name);
      req.seed = seed;
      req.resume = resume;
      if (stop_opt->count() > 0) req.stop_after = stop_after;
      const auto r = exp::cmd_train(cfg, req);
      for (const auto& rep : r.reports) std::cout << rep.to_json_line() << "\n";
      if (!r.complete) std::cerr << "run stopped before the last step\n";
    } else if (ev->parsed()) {
      std::cout << exp::cmd_eval(cfg, checkpoint, seed, step).to_json_line() << "\n";
    } else if (report->parsed()) {
      const auto out = exp::cmd_report(cfg);
      for (const auto& p : out.skipped) std::cerr << "skipped incomplete run " << p.string() << "\n";
      std::cout << out.final_table.string() << "\n"
                << out.curves.string() << "\n"
                << out.bwt.string() << "\n"
                << out.memory_sweep.string() << "\n";
    } else if (sweep->parsed()) {
      exp::cmd_sweep_memory(cfg);
    } else if (ablate->parsed()) {
      exp::cmd_ablate(cfg);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
