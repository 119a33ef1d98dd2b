#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cvlp/eval.hpp"
#include "cvlp/stream.hpp"
#include "cvlp/trainer.hpp"

namespace cvlp::exp {

struct ExperimentConfig {
  stream::GeneratorSpec generator;  // generator.seed is replaced by the run seed
  eval::SplitKind split = eval::SplitKind::class_incremental;
  std::uint32_t num_steps = 4;
  std::size_t samples_per_chunk = 500;
  train::TrainConfig train;  // train.strategy / train.seed are per run
  eval::EvalSettings eval;
  std::filesystem::path out_dir = "out";
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<double> memory_budgets{0.01, 0.05, 0.10, 0.20, 0.50};
  train::Strategy sweep_strategy = train::Strategy::incclip;

  void validate() const;
  bool operator==(const ExperimentConfig& other) const;
};

// INI text with sections [stream], [model], [train], [loss], [generation],
// [eval] and [experiment]. Reals are written with 17 significant digits so
// load(save(c)) == c.
std::string to_ini(const ExperimentConfig& c);
ExperimentConfig from_ini(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& file);
void save_config(const ExperimentConfig& c, const std::filesystem::path& file);

// 64-bit FNV-1a of to_ini.
std::uint64_t config_hash(const ExperimentConfig& c);

// The configuration one (strategy, seed) run actually uses.
ExperimentConfig run_config(const ExperimentConfig& c, train::Strategy strategy, std::uint64_t seed);

std::filesystem::path data_dir(const ExperimentConfig& c, std::uint64_t seed);
std::filesystem::path run_dir(const ExperimentConfig& c, train::Strategy strategy, std::uint64_t seed);
std::filesystem::path sweep_dir(const ExperimentConfig& c, double budget, std::uint64_t seed);
std::filesystem::path report_dir(const ExperimentConfig& c);

// Header line recorded with every run and report table.
std::string report_header(const ExperimentConfig& c);

// Generates and splits the seed's stream and writes chunk files plus a
// manifest under data_dir. Returns the manifest path.
std::filesystem::path cmd_gen(const ExperimentConfig& c, std::uint64_t seed);

std::vector<stream::PairChunk> load_or_generate(const ExperimentConfig& c, std::uint64_t seed);
eval::EvalSuite eval_suite(const ExperimentConfig& c, std::uint64_t seed);

struct TrainRequest {
  train::Strategy strategy = train::Strategy::incclip;
  std::uint64_t seed = 0;
  bool resume = false;
  std::optional<std::uint32_t> stop_after;
  std::optional<std::filesystem::path> out;  // overrides run_dir
  std::optional<double> memory_fraction;     // overrides train.memory_fraction
};

train::RunResult cmd_train(const ExperimentConfig& c, const TrainRequest& req);

// Runs (strategy, seed) unless its directory already holds a complete run of
// the same configuration.
train::RunResult ensure_run(const ExperimentConfig& c, const TrainRequest& req);

// Evaluates a saved model checkpoint against the seed's held-out suite as
// step `step`.
eval::EvalReport cmd_eval(const ExperimentConfig& c, const std::filesystem::path& checkpoint,
                          std::uint64_t seed, std::uint32_t step);

void cmd_sweep_memory(const ExperimentConfig& c);
// er, distill and incclip over every seed.
void cmd_ablate(const ExperimentConfig& c);

struct RunSummary {
  std::string label;  // strategy name, or memory budget for sweep runs
  std::uint64_t seed = 0;
  std::filesystem::path dir;
  bool complete = false;
  std::vector<eval::EvalReport> reports;
};

struct ReportOutput {
  std::filesystem::path final_table, curves, bwt, memory_sweep, manifest;
  std::vector<std::filesystem::path> skipped;  // incomplete runs
};

// Scans every run under out_dir and writes the four tables and the run
// manifest to report_dir. Throws when no complete run exists.
ReportOutput cmd_report(const ExperimentConfig& c);

std::vector<RunSummary> scan_runs(const ExperimentConfig& c);
std::vector<RunSummary> scan_sweep(const ExperimentConfig& c);

// Mean over seeds of the final-step average zero-shot accuracy of complete
// runs with the given label.
double mean_final_accuracy(const std::vector<RunSummary>& runs, const std::string& label);
double mean_final_bwt(const std::vector<RunSummary>& runs, const std::string& label);

std::string budget_label(double budget);

}  // namespace cvlp::exp
