#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cvlp/dual_encoder.hpp"
#include "cvlp/eval.hpp"
#include "cvlp/losses.hpp"
#include "cvlp/memory.hpp"
#include "cvlp/negtext.hpp"
#include "cvlp/optim.hpp"
#include "cvlp/stream.hpp"

namespace cvlp::train {

enum class Strategy { finetune, er, distill, incclip, joint };

std::string to_string(Strategy s);
// Throws ConfigError on an unknown name.
Strategy parse_strategy(const std::string& name);

// Rows and real-text columns the distillation loss covers: the whole mixed
// batch, or only the replayed samples (whole batch while memory is empty).
enum class DistillScope { batch, memory };

std::string to_string(DistillScope s);
DistillScope parse_distill_scope(const std::string& name);

struct Mechanisms {
  bool replay = false;
  bool distill = false;
  bool pseudo = false;
  bool all_seen = false;  // train on every chunk seen so far
};

Mechanisms mechanisms_of(Strategy s);

// Training defaults that differ from the module defaults: temperature fixed at
// tau_d_old (init = max = 0.01) and a larger inversion step size.
model::ModelDims default_train_dims();
negtext::GenConfig default_train_gen();

struct TrainConfig {
  Strategy strategy = Strategy::incclip;
  std::int32_t epochs_per_step = 5;
  std::size_t batch_size = 64;  // B, fresh + replayed
  loss::LossWeights weights;
  negtext::GenConfig gen = default_train_gen();  // gen.num_pseudo is B-hat
  ad::SgdSettings sgd;
  double base_lr = 0.1;
  double warmup_fraction = 0.1;  // of each step's iterations
  double gamma = 1.0;            // +inf disables norm clipping
  double max_grad_norm = 1.0;    // global gradient-norm cap; +inf disables
  double replay_fraction = 0.5;  // rho
  double memory_fraction = 0.1;  // buffer capacity as a share of the stream
  std::uint64_t seed = 0;
  bool joint_from_scratch = false;
  DistillScope distill_scope = DistillScope::memory;
  model::ModelDims dims = default_train_dims();

  void validate() const;
};

// One line of the loss trace.
struct IterationRecord {
  std::uint32_t step = 0;
  std::uint32_t epoch = 0;
  std::uint32_t iter = 0;  // within the step
  double l_c = 0.0;
  double l_d = 0.0;
  double l_g = 0.0;
  double lr = 0.0;
  double tau = 0.0;             // after the update
  double grad_norm = 0.0;       // global, before gradient clipping
  double max_norm_ratio = 0.0;  // max_l ||W_l|| / ||W_l||_init after clipping

  std::string to_json_line() const;
  static IterationRecord from_json_line(const std::string& line);
};

struct EpochLosses {
  double l_c = 0.0;
  double l_d = 0.0;
  double l_g = 0.0;
};

struct StepResult {
  std::uint32_t step = 0;
  std::filesystem::path checkpoint;
  std::vector<EpochLosses> epochs;
  double wall_seconds = 0.0;
};

// Mutable per-run state carried from step to step.
struct RunState {
  model::DualEncoder model;
  memory::MemoryBuffer buffer;
  std::optional<model::ModelSnapshot> snapshot;  // H_{t-1}

  RunState(model::DualEncoder m, memory::MemoryBuffer b) : model(std::move(m)), buffer(std::move(b)) {}
};

using TraceSink = std::function<void(const IterationRecord&)>;

struct BatchLoss {
  ad::Tensor total;        // L_c + lambda * L_d
  ad::Tensor contrastive;  // L_c
  ad::Tensor distill;      // L_d; undefined without a teacher
};

// Overall loss of one batch whose last `replayed` rows came from memory.
// `pseudo` may be empty.
BatchLoss batch_loss(const model::DualEncoder& model, const model::DualEncoder* teacher,
                     std::span<const stream::PairSample> batch, std::size_t replayed,
                     const model::TokenEmbeddings& pseudo, const TrainConfig& config);

// Trains on `fresh` (chunk D_t, or every chunk seen so far for joint) for
// epochs_per_step epochs, then offers D_t to the buffer and snapshots the
// model. A non-finite loss writes the last batch to `dump_file` (when set)
// and throws NumericError.
StepResult train_step(RunState& state, std::span<const stream::PairSample> fresh,
                      std::span<const stream::PairSample> chunk, std::uint32_t step,
                      const TrainConfig& config, const TraceSink& sink,
                      const std::filesystem::path& dump_file = {});

std::size_t memory_capacity(const TrainConfig& config, std::size_t stream_size);
RunState initial_state(const TrainConfig& config, std::size_t stream_size);

struct RunOptions {
  std::filesystem::path out_dir;    // required
  bool resume = false;
  std::optional<std::uint32_t> stop_after;  // stop once this many steps are done
  std::string header;               // written at the top of eval.jsonl's companion header file
};

struct RunResult {
  std::vector<StepResult> steps;
  std::vector<eval::EvalReport> reports;
  bool complete = false;
};

// Layout of a run directory.
struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path eval_log() const { return root / "eval.jsonl"; }
  std::filesystem::path trace_log() const { return root / "trace.jsonl"; }
  std::filesystem::path timing_log() const { return root / "timing.jsonl"; }
  std::filesystem::path state_file() const { return root / "state.json"; }
  std::filesystem::path header_file() const { return root / "header.txt"; }
  std::filesystem::path dump_file() const { return root / "failed_batch.bin"; }
  std::filesystem::path model_checkpoint(std::uint32_t step) const;
  std::filesystem::path buffer_checkpoint(std::uint32_t step) const;
};

// Number of steps recorded as finished in a run directory (0 when absent).
std::uint32_t completed_steps(const std::filesystem::path& run_dir);

// Sequential steps with evaluation after each. With resume set, restarts after
// the last completed step from its model and buffer checkpoints; logs are cut
// back to that step first. Everything finished is on disk before an error
// propagates.
RunResult run_stream(std::span<const stream::PairChunk> chunks, const eval::EvalSuite& suite,
                     const TrainConfig& config, const RunOptions& options);

// The EvalReports recorded in a run directory, in step order.
std::vector<eval::EvalReport> read_reports(const std::filesystem::path& run_dir);
std::vector<IterationRecord> read_trace(const std::filesystem::path& run_dir);

}  // namespace cvlp::train
