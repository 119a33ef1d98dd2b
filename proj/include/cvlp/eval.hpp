#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cvlp/dual_encoder.hpp"
#include "cvlp/stream.hpp"

namespace cvlp::eval {

// Token sequences naming each class; class c's prompts are prompts[c].
struct PromptSet {
  std::vector<std::vector<std::vector<std::int32_t>>> prompts;

  std::size_t num_classes() const noexcept { return prompts.size(); }
  void validate() const;
};

// `variants` prompts per class: all of the class's content tokens followed by
// v shared tokens for variant v = 0..variants-1.
PromptSet make_prompts(const stream::GeneratorSpec& spec, std::int32_t variants = 4);

struct ZeroShotResult {
  std::vector<std::int32_t> predictions;
  double accuracy = 0.0;
};

// Unit-normalized mean of each class's prompt embeddings, (C, d_emb).
ad::Tensor class_embeddings(const model::DualEncoder& model, const PromptSet& prompts);

// Argmax over columns with ties to the lowest class id.
std::vector<std::int32_t> argmax_classes(const ad::Tensor& scores);

ZeroShotResult zero_shot_classify(const model::DualEncoder& model,
                                  std::span<const stream::PairSample> samples,
                                  const PromptSet& prompts);

inline constexpr std::int32_t kDefaultKsArr[] = {1, 5, 10};
inline constexpr std::span<const std::int32_t> kDefaultKs{kDefaultKsArr};

struct RecallResult {
  std::vector<std::int32_t> ks;
  std::vector<double> i2t;
  std::vector<double> t2i;
};

// Rank of the true match is the number of candidates scoring strictly higher
// plus equal-scoring candidates with a lower index.
RecallResult recall_from_scores(const ad::Tensor& scores, std::span<const std::int32_t> ks);
RecallResult retrieval_recall(const model::DualEncoder& model,
                              std::span<const stream::PairSample> samples,
                              std::span<const std::int32_t> ks = kDefaultKs);

// Lower-triangular A with A[i][j] the accuracy of model i on chunk j's
// held-out samples, j <= i.
using AccuracyMatrix = std::vector<std::vector<double>>;

std::vector<double> chunk_accuracy_row(const model::DualEncoder& model,
                                       std::span<const std::vector<stream::PairSample>> chunk_eval,
                                       std::size_t step, const PromptSet& prompts);
AccuracyMatrix chunk_accuracy_matrix(std::span<const model::ModelSnapshot* const> snapshots,
                                     std::span<const std::vector<stream::PairSample>> chunk_eval,
                                     const PromptSet& prompts);

// (1/(N-1)) sum_{i=2..N} (1/i) sum_{j=1..i} (A[i][j] - A[j][j]), 1-based.
double bwt(const AccuracyMatrix& a);

enum class SplitKind { class_incremental, instance_incremental };

struct EvalSettings {
  std::int32_t num_datasets = 2;
  std::size_t per_class = 50;       // balanced held-out samples per class
  std::size_t retrieval_size = 200;
  std::int32_t prompt_variants = 4;
};

// Held-out data for the whole run.
struct EvalSuite {
  PromptSet prompts;
  std::vector<std::vector<stream::PairSample>> datasets;    // zero-shot sets
  std::vector<stream::PairSample> retrieval;                // index-aligned pairs
  std::vector<std::vector<stream::PairSample>> chunk_eval;  // per-step partition of datasets[0]
};

// Held-out datasets use generator streams 1..K over the training world.
EvalSuite build_eval_suite(const stream::GeneratorSpec& spec, SplitKind split,
                           std::uint32_t num_steps, const EvalSettings& settings);

struct EvalReport {
  std::uint32_t step = 0;
  std::vector<double> zero_shot;
  double zero_shot_avg = 0.0;
  RecallResult recall;
  std::vector<double> chunk_row;
  std::optional<double> bwt;

  std::string to_json_line() const;
  static EvalReport from_json_line(const std::string& line);
};

// Evaluates a model after step `step`. `history` holds the accumulated rows
// for earlier steps; when `final_step` is set, BWT over history + this row is
// included.
EvalReport evaluate(const model::DualEncoder& model, const EvalSuite& suite, std::uint32_t step,
                    const AccuracyMatrix& history, bool final_step);

}  // namespace cvlp::eval
