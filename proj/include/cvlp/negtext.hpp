#pragma once

// Hard negative pseudo texts by inversion of a frozen text encoder in
// token-embedding space.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cvlp/dual_encoder.hpp"
#include "cvlp/tensor.hpp"

namespace cvlp::negtext {

struct GenConfig {
  double s_min = 0.2;
  double s_max = 0.6;
  std::int32_t gen_iters = 50;
  double gen_lr = 0.5;
  std::int32_t num_pseudo = 32;  // B-hat
  // Penalize only the anchor image's score instead of every image in the batch.
  bool anchor_only = false;
  // Invert the previous-step snapshot when one exists (live model otherwise).
  bool use_snapshot = true;
  std::int32_t max_retries = 3;

  void validate() const;
};

struct PseudoText {
  ad::Tensor embeddings;  // (seq_len, d_tok), constant
  std::size_t anchor = 0;   // i
  std::size_t partner = 0;  // j
  double beta = 0.0;
  double anchor_score = 0.0;        // s_ik after optimization
  std::vector<double> scores;       // s_ik against every batch image
  double init_loss = 0.0;           // band loss at initialization
  double final_loss = 0.0;          // band loss returned
};

struct GenResult {
  std::vector<PseudoText> texts;
  double mean_init_loss = 0.0;
  double mean_final_loss = 0.0;
  std::size_t retried = 0;  // texts that needed at least one lr halving
};

// beta * e_i + (1 - beta) * e_j for equal-shape (L, d_tok) sequences.
ad::Tensor init_pseudo(const ad::Tensor& e_i, const ad::Tensor& e_j, double beta);

// Mean over scores of max(0, s_min - s) + max(0, s - s_max).
double gen_loss(std::span<const double> scores, double s_min, double s_max);

// Per-row band loss of a (K, B) score tensor, as a (K, 1) tensor.
ad::Tensor gen_loss_rows(const ad::Tensor& scores, double s_min, double s_max);

// Sequence s of emb, padded with pad_row or truncated to length len.
ad::Tensor fit_length(const model::TokenEmbeddings& emb, std::size_t s, std::size_t len,
                      std::span<const double> pad_row);

// Lower median of the sequence lengths.
std::size_t median_length(const model::TokenEmbeddings& emb);

// Builds num_pseudo texts against `generator` (must be frozen). Text k draws
// (i, j, beta) from an RNG seeded by (seed, k), so results do not depend on
// how the K optimizations are scheduled. memory_text holds the token
// embeddings of the batch texts under the same generator.
GenResult generate_batch(const model::DualEncoder& generator, const ad::Tensor& image_feats,
                         const model::TokenEmbeddings& memory_text, const GenConfig& config,
                         std::uint64_t seed);

// Stacks pseudo texts into the TokenEmbeddings layout the text encoder takes.
model::TokenEmbeddings stack(std::span<const PseudoText> texts);

// Debug trace: magic, version, step, count, then per text the embedding
// matrix, anchor, partner, beta and scores.
void save_trace(const std::filesystem::path& file, std::uint32_t step,
                std::span<const PseudoText> texts);
std::vector<PseudoText> load_trace(const std::filesystem::path& file, std::uint32_t* step = nullptr);

}  // namespace cvlp::negtext
