#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cvlp/optim.hpp"
#include "cvlp/stream.hpp"
#include "cvlp/tensor.hpp"

namespace cvlp::model {

enum class Activation : std::uint8_t { relu = 0, gelu = 1 };

struct ModelDims {
  std::int32_t d_img = 32;
  std::int32_t d_tok = 32;
  std::int32_t d_emb = 16;
  std::int32_t hidden = 64;
  std::int32_t vocab_size = 200;
  Activation activation = Activation::gelu;
  double init_std = 0.02;
  // N(0, 1/fan_in) weight matrices and N(0, 1) token embeddings instead of
  // init_std everywhere.
  bool fan_in_init = true;
  double init_tau = 0.07;
  double min_tau = 0.01;
  // Upper cap; an uncapped tau drifts up while embeddings are still random
  // and the flattened softmax then stalls learning.
  double max_tau = 0.1;

  bool operator==(const ModelDims&) const = default;
};

// Token ids of a batch of sequences laid end to end.
struct TokenBatch {
  std::vector<std::int32_t> ids;
  std::vector<std::size_t> offsets{0};  // sequence s is [offsets[s], offsets[s+1])

  void push(std::span<const std::int32_t> seq);
  std::size_t count() const noexcept { return offsets.size() - 1; }
  static TokenBatch of(std::span<const stream::PairSample> samples);
};

// Token-embedding rows for a batch of sequences, in the layout of TokenBatch.
struct TokenEmbeddings {
  ad::Tensor rows;  // (total tokens, d_tok)
  std::vector<std::size_t> offsets{0};

  std::size_t count() const noexcept { return offsets.size() - 1; }
};

// (B, d_img) constant tensor of the samples' image features.
ad::Tensor image_matrix(std::span<const stream::PairSample> samples);

// Visual MLP f and pooled text encoder g (embedding table, mean pool, MLP)
// producing unit-norm embeddings in a shared space, plus a learnable
// log inverse temperature.
class DualEncoder {
 public:
  DualEncoder(const ModelDims& dims, std::uint64_t seed);
  // Tensors are shared handles, so implicit copies would alias weights; use copy().
  DualEncoder(const DualEncoder&) = delete;
  DualEncoder& operator=(const DualEncoder&) = delete;
  DualEncoder(DualEncoder&&) = default;
  DualEncoder& operator=(DualEncoder&&) = default;

  const ModelDims& dims() const noexcept { return dims_; }

  ad::Tensor encode_images(const ad::Tensor& image_feats) const;
  ad::Tensor encode_images(std::span<const stream::PairSample> samples) const {
    return encode_images(image_matrix(samples));
  }
  TokenEmbeddings embed_tokens(const TokenBatch& tokens) const;
  ad::Tensor encode_text_from_embeddings(const TokenEmbeddings& emb) const;
  ad::Tensor encode_text(const TokenBatch& tokens) const {
    return encode_text_from_embeddings(embed_tokens(tokens));
  }
  // Pooled (pre-MLP) token embeddings, one row per sequence.
  ad::Tensor pooled(const TokenEmbeddings& emb) const;

  // 1/tau as a (1,1) tensor sharing the parameter's graph.
  ad::Tensor logit_scale() const;
  double tau() const;
  // Enforces min_tau <= tau <= max_tau. Call after every optimizer step.
  void clamp_temperature();

  std::vector<ad::NamedParameter>& parameters() noexcept { return params_; }
  const std::vector<ad::NamedParameter>& parameters() const noexcept { return params_; }
  const ad::Tensor& parameter(const std::string& name) const;
  const ad::Tensor& embedding_table() const { return params_[kEmbed].tensor; }
  // Frobenius norms at construction, one per parameter (0 for non-matrices).
  const std::vector<double>& init_norms() const noexcept { return init_norms_; }

  // Deep copy. A frozen copy has requires_grad=false everywhere.
  DualEncoder copy(bool trainable) const;
  bool trainable() const;

  void save(const std::filesystem::path& file) const;
  static DualEncoder load(const std::filesystem::path& file);

  bool same_weights(const DualEncoder& other) const;

 private:
  DualEncoder() = default;
  ad::Tensor mlp(const ad::Tensor& x, std::size_t w1) const;

  static constexpr std::size_t kImgW1 = 0, kTxtW1 = 5, kEmbed = 4, kLogitScale = 9;

  ModelDims dims_;
  std::vector<ad::NamedParameter> params_;
  std::vector<double> init_norms_;
};

// Frozen copy of a model at the end of a training step.
class ModelSnapshot {
 public:
  ModelSnapshot(const DualEncoder& model, std::uint32_t step)
      : model_(model.copy(false)), step_(step) {}

  const DualEncoder& model() const noexcept { return model_; }
  std::uint32_t step() const noexcept { return step_; }
  ModelSnapshot snapshot() const { return ModelSnapshot(model_, step_); }

 private:
  DualEncoder model_;
  std::uint32_t step_;
};

// s_ij = u_i . v_j for unit-norm rows.
ad::Tensor similarity(const ad::Tensor& image_emb, const ad::Tensor& text_emb);

}  // namespace cvlp::model
