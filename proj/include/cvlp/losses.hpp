#pragma once

// Pairing probabilities and training objectives over a similarity matrix S
// of shape (B, B_T). Columns [0, B) are the real texts aligned with the B
// images; columns [B, B_T) are pseudo negative texts.

#include <cstddef>

#include "cvlp/tensor.hpp"

namespace cvlp::loss {

struct LossWeights {
  double alpha = 0.5;       // I2T vs T2I weight inside the contrastive loss
  double eta = 0.5;         // I2T vs T2I weight inside the distillation loss
  double lambda = 5.0;      // distillation weight in the overall loss
  double tau_d_old = 0.01;  // teacher temperature

  void validate() const;
};

struct BatchComposition {
  std::size_t real = 0;    // B
  std::size_t pseudo = 0;  // B-hat

  std::size_t total() const noexcept { return real + pseudo; }
  // Throws DimensionError unless S is (B, B + B-hat).
  void check(const ad::Tensor& scores) const;
};

// Floor applied to teacher probabilities inside the KL logarithm.
inline constexpr double kKlFloor = 1e-12;

// Row-wise softmax of S / tau over all B_T texts.
ad::Tensor prob_i2t(const ad::Tensor& scores, const ad::Tensor& inv_tau);
ad::Tensor prob_i2t(const ad::Tensor& scores, double tau);

// Column-wise softmax of the real-text block S[:, :B] / tau; entry (k, j) is
// the chance that text j pairs with image k.
ad::Tensor prob_t2i(const ad::Tensor& real_scores, const ad::Tensor& inv_tau);
ad::Tensor prob_t2i(const ad::Tensor& real_scores, double tau);

struct ContrastiveTerms {
  ad::Tensor total;  // alpha * i2t + (1 - alpha) * t2i
  ad::Tensor i2t;
  ad::Tensor t2i;
};

ContrastiveTerms contrastive_loss(const ad::Tensor& scores, const ad::Tensor& inv_tau,
                                  double alpha, const BatchComposition& comp);
ContrastiveTerms contrastive_loss(const ad::Tensor& scores, double tau, double alpha,
                                  const BatchComposition& comp);

struct DistillTerms {
  ad::Tensor total;  // eta * i2t + (1 - eta) * t2i
  ad::Tensor i2t;
  ad::Tensor t2i;
};

// KL(P_new || P_old) averaged over images (I2T, all B_T texts) and over real
// texts (T2I). Teacher scores are read as constants; no gradient reaches them.
DistillTerms distill_loss(const ad::Tensor& new_scores, const ad::Tensor& old_scores,
                          const ad::Tensor& inv_tau, double tau_d_old, double eta,
                          const BatchComposition& comp);
DistillTerms distill_loss(const ad::Tensor& new_scores, const ad::Tensor& old_scores, double tau,
                          double tau_d_old, double eta, const BatchComposition& comp);

// L = L_c + lambda * L_d. An undefined distill tensor (no teacher yet) counts as 0.
ad::Tensor overall_loss(const ad::Tensor& contrastive, const ad::Tensor& distill, double lambda);

}  // namespace cvlp::loss
