#include "cvlp/losses.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "cvlp/errors.hpp"
#include "cvlp/ops.hpp"

namespace cvlp::loss {

namespace {

void check_finite(const ad::Tensor& t, const char* what) {
  for (double x : t.data()) {
    if (!std::isfinite(x)) throw NumericError(std::string(what) + " contains non-finite values");
  }
}

ad::Tensor inverse(double tau) {
  if (!(tau > 0.0)) throw ContractError("temperature must be positive");
  return ad::Tensor::scalar(1.0 / tau);
}

// log max(softmax(scores / tau, axis), floor) as a constant tensor.
ad::Tensor teacher_log_probs(const ad::Tensor& scores, double tau, int axis) {
  auto lp = ad::log_softmax_axis(ad::scale(scores.detach(), 1.0 / tau), axis).detach();
  const double floor = std::log(kKlFloor);
  for (double& x : lp.mutable_data()) x = std::max(x, floor);
  return lp;
}

// Sum of p * (log p - log q) over the softmax axis, averaged over the other.
ad::Tensor mean_kl(const ad::Tensor& student_logits, const ad::Tensor& teacher_logp, int axis) {
  auto logp = ad::log_softmax_axis(student_logits, axis);
  auto p = ad::exp(logp);
  const double count = static_cast<double>(axis == 1 ? student_logits.rows() : student_logits.cols());
  return ad::scale(ad::sum(ad::mul(p, ad::sub(logp, teacher_logp))), 1.0 / count);
}

}  // namespace

void LossWeights::validate() const {
  if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must lie in [0, 1]");
  if (eta < 0.0 || eta > 1.0) throw ConfigError("eta must lie in [0, 1]");
  if (lambda < 0.0) throw ConfigError("lambda must be non-negative");
  if (!(tau_d_old > 0.0)) throw ConfigError("tau_d_old must be positive");
}

void BatchComposition::check(const ad::Tensor& scores) const {
  if (real == 0) throw ContractError("batch has no real pairs");
  if (scores.rows() != real || scores.cols() != total()) {
    throw DimensionError("score matrix " + scores.shape().str() + " does not match batch (" +
                         std::to_string(real) + ", " + std::to_string(total()) + ")");
  }
}

ad::Tensor prob_i2t(const ad::Tensor& scores, const ad::Tensor& inv_tau) {
  check_finite(scores, "score matrix");
  return ad::softmax_axis(ad::mul(scores, inv_tau), 1);
}

ad::Tensor prob_i2t(const ad::Tensor& scores, double tau) {
  return prob_i2t(scores, inverse(tau));
}

ad::Tensor prob_t2i(const ad::Tensor& real_scores, const ad::Tensor& inv_tau) {
  check_finite(real_scores, "score matrix");
  return ad::softmax_axis(ad::mul(real_scores, inv_tau), 0);
}

ad::Tensor prob_t2i(const ad::Tensor& real_scores, double tau) {
  return prob_t2i(real_scores, inverse(tau));
}

ContrastiveTerms contrastive_loss(const ad::Tensor& scores, const ad::Tensor& inv_tau,
                                  double alpha, const BatchComposition& comp) {
  comp.check(scores);
  check_finite(scores, "score matrix");
  const auto logits = ad::mul(scores, inv_tau);
  // Ground truth of image i is text i, so the positives sit on the diagonal.
  auto i2t = ad::neg(ad::mean(ad::diagonal(ad::log_softmax_axis(logits, 1))));
  const auto real = comp.pseudo == 0 ? logits : ad::slice_cols(logits, 0, comp.real);
  auto t2i = ad::neg(ad::mean(ad::diagonal(ad::log_softmax_axis(real, 0))));
  auto total = ad::add(ad::scale(i2t, alpha), ad::scale(t2i, 1.0 - alpha));
  return {std::move(total), std::move(i2t), std::move(t2i)};
}

ContrastiveTerms contrastive_loss(const ad::Tensor& scores, double tau, double alpha,
                                  const BatchComposition& comp) {
  return contrastive_loss(scores, inverse(tau), alpha, comp);
}

DistillTerms distill_loss(const ad::Tensor& new_scores, const ad::Tensor& old_scores,
                          const ad::Tensor& inv_tau, double tau_d_old, double eta,
                          const BatchComposition& comp) {
  comp.check(new_scores);
  comp.check(old_scores);
  check_finite(new_scores, "student scores");
  check_finite(old_scores, "teacher scores");
  if (!(tau_d_old > 0.0)) throw ContractError("teacher temperature must be positive");

  const auto logits = ad::mul(new_scores, inv_tau);
  auto i2t = mean_kl(logits, teacher_log_probs(old_scores, tau_d_old, 1), 1);

  const bool all_real = comp.pseudo == 0;
  const auto real_logits = all_real ? logits : ad::slice_cols(logits, 0, comp.real);
  const auto real_old = all_real ? old_scores : ad::slice_cols(old_scores.detach(), 0, comp.real);
  auto t2i = mean_kl(real_logits, teacher_log_probs(real_old, tau_d_old, 0), 0);

  auto total = ad::add(ad::scale(i2t, eta), ad::scale(t2i, 1.0 - eta));
  return {std::move(total), std::move(i2t), std::move(t2i)};
}

DistillTerms distill_loss(const ad::Tensor& new_scores, const ad::Tensor& old_scores, double tau,
                          double tau_d_old, double eta, const BatchComposition& comp) {
  return distill_loss(new_scores, old_scores, inverse(tau), tau_d_old, eta, comp);
}

ad::Tensor overall_loss(const ad::Tensor& contrastive, const ad::Tensor& distill, double lambda) {
  if (lambda < 0.0) throw ContractError("lambda must be non-negative");
  if (!distill.defined()) return contrastive;
  return ad::add(contrastive, ad::scale(distill, lambda));
}

}  // namespace cvlp::loss
